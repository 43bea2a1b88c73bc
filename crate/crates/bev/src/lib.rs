//! BEV layout geometry: camera rigs, the direction-vector camera pose
//! maps, box and road projection, and the 19-channel control image
//! rasterizer, with an independent scalar pinhole oracle for tests.

mod error;
mod export;
mod layout;
mod project;
mod raster;
pub mod reference;
mod rig;

pub use error::{BevError, Result};
pub use export::{
    channel_to_rgb_byte, control_image_from_tensor_file, control_image_to_png,
    control_image_to_tensor_file,
};
pub use layout::{
    BevLayoutSequence, BoxInstance, LayoutFrame, Polyline, PolylineKind, SceneAttributes,
};
pub use project::{
    camera_ray_direction, camera_ray_image, project_box, project_point, ProjectedBox, NEAR_PLANE,
};
pub use raster::{
    control_batch_tensor, depth_bin, palette, render_sequence, rasterize_layout, ControlImage,
    PaletteEntry, BOX_CHANNELS, CONTROL_CHANNELS, DEPTH_BIN_START, DEPTH_BIN_WIDTH,
    DEPTH_CHANNELS, POSE_CHANNELS, ROAD_CHANNELS,
};
pub use rig::{extrinsic_from_yaw, CameraView};

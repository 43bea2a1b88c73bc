//! Viewable exports of control images: a review PNG laying the channel
//! groups side by side, and raw tensor files for fixtures.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{BevError, Result};
use crate::raster::{ControlImage, BOX_CHANNELS, DEPTH_CHANNELS, POSE_CHANNELS, ROAD_CHANNELS};

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Stored channel value to exported 8-bit color, the pseudo-color
/// convention the pose map uses.
pub fn channel_to_rgb_byte(v: f32) -> u8 {
    to_byte(v)
}

/// Composes a single review image: pose RGB, box RGB, road (one color
/// channel per type), then the ten depth bins as grayscale strips, all
/// side by side.
pub fn control_image_to_png(img: &ControlImage, path: &Path) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let panels = 3 + DEPTH_CHANNELS.len();
    let mut canvas = RgbImage::new((panels * w) as u32, h as u32);
    let data = img.tensor().data();
    let plane = |c: usize| &data[c * h * w..(c + 1) * h * w];

    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let pose = Rgb([
                to_byte(plane(POSE_CHANNELS.start)[idx]),
                to_byte(plane(POSE_CHANNELS.start + 1)[idx]),
                to_byte(plane(POSE_CHANNELS.start + 2)[idx]),
            ]);
            canvas.put_pixel(x as u32, y as u32, pose);

            let boxes = Rgb([
                to_byte(plane(BOX_CHANNELS.start)[idx]),
                to_byte(plane(BOX_CHANNELS.start + 1)[idx]),
                to_byte(plane(BOX_CHANNELS.start + 2)[idx]),
            ]);
            canvas.put_pixel((w + x) as u32, y as u32, boxes);

            let road = Rgb([
                to_byte(plane(ROAD_CHANNELS.start)[idx]),
                to_byte(plane(ROAD_CHANNELS.start + 1)[idx]),
                to_byte(plane(ROAD_CHANNELS.start + 2)[idx]),
            ]);
            canvas.put_pixel((2 * w + x) as u32, y as u32, road);

            for bin in DEPTH_CHANNELS {
                let g = to_byte(plane(bin)[idx]);
                canvas.put_pixel(((3 + bin) * w + x) as u32, y as u32, Rgb([g, g, g]));
            }
        }
    }

    canvas
        .save(path)
        .map_err(|e| BevError::Image(e.to_string()))
}

/// Writes the raw (19, H, W) tensor, the fixture/interchange form.
pub fn control_image_to_tensor_file(img: &ControlImage, path: &Path) -> Result<()> {
    Ok(mvd_tensor::io::write_tensor(path, img.tensor())?)
}

pub fn control_image_from_tensor_file(path: &Path) -> Result<ControlImage> {
    ControlImage::new(mvd_tensor::io::read_tensor(path)?)
}

//! The multi-view video denoiser: decomposed 4D attention blocks, the
//! miniature UNet built from them, attribute and layout conditioning
//! pathways, and checkpoint persistence.

mod attention;
mod checkpoint;
mod conditioning;
mod error;
mod model;
mod unet;

pub use attention::{
    attention_logit_cost, cross_frame_attention, cross_view_attention, full_4d_attention_oracle,
    intra_view_attention, AttentionConfig, AttentionParams, MaskRule, ViewAdjacency,
    ORACLE_TOKEN_LIMIT,
};
pub use checkpoint::{
    config_hash, expand_stage1_to_stage2, load_checkpoint, read_meta, save_checkpoint,
    CheckpointMeta,
};
pub use conditioning::{
    concat_control, fuse_image_condition, fuse_image_conditions, AttributeVocab, ConditionBundle,
    ControlBranch, ControlEmbed, SCENE_VALUES, TIME_VALUES, WEATHER_VALUES,
};
pub use error::{ModelError, Result};
pub use model::{ControlMode, ModelConfig, MultiViewModel};
pub use unet::{timestep_embedding, ControlFeatures, Mode, UNet, UNetConfig};

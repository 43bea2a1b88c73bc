//! Checkpoints are a directory of one tensor file per parameter plus a
//! meta.json describing the run, keyed by the stable names that
//! `visit_params` assigns.
//!
//! The stage-1 to stage-2 expansion lives here too: a video model is
//! seeded from an image checkpoint so that, before any training, its
//! per-frame output matches the image model exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use mvd_diffusion::ScheduleConfig;
use mvd_tensor::io::{read_tensor, write_tensor};
use mvd_tensor::rng::DetRng;
use mvd_tensor::{Elem, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::model::{ModelConfig, MultiViewModel};

/// Run metadata stored beside the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: usize,
    /// Free-form label of the training phase that produced the weights.
    pub stage: String,
    /// Hash of the serialized model config, for a fast compatibility check
    /// before any tensor is read.
    pub config_hash: String,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
}

/// FNV-1a over the canonical JSON of the config.
pub fn config_hash(config: &ModelConfig) -> Result<String> {
    let json = serde_json::to_string(config)?;
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in json.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Ok(format!("{hash:016x}"))
}

/// Writes `meta.json` plus one `<param-name>.ptnsr` per parameter.
pub fn save_checkpoint<T: Elem>(
    dir: &Path,
    model: &mut MultiViewModel<T>,
    schedule: &ScheduleConfig,
    step: usize,
    stage: &str,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = CheckpointMeta {
        step,
        stage: stage.to_string(),
        config_hash: config_hash(model.config())?,
        schedule: schedule.clone(),
        model: model.config().clone(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;

    let mut result = Ok(());
    model.visit_params("model", &mut |name, tensor| {
        if result.is_err() {
            return;
        }
        if let Err(e) = write_tensor(&dir.join(format!("{name}.ptnsr")), tensor) {
            result = Err(ModelError::from(e));
        }
    });
    result
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let raw = fs::read_to_string(dir.join("meta.json"))
        .map_err(|e| ModelError::Checkpoint(format!("cannot read meta.json in {dir:?}: {e}")))?;
    Ok(serde_json::from_str(&raw)?)
}

/// Rebuilds the model from the stored config and replaces every parameter
/// with its saved tensor. Missing files, stray files, and shape changes
/// are all hard errors.
pub fn load_checkpoint<T: Elem>(dir: &Path) -> Result<(CheckpointMeta, MultiViewModel<T>)> {
    let meta = read_meta(dir)?;
    let expected_hash = config_hash(&meta.model)?;
    if meta.config_hash != expected_hash {
        return Err(ModelError::Checkpoint(format!(
            "config hash mismatch: meta says {}, config hashes to {expected_hash}",
            meta.config_hash
        )));
    }

    let mut model = MultiViewModel::init(meta.model.clone(), &mut DetRng::new(0))?;
    let mut seen = BTreeSet::new();
    let mut failure: Option<ModelError> = None;
    model.visit_params("model", &mut |name, tensor| {
        if failure.is_some() {
            return;
        }
        seen.insert(name.to_string());
        let path = dir.join(format!("{name}.ptnsr"));
        match read_tensor::<T>(&path) {
            Err(e) => {
                failure = Some(ModelError::Checkpoint(format!(
                    "parameter {name} unreadable: {e}"
                )))
            }
            Ok(loaded) => {
                if loaded.shape() != tensor.shape() {
                    failure = Some(ModelError::Checkpoint(format!(
                        "parameter {name} has shape {:?} on disk, model wants {:?}",
                        loaded.shape(),
                        tensor.shape()
                    )));
                } else {
                    *tensor = loaded.into_param();
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == "meta.json" {
            continue;
        }
        let Some(stem) = name.strip_suffix(".ptnsr") else {
            continue;
        };
        if !seen.contains(stem) {
            return Err(ModelError::Checkpoint(format!(
                "stray parameter file {name} does not belong to this config"
            )));
        }
    }

    Ok((meta, model))
}

/// Seeds a video-capable, image-conditioned model from stage-1 weights.
///
/// Matching parameters are copied verbatim. Input convolutions whose
/// channel count grew take the old kernel in their leading input channels
/// and zeros elsewhere; the control embedding's output projection grows
/// the same way along its output channels. Temporal modules keep their
/// fresh initialization, whose zeroed output projections make them
/// identities. Together this reproduces the stage-1 computation exactly,
/// frame by frame, until training moves the new weights.
pub fn expand_stage1_to_stage2<T: Elem>(
    stage1: &mut MultiViewModel<T>,
    stage2_config: ModelConfig,
    rng: &mut DetRng,
) -> Result<MultiViewModel<T>> {
    let s1 = stage1.config().clone();
    check_expandable(&s1, &stage2_config)?;

    let mut source: BTreeMap<String, Tensor<T>> = BTreeMap::new();
    stage1.visit_params("model", &mut |name, tensor| {
        source.insert(name.to_string(), tensor.clone());
    });

    let mut target = MultiViewModel::init(stage2_config, rng)?;
    let mut failure: Option<ModelError> = None;
    target.visit_params("model", &mut |name, tensor| {
        if failure.is_some() {
            return;
        }
        let Some(old) = source.get(name) else {
            if !is_temporal_param(name) {
                failure = Some(ModelError::Checkpoint(format!(
                    "stage-2 parameter {name} has no stage-1 source and is not temporal"
                )));
            }
            return;
        };
        match expand_tensor(name, old, tensor.shape()) {
            Ok(expanded) => *tensor = expanded.into_param(),
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(target)
}

fn is_temporal_param(name: &str) -> bool {
    name.contains(".cross_frame.") || name.ends_with(".temporal_pos")
}

fn check_expandable(s1: &ModelConfig, s2: &ModelConfig) -> Result<()> {
    let mut comparable = s2.unet.clone();
    comparable.in_channels = s1.unet.in_channels;
    comparable.temporal = s1.unet.temporal;
    comparable.max_frames = s1.unet.max_frames;
    if comparable != s1.unet {
        return Err(ModelError::Checkpoint(
            "stage-2 unet differs from stage 1 beyond input channels and temporal wiring".into(),
        ));
    }
    if s1.latent_channels != s2.latent_channels
        || s1.control_mode != s2.control_mode
        || s1.control_channels != s2.control_channels
        || s1.control_downsample != s2.control_downsample
        || s1.control_embed_channels != s2.control_embed_channels
    {
        return Err(ModelError::Checkpoint(
            "stage-2 conditioning layout is incompatible with the stage-1 checkpoint".into(),
        ));
    }
    if !s2.image_conditioned {
        return Err(ModelError::Checkpoint(
            "stage-2 config must be image conditioned".into(),
        ));
    }
    if !s2.unet.temporal {
        return Err(ModelError::Checkpoint(
            "stage-2 config must enable temporal modules".into(),
        ));
    }
    Ok(())
}

/// Copies `old` into a tensor of `new_shape`, growing either the input
/// channels (axis 1 of a conv kernel) or the leading axis (conv output
/// channels and biases) with zeros.
fn expand_tensor<T: Elem>(name: &str, old: &Tensor<T>, new_shape: &[usize]) -> Result<Tensor<T>> {
    if old.shape() == new_shape {
        return Ok(old.detach());
    }
    let old_shape = old.shape();
    if old_shape.len() != new_shape.len() {
        return Err(ModelError::Checkpoint(format!(
            "parameter {name} changed rank: {old_shape:?} to {new_shape:?}"
        )));
    }
    let grown_in = old_shape.len() == 4
        && new_shape[0] == old_shape[0]
        && new_shape[1] > old_shape[1]
        && new_shape[2..] == old_shape[2..];
    if grown_in {
        let pad = Tensor::zeros(&[
            old_shape[0],
            new_shape[1] - old_shape[1],
            old_shape[2],
            old_shape[3],
        ]);
        return Ok(Tensor::concat(&[&old.detach(), &pad], 1)?);
    }
    let grown_out = new_shape[0] > old_shape[0] && new_shape[1..] == old_shape[1..];
    if grown_out {
        let mut pad_shape = old_shape.to_vec();
        pad_shape[0] = new_shape[0] - old_shape[0];
        let pad = Tensor::zeros(&pad_shape);
        return Ok(Tensor::concat(&[&old.detach(), &pad], 0)?);
    }
    Err(ModelError::Checkpoint(format!(
        "parameter {name} cannot grow from {old_shape:?} to {new_shape:?}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_config_sensitive() {
        let cfg = ModelConfig::default();
        let a = config_hash(&cfg).unwrap();
        let b = config_hash(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 16);

        let mut changed = cfg;
        changed.latent_channels += 1;
        assert_ne!(a, config_hash(&changed).unwrap());
    }

    #[test]
    fn temporal_names_are_recognized() {
        assert!(is_temporal_param("model.unet.enc0.block0.attn.cross_frame.wq"));
        assert!(is_temporal_param("model.unet.dec1.block0.attn.temporal_pos"));
        assert!(!is_temporal_param("model.unet.enc0.block0.attn.intra.wq"));
    }

    #[test]
    fn expansion_pads_the_right_axis() {
        let old = Tensor::<f64>::full(&[2, 3, 3, 3], 1.0);
        let grown = expand_tensor("w", &old, &[2, 5, 3, 3]).unwrap();
        assert_eq!(grown.shape(), &[2, 5, 3, 3]);
        let kept = grown.narrow(1, 0, 3).unwrap();
        let pad = grown.narrow(1, 3, 2).unwrap();
        assert!(kept.data().iter().all(|v| *v == 1.0));
        assert!(pad.data().iter().all(|v| *v == 0.0));

        let bias = Tensor::<f64>::full(&[4], 2.0);
        let grown = expand_tensor("b", &bias, &[6]).unwrap();
        assert_eq!(grown.data(), &[2.0, 2.0, 2.0, 2.0, 0.0, 0.0]);

        assert!(expand_tensor("w", &old, &[3, 5, 3, 3]).is_err());
    }
}

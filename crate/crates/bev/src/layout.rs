//! The BEV layout scene description: per-frame boxes and road polylines in
//! the ego frame, the camera rig, and coarse scene attributes. The JSON
//! form of `BevLayoutSequence` is the on-disk scene schema.

use serde::{Deserialize, Serialize};

use crate::error::{BevError, Result};
use crate::rig::CameraView;

/// One oriented 3D box in the ego frame: center in meters, size as
/// (length, width, height), yaw in radians about the up-axis, and a
/// category id indexing the palette.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxInstance {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    pub category: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolylineKind {
    LaneDivider,
    RoadBoundary,
    Crossing,
}

impl PolylineKind {
    /// Offset of this kind's channel within the road block.
    pub fn channel_offset(self) -> usize {
        match self {
            PolylineKind::LaneDivider => 0,
            PolylineKind::RoadBoundary => 1,
            PolylineKind::Crossing => 2,
        }
    }
}

/// A typed ground-plane polyline, ego-frame vertices in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub kind: PolylineKind,
    pub points: Vec<[f64; 2]>,
}

/// Layout content of one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LayoutFrame {
    pub boxes: Vec<BoxInstance>,
    pub polylines: Vec<Polyline>,
}

/// Coarse scene attributes, the values fed to the attribute vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAttributes {
    pub weather: String,
    #[serde(rename = "time")]
    pub time_of_day: String,
    pub scene: String,
}

impl Default for SceneAttributes {
    fn default() -> Self {
        SceneAttributes {
            weather: "unspecified".into(),
            time_of_day: "unspecified".into(),
            scene: "unspecified".into(),
        }
    }
}

/// A full scene: the rig, T layout frames, and attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevLayoutSequence {
    pub views: Vec<CameraView>,
    pub frames: Vec<LayoutFrame>,
    pub attributes: SceneAttributes,
}

impl BevLayoutSequence {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(BevError::Layout("scene has no camera views".into()));
        }
        for (i, view) in self.views.iter().enumerate() {
            view.validate().map_err(|e| {
                BevError::Layout(format!("view {i} is invalid: {e}"))
            })?;
        }
        if self.frames.is_empty() {
            return Err(BevError::Layout("scene has no layout frames".into()));
        }
        for (f, frame) in self.frames.iter().enumerate() {
            for (p, line) in frame.polylines.iter().enumerate() {
                if line.points.len() < 2 {
                    return Err(BevError::Layout(format!(
                        "frame {f} polyline {p} has fewer than two points"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let seq: BevLayoutSequence = serde_json::from_str(json)?;
        seq.validate()?;
        Ok(seq)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::extrinsic_from_yaw;

    fn sample_scene() -> BevLayoutSequence {
        BevLayoutSequence {
            views: vec![CameraView::pinhole(
                60.0,
                60.0,
                32.0,
                16.0,
                extrinsic_from_yaw(0.0, [0.0, 0.0, 1.5]),
                32,
                64,
            )],
            frames: vec![LayoutFrame {
                boxes: vec![BoxInstance {
                    center: [10.0, 0.0, 0.9],
                    size: [4.5, 2.0, 1.8],
                    yaw: 0.1,
                    category: 0,
                }],
                polylines: vec![Polyline {
                    kind: PolylineKind::LaneDivider,
                    points: vec![[2.0, 0.0], [30.0, 0.0]],
                }],
            }],
            attributes: SceneAttributes::default(),
        }
    }

    #[test]
    fn json_round_trip_preserves_the_scene() {
        let scene = sample_scene();
        let json = scene.to_json().unwrap();
        let back = BevLayoutSequence::from_json(&json).unwrap();
        assert_eq!(back, scene);
        assert!(json.contains("\"K\""));
        assert!(json.contains("\"time\""));
        assert!(json.contains("lane-divider"));
    }

    #[test]
    fn degenerate_scenes_fail_validation() {
        let mut scene = sample_scene();
        scene.frames[0].polylines[0].points.truncate(1);
        assert!(matches!(scene.validate(), Err(BevError::Layout(_))));

        let mut scene = sample_scene();
        scene.views.clear();
        assert!(matches!(scene.validate(), Err(BevError::Layout(_))));

        let mut scene = sample_scene();
        scene.frames.clear();
        assert!(matches!(scene.validate(), Err(BevError::Layout(_))));
    }
}

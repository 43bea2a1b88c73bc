//! Camera calibration: homogeneous intrinsics and camera-to-ego
//! extrinsics, one entry per view, stored row-major so the scene JSON
//! stays readable.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{BevError, Result};

/// Calibration and image size of one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    /// Row-major 4x4 homogeneous intrinsics.
    #[serde(rename = "K")]
    pub k: [[f64; 4]; 4],
    /// Row-major 4x4 camera-to-ego rigid transform.
    #[serde(rename = "E")]
    pub e: [[f64; 4]; 4],
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
}

fn to_matrix(rows: &[[f64; 4]; 4]) -> Matrix4<f64> {
    Matrix4::from_fn(|r, c| rows[r][c])
}

fn from_matrix(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    let mut rows = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            rows[r][c] = m[(r, c)];
        }
    }
    rows
}

impl CameraView {
    /// Standard pinhole intrinsics lifted to homogeneous form.
    pub fn pinhole(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        e: [[f64; 4]; 4],
        height: usize,
        width: usize,
    ) -> Self {
        let k = [
            [fx, 0.0, cx, 0.0],
            [0.0, fy, cy, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        CameraView {
            k,
            e,
            height,
            width,
        }
    }

    pub fn k_matrix(&self) -> Matrix4<f64> {
        to_matrix(&self.k)
    }

    pub fn e_matrix(&self) -> Matrix4<f64> {
        to_matrix(&self.e)
    }

    pub fn k_inverse(&self) -> Result<Matrix4<f64>> {
        self.k_matrix().try_inverse().ok_or(BevError::Geometry {
            op: "camera_view",
            reason: "intrinsic matrix is singular".into(),
        })
    }

    pub fn e_inverse(&self) -> Result<Matrix4<f64>> {
        self.e_matrix().try_inverse().ok_or(BevError::Geometry {
            op: "camera_view",
            reason: "extrinsic matrix is singular".into(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(BevError::Config(format!(
                "image size {}x{} is degenerate",
                self.height, self.width
            )));
        }
        self.k_inverse()?;
        self.e_inverse()?;
        let r = self.e_matrix().fixed_view::<3, 3>(0, 0).into_owned();
        let drift = ((r.transpose() * r) - nalgebra::Matrix3::identity()).abs().max();
        if drift > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(BevError::Geometry {
                op: "camera_view",
                reason: "extrinsic rotation block is not a proper rotation".into(),
            });
        }
        Ok(())
    }
}

/// Builds a camera-to-ego extrinsic from a yaw around the ego up-axis and
/// a camera position, using the usual optical convention (camera z
/// forward, x right, y down) against an ego frame with x forward, y left,
/// z up. Yaw zero looks along ego x.
pub fn extrinsic_from_yaw(yaw: f64, position: [f64; 3]) -> [[f64; 4] ; 4] {
    let (s, c) = yaw.sin_cos();
    let forward = [c, s, 0.0];
    let right = [s, -c, 0.0];
    let down = [0.0, 0.0, -1.0];
    let mut m = Matrix4::identity();
    for r in 0..3 {
        m[(r, 0)] = right[r];
        m[(r, 1)] = down[r];
        m[(r, 2)] = forward[r];
        m[(r, 3)] = position[r];
    }
    from_matrix(&m)
}

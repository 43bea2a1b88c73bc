//! Projection geometry: camera ray direction maps, ego-point projection,
//! and 3D box projection with near-plane handling.

use mvd_tensor::Tensor;
use nalgebra::{Matrix4, Vector3, Vector4};

use crate::error::{BevError, Result};
use crate::layout::BoxInstance;
use crate::rig::CameraView;

/// Corners closer than this camera depth, in meters, are invisible and
/// their edges are clipped here.
pub const NEAR_PLANE: f64 = 0.1;

/// Unit direction of the ray through pixel (u, v), in the ego frame.
///
/// Frustum points (u*d, v*d, d, 1) at depths 1 and 2 are lifted through
/// the inverse intrinsics and the extrinsics; their difference is the ray
/// direction, so the camera position cancels.
pub fn camera_ray_direction(view: &CameraView, u: f64, v: f64) -> Result<[f64; 3]> {
    let lift = view.e_matrix() * view.k_inverse()?;
    ray_from_lift(&lift, u, v)
}

fn ray_from_lift(lift: &Matrix4<f64>, u: f64, v: f64) -> Result<[f64; 3]> {
    let near = lift * Vector4::new(u, v, 1.0, 1.0);
    let far = lift * Vector4::new(2.0 * u, 2.0 * v, 2.0, 1.0);
    let dv = Vector3::new(far.x - near.x, far.y - near.y, far.z - near.z);
    let norm = dv.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(BevError::Geometry {
            op: "camera_ray",
            reason: format!("degenerate ray direction at pixel ({u}, {v})"),
        });
    }
    let unit = dv / norm;
    Ok([unit.x, unit.y, unit.z])
}

/// The pseudo-color camera pose map: per pixel, the unit ray direction
/// stored as (DV + 1) / 2 in three channels of shape (3, H, W).
pub fn camera_ray_image(view: &CameraView) -> Result<Tensor<f32>> {
    view.validate()?;
    let (h, w) = (view.height, view.width);
    let lift = view.e_matrix() * view.k_inverse()?;
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let dv = ray_from_lift(&lift, x as f64, y as f64)?;
            for c in 0..3 {
                data[c * h * w + y * w + x] = ((dv[c] + 1.0) / 2.0) as f32;
            }
        }
    }
    Ok(Tensor::from_vec(data, &[3, h, w])?)
}

/// Projects an ego-frame point through the view: pixel coordinates plus
/// the camera-frame depth. The pixel is meaningless when the depth is at
/// or behind the camera plane; callers check the depth first.
pub fn project_point(view: &CameraView, ego: [f64; 3]) -> Result<([f64; 2], f64)> {
    let e_inv = view.e_inverse()?;
    project_point_with(&view.k_matrix(), &e_inv, ego)
}

fn project_point_with(
    k: &Matrix4<f64>,
    e_inv: &Matrix4<f64>,
    ego: [f64; 3],
) -> Result<([f64; 2], f64)> {
    let cam = e_inv * Vector4::new(ego[0], ego[1], ego[2], 1.0);
    let depth = cam.z;
    let p = k * cam;
    if p.z.abs() < 1e-12 {
        return Ok(([f64::NAN, f64::NAN], depth));
    }
    Ok(([p.x / p.z, p.y / p.z], depth))
}

/// A box after projection: one pixel/depth/visibility triple per corner,
/// plus the near-clipped drawable edge segments.
#[derive(Debug, Clone)]
pub struct ProjectedBox {
    pub pixels: [[f64; 2]; 8],
    pub depths: [f64; 8],
    pub visible: [bool; 8],
    /// Pixel-space segments of the 12 wireframe edges; edges crossing the
    /// near plane are shortened to it, fully hidden edges are dropped.
    pub segments: Vec<[[f64; 2]; 2]>,
    /// Camera depth of the box center.
    pub center_depth: f64,
}

impl ProjectedBox {
    pub fn any_visible(&self) -> bool {
        self.visible.iter().any(|v| *v)
    }
}

/// Corner i takes its x/y/z sign from bits 0/1/2 of i.
fn box_corners(b: &BoxInstance) -> [[f64; 3]; 8] {
    let (half_l, half_w, half_h) = (b.size[0] / 2.0, b.size[1] / 2.0, b.size[2] / 2.0);
    let (s, c) = b.yaw.sin_cos();
    let mut corners = [[0.0; 3]; 8];
    for (i, corner) in corners.iter_mut().enumerate() {
        let sx = if i & 1 != 0 { half_l } else { -half_l };
        let sy = if i & 2 != 0 { half_w } else { -half_w };
        let sz = if i & 4 != 0 { half_h } else { -half_h };
        corner[0] = b.center[0] + c * sx - s * sy;
        corner[1] = b.center[1] + s * sx + c * sy;
        corner[2] = b.center[2] + sz;
    }
    corners
}

/// Edges connect corners whose indices differ in exactly one bit.
const BOX_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

pub fn project_box(view: &CameraView, b: &BoxInstance) -> Result<ProjectedBox> {
    let k = view.k_matrix();
    let e_inv = view.e_inverse()?;
    let corners = box_corners(b);

    let mut cam_points = [[0.0f64; 3]; 8];
    let mut pixels = [[f64::NAN; 2]; 8];
    let mut depths = [0.0f64; 8];
    let mut visible = [false; 8];
    for i in 0..8 {
        let cam = e_inv * Vector4::new(corners[i][0], corners[i][1], corners[i][2], 1.0);
        cam_points[i] = [cam.x, cam.y, cam.z];
        depths[i] = cam.z;
        visible[i] = cam.z > NEAR_PLANE;
        let p = k * cam;
        if p.z.abs() >= 1e-12 {
            pixels[i] = [p.x / p.z, p.y / p.z];
        }
    }

    let pixel_of = |cam: [f64; 3]| -> [f64; 2] {
        let p = k * Vector4::new(cam[0], cam[1], cam[2], 1.0);
        [p.x / p.z, p.y / p.z]
    };

    let mut segments = Vec::new();
    for (a, bb) in BOX_EDGES {
        match (visible[a], visible[bb]) {
            (true, true) => segments.push([pixels[a], pixels[bb]]),
            (true, false) | (false, true) => {
                let (vis, hid) = if visible[a] { (a, bb) } else { (bb, a) };
                let (pa, pb) = (cam_points[vis], cam_points[hid]);
                let s = (NEAR_PLANE - pa[2]) / (pb[2] - pa[2]);
                let clip = [
                    pa[0] + s * (pb[0] - pa[0]),
                    pa[1] + s * (pb[1] - pa[1]),
                    NEAR_PLANE,
                ];
                segments.push([pixels[vis], pixel_of(clip)]);
            }
            (false, false) => {}
        }
    }

    let center_cam = e_inv * Vector4::new(b.center[0], b.center[1], b.center[2], 1.0);
    Ok(ProjectedBox {
        pixels,
        depths,
        visible,
        segments,
        center_depth: center_cam.z,
    })
}

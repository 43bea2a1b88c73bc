//! Scalar pinhole geometry written directly from the fx/fy/cx/cy and
//! rotation/translation parameters, with no matrix library. Tests compare
//! the homogeneous-matrix path in `project` against these.

/// Unit ray direction through pixel (u, v) in the world frame, for a
/// camera with rotation `rot` (camera-to-world, row-major) at any
/// position.
pub fn pixel_to_ray(
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rot: &[[f64; 3]; 3],
    u: f64,
    v: f64,
) -> [f64; 3] {
    let dir_cam = [(u - cx) / fx, (v - cy) / fy, 1.0];
    let mut dir = [0.0; 3];
    for r in 0..3 {
        for c in 0..3 {
            dir[r] += rot[r][c] * dir_cam[c];
        }
    }
    let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    [dir[0] / norm, dir[1] / norm, dir[2] / norm]
}

/// Projects a world point for a camera with camera-to-world rotation
/// `rot` and position `pos`: returns (u, v, depth).
pub fn project_point(
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rot: &[[f64; 3]; 3],
    pos: &[f64; 3],
    world: &[f64; 3],
) -> (f64, f64, f64) {
    let rel = [world[0] - pos[0], world[1] - pos[1], world[2] - pos[2]];
    let mut cam = [0.0; 3];
    for r in 0..3 {
        for c in 0..3 {
            cam[r] += rot[c][r] * rel[c];
        }
    }
    let (x, y, z) = (cam[0], cam[1], cam[2]);
    (fx * x / z + cx, fy * y / z + cy, z)
}

/// Lifts pixel (u, v) at camera depth d back into the world frame.
pub fn back_project(
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rot: &[[f64; 3]; 3],
    pos: &[f64; 3],
    u: f64,
    v: f64,
    d: f64,
) -> [f64; 3] {
    let cam = [(u - cx) * d / fx, (v - cy) * d / fy, d];
    let mut world = [0.0; 3];
    for r in 0..3 {
        world[r] = pos[r];
        for c in 0..3 {
            world[r] += rot[r][c] * cam[c];
        }
    }
    world
}

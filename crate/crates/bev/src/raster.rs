//! The layout rasterizer: projects one layout frame into the 19-channel
//! control image a view conditions on.
//!
//! Channel map: 0-9 depth bins, 10-12 box wireframes (RGB), 13-15 road
//! polylines by type, 16-18 camera pose pseudo-color. All drawing is
//! integer Bresenham and exact fills, so outputs are bit-stable.

use std::sync::OnceLock;

use mvd_tensor::Tensor;
use serde::Deserialize;

use crate::error::{BevError, Result};
use crate::layout::{BevLayoutSequence, LayoutFrame, Polyline};
use crate::project::{camera_ray_image, project_box, NEAR_PLANE};
use crate::rig::CameraView;

pub const CONTROL_CHANNELS: usize = 19;
pub const DEPTH_CHANNELS: std::ops::Range<usize> = 0..10;
pub const BOX_CHANNELS: std::ops::Range<usize> = 10..13;
pub const ROAD_CHANNELS: std::ops::Range<usize> = 13..16;
pub const POSE_CHANNELS: std::ops::Range<usize> = 16..19;

/// Depth bins cover [1 m, 51 m) in ten 5 m slabs; outside depths clamp to
/// the nearest bin.
pub const DEPTH_BIN_START: f64 = 1.0;
pub const DEPTH_BIN_WIDTH: f64 = 5.0;

pub fn depth_bin(depth: f64) -> usize {
    let raw = ((depth - DEPTH_BIN_START) / DEPTH_BIN_WIDTH).floor();
    raw.clamp(0.0, (DEPTH_CHANNELS.len() - 1) as f64) as usize
}

#[derive(Debug, Clone, Deserialize)]
pub struct PaletteEntry {
    pub id: usize,
    pub name: String,
    pub rgb: [u8; 3],
}

static PALETTE: OnceLock<Vec<PaletteEntry>> = OnceLock::new();

/// The category color table, parsed once from the bundled asset.
pub fn palette() -> &'static [PaletteEntry] {
    PALETTE.get_or_init(|| {
        let entries: Vec<PaletteEntry> =
            serde_json::from_str(include_str!("../assets/palette.json"))
                .expect("bundled palette asset is valid JSON");
        assert!(
            entries.iter().enumerate().all(|(i, e)| e.id == i),
            "palette ids must be dense and ordered"
        );
        entries
    })
}

/// The rasterized conditioning image of one (frame, view) pair: a
/// (19, H, W) tensor with all values in [0, 1].
#[derive(Debug, Clone)]
pub struct ControlImage(Tensor<f32>);

impl ControlImage {
    pub fn new(tensor: Tensor<f32>) -> Result<Self> {
        let shape = tensor.shape();
        if shape.len() != 3 || shape[0] != CONTROL_CHANNELS {
            return Err(BevError::Layout(format!(
                "control image must be ({CONTROL_CHANNELS}, H, W), got {shape:?}"
            )));
        }
        if tensor.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(BevError::Layout(
                "control image values must lie in [0, 1]".into(),
            ));
        }
        Ok(ControlImage(tensor))
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    /// One channel plane as (H, W).
    pub fn channel(&self, c: usize) -> Result<Tensor<f32>> {
        let (h, w) = (self.height(), self.width());
        Ok(self.0.narrow(0, c, 1)?.reshape(&[h, w])?)
    }
}

/// Mutable (19, H, W) pixel buffer the drawing routines write into.
struct Canvas {
    data: Vec<f32>,
    h: usize,
    w: usize,
}

impl Canvas {
    fn new(h: usize, w: usize) -> Self {
        Canvas {
            data: vec![0.0; CONTROL_CHANNELS * h * w],
            h,
            w,
        }
    }

    fn put(&mut self, channel: usize, x: i64, y: i64, value: f32) {
        if x >= 0 && (x as usize) < self.w && y >= 0 && (y as usize) < self.h {
            self.data[(channel * self.h + y as usize) * self.w + x as usize] = value;
        }
    }

    /// Integer Bresenham between rounded endpoints, stamping `size`-pixel
    /// squares (1 for wireframes, 2 for road lines).
    fn line(&mut self, channels: &[(usize, f32)], a: [f64; 2], b: [f64; 2], size: i64) {
        let (mut x0, mut y0) = (a[0].round() as i64, a[1].round() as i64);
        let (x1, y1) = (b[0].round() as i64, b[1].round() as i64);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            for ox in 0..size {
                for oy in 0..size {
                    for &(c, v) in channels {
                        self.put(c, x0 + ox, y0 + oy, v);
                    }
                }
            }
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    /// Fills the convex hull of `points` with `value` in one channel,
    /// testing pixel centers.
    fn fill_hull(&mut self, channel: usize, points: &[[f64; 2]], value: f32) {
        let hull = convex_hull(points);
        if hull.len() < 3 {
            return;
        }
        let min_x = hull.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let max_x = hull.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = hull.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let max_y = hull.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (min_x.floor().max(0.0)) as usize;
        let x1 = (max_x.ceil().min(self.w as f64 - 1.0)).max(0.0) as usize;
        let y0 = (min_y.floor().max(0.0)) as usize;
        let y1 = (max_y.ceil().min(self.h as f64 - 1.0)).max(0.0) as usize;
        if min_x > self.w as f64 || max_x < 0.0 || min_y > self.h as f64 || max_y < 0.0 {
            return;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let px = x as f64 + 0.5;
                let py = y as f64 + 0.5;
                if inside_convex(&hull, px, py) {
                    self.data[(channel * self.h + y) * self.w + x] = value;
                }
            }
        }
    }
}

/// Andrew's monotone chain; returns the hull in counter-clockwise order
/// under image coordinates (y down).
fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points
        .iter()
        .copied()
        .filter(|p| p[0].is_finite() && p[1].is_finite())
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn inside_convex(hull: &[[f64; 2]], x: f64, y: f64) -> bool {
    let n = hull.len();
    for i in 0..n {
        let a = hull[i];
        let b = hull[(i + 1) % n];
        let cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
        if cross < -1e-9 {
            return false;
        }
    }
    true
}

/// Rasterizes one layout frame for one view.
pub fn rasterize_layout(frame: &LayoutFrame, view: &CameraView) -> Result<ControlImage> {
    view.validate()?;
    let (h, w) = (view.height, view.width);
    let mut canvas = Canvas::new(h, w);

    let pose = camera_ray_image(view)?;
    let pose_data = pose.data();
    for c in 0..3 {
        let dst = ((POSE_CHANNELS.start + c) * h * w, (POSE_CHANNELS.start + c + 1) * h * w);
        canvas.data[dst.0..dst.1].copy_from_slice(&pose_data[c * h * w..(c + 1) * h * w]);
    }

    for b in &frame.boxes {
        let color = palette().get(b.category).ok_or_else(|| {
            BevError::Layout(format!(
                "box category {} is outside the {}-entry palette",
                b.category,
                palette().len()
            ))
        })?;
        let proj = project_box(view, b)?;
        if !proj.any_visible() {
            continue;
        }

        let hull_points: Vec<[f64; 2]> = proj.segments.iter().flatten().copied().collect();
        canvas.fill_hull(depth_bin(proj.center_depth), &hull_points, 1.0);

        let rgb: Vec<(usize, f32)> = (0..3)
            .map(|c| (BOX_CHANNELS.start + c, color.rgb[c] as f32 / 255.0))
            .collect();
        for seg in &proj.segments {
            canvas.line(&rgb, seg[0], seg[1], 1);
        }
    }

    for line in &frame.polylines {
        let channel = ROAD_CHANNELS.start + line.kind.channel_offset();
        for seg in ground_segments(view, line)? {
            canvas.line(&[(channel, 1.0)], seg[0], seg[1], 2);
        }
    }

    ControlImage::new(Tensor::from_vec(canvas.data, &[CONTROL_CHANNELS, h, w])?)
}

/// Projects a ground polyline and near-clips each span in ego space, so
/// the drawn pixels never come from behind the camera.
fn ground_segments(view: &CameraView, line: &Polyline) -> Result<Vec<[[f64; 2]; 2]>> {
    let e_inv = view.e_inverse()?;
    let k = view.k_matrix();
    let cam_of = |p: [f64; 2]| {
        let v = e_inv * nalgebra::Vector4::new(p[0], p[1], 0.0, 1.0);
        [v.x, v.y, v.z]
    };
    let pix_of = |cam: [f64; 3]| {
        let p = k * nalgebra::Vector4::new(cam[0], cam[1], cam[2], 1.0);
        [p.x / p.z, p.y / p.z]
    };
    let mut segments = Vec::new();
    for pair in line.points.windows(2) {
        let a = cam_of(pair[0]);
        let b = cam_of(pair[1]);
        match (a[2] > NEAR_PLANE, b[2] > NEAR_PLANE) {
            (true, true) => segments.push([pix_of(a), pix_of(b)]),
            (true, false) | (false, true) => {
                let (vis, hid) = if a[2] > NEAR_PLANE { (a, b) } else { (b, a) };
                let s = (NEAR_PLANE - vis[2]) / (hid[2] - vis[2]);
                let clip = [
                    vis[0] + s * (hid[0] - vis[0]),
                    vis[1] + s * (hid[1] - vis[1]),
                    NEAR_PLANE,
                ];
                segments.push([pix_of(vis), pix_of(clip)]);
            }
            (false, false) => {}
        }
    }
    Ok(segments)
}

/// Rasterizes every (frame, view) pair, frame-major: the image for frame
/// t, view v sits at index t * V + v.
pub fn render_sequence(seq: &BevLayoutSequence) -> Result<Vec<ControlImage>> {
    seq.validate()?;
    let mut images = Vec::with_capacity(seq.frames.len() * seq.views.len());
    for frame in &seq.frames {
        for view in &seq.views {
            images.push(rasterize_layout(frame, view)?);
        }
    }
    Ok(images)
}

/// Stacks a frame-major control batch into a (T, V, 19, H, W) tensor.
pub fn control_batch_tensor(
    images: &[ControlImage],
    frames: usize,
    views: usize,
) -> Result<Tensor<f32>> {
    if images.len() != frames * views {
        return Err(BevError::Layout(format!(
            "batch of {} images cannot factor as {frames} frames x {views} views",
            images.len()
        )));
    }
    let (h, w) = (images[0].height(), images[0].width());
    let mut data = Vec::with_capacity(frames * views * CONTROL_CHANNELS * h * w);
    for img in images {
        if img.height() != h || img.width() != w {
            return Err(BevError::Layout(
                "all control images in a batch must share one size".into(),
            ));
        }
        data.extend_from_slice(img.tensor().data());
    }
    Ok(Tensor::from_vec(
        data,
        &[frames, views, CONTROL_CHANNELS, h, w],
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_bins_partition_the_range() {
        assert_eq!(depth_bin(1.0), 0);
        assert_eq!(depth_bin(5.999), 0);
        assert_eq!(depth_bin(6.0), 1);
        assert_eq!(depth_bin(12.0), 2);
        assert_eq!(depth_bin(50.999), 9);
        assert_eq!(depth_bin(51.0), 9);
        assert_eq!(depth_bin(500.0), 9);
        assert_eq!(depth_bin(0.2), 0);
    }

    #[test]
    fn palette_has_ten_dense_entries() {
        let p = palette();
        assert_eq!(p.len(), 10);
        assert_eq!(p[0].name, "car");
        assert_eq!(p[5].name, "pedestrian");
    }

    #[test]
    fn bresenham_hits_both_endpoints() {
        let mut canvas = Canvas::new(8, 8);
        canvas.line(&[(0, 1.0)], [1.0, 1.0], [6.0, 4.0], 1);
        assert_eq!(canvas.data[1 * 8 + 1], 1.0);
        assert_eq!(canvas.data[4 * 8 + 6], 1.0);
    }

    #[test]
    fn hull_fill_covers_a_square_exactly() {
        let mut canvas = Canvas::new(8, 8);
        canvas.fill_hull(
            0,
            &[[1.0, 1.0], [5.0, 1.0], [5.0, 5.0], [1.0, 5.0]],
            1.0,
        );
        let filled = canvas.data[..64].iter().filter(|v| **v == 1.0).count();
        assert_eq!(filled, 16);
        assert_eq!(canvas.data[2 * 8 + 2], 1.0);
        assert_eq!(canvas.data[0], 0.0);
    }

    #[test]
    fn degenerate_hulls_draw_nothing() {
        let mut canvas = Canvas::new(8, 8);
        canvas.fill_hull(0, &[[1.0, 1.0], [5.0, 5.0]], 1.0);
        assert!(canvas.data.iter().all(|v| *v == 0.0));
    }
}

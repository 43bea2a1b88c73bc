//! Projection geometry checked against the independent scalar pinhole
//! implementation in `reference`, plus the pinned optical-axis anchors.

use mvd_bev::reference;
use mvd_bev::{
    camera_ray_direction, camera_ray_image, channel_to_rgb_byte, extrinsic_from_yaw, project_box,
    project_point, BoxInstance, CameraView,
};
use mvd_tensor::rng::DetRng;

const IDENTITY_E: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// A deterministic valid rig: a random yaw extrinsic with a small pitch
/// mixed into its forward/down columns, so the rotation stays proper.
fn random_rig(rng: &mut DetRng, fx: f64, fy: f64, cx: f64, cy: f64, h: usize, w: usize) -> CameraView {
    let yaw = rng.uniform_range(-3.0, 3.0);
    let pos = [
        rng.uniform_range(-2.0, 2.0),
        rng.uniform_range(-2.0, 2.0),
        rng.uniform_range(0.5, 2.5),
    ];
    let mut e = extrinsic_from_yaw(yaw, pos);

    let pitch = rng.uniform_range(-0.3, 0.3);
    let (s, c) = pitch.sin_cos();
    for r in 0..3 {
        let fwd = e[r][2];
        let down = e[r][1];
        e[r][2] = c * fwd - s * down;
        e[r][1] = s * fwd + c * down;
    }
    let view = CameraView::pinhole(fx, fy, cx, cy, e, h, w);
    view.validate().expect("constructed rig must be valid");
    view
}

fn rotation_rows(view: &CameraView) -> [[f64; 3]; 3] {
    let mut rot = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            rot[r][c] = view.e[r][c];
        }
    }
    rot
}

fn position(view: &CameraView) -> [f64; 3] {
    [view.e[0][3], view.e[1][3], view.e[2][3]]
}

#[test]
fn optical_axis_pixel_stores_half_half_one() {
    let view = CameraView::pinhole(1.0, 1.0, 0.0, 0.0, IDENTITY_E, 2, 2);
    let dv = camera_ray_direction(&view, 0.0, 0.0).unwrap();
    assert_eq!(dv, [0.0, 0.0, 1.0]);

    let img = camera_ray_image(&view).unwrap();
    let data = img.data();
    let hw = 4;
    let stored = [data[0], data[hw], data[2 * hw]];
    assert_eq!(stored, [0.5, 0.5, 1.0]);
    assert_eq!(stored.map(channel_to_rgb_byte), [128, 128, 255]);
}

#[test]
fn rotating_the_rig_rotates_the_optical_axis_ray() {
    let ahead = CameraView::pinhole(
        1.0,
        1.0,
        0.0,
        0.0,
        extrinsic_from_yaw(0.0, [0.0; 3]),
        2,
        2,
    );
    let base = camera_ray_direction(&ahead, 0.0, 0.0).unwrap();

    let turned = CameraView::pinhole(
        1.0,
        1.0,
        0.0,
        0.0,
        extrinsic_from_yaw(std::f64::consts::FRAC_PI_2, [0.0; 3]),
        2,
        2,
    );
    let dv = camera_ray_direction(&turned, 0.0, 0.0).unwrap();

    // A quarter turn about the up-axis sends (x, y, z) to (-y, x, z).
    assert!((dv[0] + base[1]).abs() < 1e-12);
    assert!((dv[1] - base[0]).abs() < 1e-12);
    assert!((dv[2] - base[2]).abs() < 1e-12);
}

#[test]
fn ray_directions_match_the_scalar_oracle() {
    let mut rng = DetRng::new(41);
    let view = random_rig(&mut rng, 400.0, 400.0, 256.0, 128.0, 256, 512);
    let rot = rotation_rows(&view);

    for _ in 0..20 {
        let u = rng.uniform_range(0.0, 511.0);
        let v = rng.uniform_range(0.0, 255.0);
        let got = camera_ray_direction(&view, u, v).unwrap();
        let want = reference::pixel_to_ray(400.0, 400.0, 256.0, 128.0, &rot, u, v);
        for c in 0..3 {
            assert!(
                (got[c] - want[c]).abs() < 1e-6,
                "pixel ({u}, {v}) channel {c}: {} vs {}",
                got[c],
                want[c]
            );
        }
    }
}

#[test]
fn whole_ray_image_matches_the_scalar_oracle() {
    let mut rng = DetRng::new(43);
    let view = random_rig(&mut rng, 40.0, 44.0, 16.0, 8.0, 16, 32);
    let rot = rotation_rows(&view);

    let img = camera_ray_image(&view).unwrap();
    let data = img.data();
    let hw = 16 * 32;
    for y in 0..16 {
        for x in 0..32 {
            let want = reference::pixel_to_ray(40.0, 44.0, 16.0, 8.0, &rot, x as f64, y as f64);
            for c in 0..3 {
                let stored = data[c * hw + y * 32 + x] as f64;
                let expect = (want[c] + 1.0) / 2.0;
                assert!(
                    (stored - expect).abs() < 1e-6,
                    "pixel ({x}, {y}) channel {c}"
                );
            }
        }
    }
}

#[test]
fn random_round_trips_recover_pixel_and_depth() {
    let mut rng = DetRng::new(47);
    for trial in 0..1000 {
        let fx = rng.uniform_range(50.0, 500.0);
        let fy = rng.uniform_range(50.0, 500.0);
        let cx = rng.uniform_range(10.0, 300.0);
        let cy = rng.uniform_range(10.0, 200.0);
        let view = random_rig(&mut rng, fx, fy, cx, cy, 64, 128);
        let rot = rotation_rows(&view);
        let pos = position(&view);

        let u = rng.uniform_range(-50.0, 300.0);
        let v = rng.uniform_range(-50.0, 200.0);
        let d = rng.uniform_range(0.5, 60.0);

        let world = reference::back_project(fx, fy, cx, cy, &rot, &pos, u, v, d);
        let (ru, rv, rd) = reference::project_point(fx, fy, cx, cy, &rot, &pos, &world);
        assert!((ru - u).abs() < 1e-5, "trial {trial} u");
        assert!((rv - v).abs() < 1e-5, "trial {trial} v");
        assert!((rd - d).abs() < 1e-5, "trial {trial} d");

        let (pix, depth) = project_point(&view, world).unwrap();
        assert!((pix[0] - u).abs() < 1e-5, "trial {trial} matrix u");
        assert!((pix[1] - v).abs() < 1e-5, "trial {trial} matrix v");
        assert!((depth - d).abs() < 1e-5, "trial {trial} matrix d");
    }
}

#[test]
fn box_corners_match_the_scalar_oracle() {
    let mut rng = DetRng::new(53);
    for _ in 0..50 {
        let view = random_rig(&mut rng, 120.0, 110.0, 64.0, 32.0, 64, 128);
        let rot = rotation_rows(&view);
        let pos = position(&view);

        let b = BoxInstance {
            center: [
                rng.uniform_range(3.0, 30.0),
                rng.uniform_range(-10.0, 10.0),
                rng.uniform_range(0.3, 2.0),
            ],
            size: [
                rng.uniform_range(0.5, 6.0),
                rng.uniform_range(0.5, 3.0),
                rng.uniform_range(0.5, 3.0),
            ],
            yaw: rng.uniform_range(-3.0, 3.0),
            category: 0,
        };
        let proj = project_box(&view, &b).unwrap();

        // Rebuild each corner from the bit-sign convention and push it
        // through the scalar oracle.
        let (hl, hw, hh) = (b.size[0] / 2.0, b.size[1] / 2.0, b.size[2] / 2.0);
        let (s, c) = b.yaw.sin_cos();
        for i in 0..8 {
            let sx = if i & 1 != 0 { hl } else { -hl };
            let sy = if i & 2 != 0 { hw } else { -hw };
            let sz = if i & 4 != 0 { hh } else { -hh };
            let corner = [
                b.center[0] + c * sx - s * sy,
                b.center[1] + s * sx + c * sy,
                b.center[2] + sz,
            ];
            let (u, v, d) =
                reference::project_point(120.0, 110.0, 64.0, 32.0, &rot, &pos, &corner);
            assert!((proj.depths[i] - d).abs() < 1e-6, "corner {i} depth");
            if proj.visible[i] {
                assert!((proj.pixels[i][0] - u).abs() < 1e-6, "corner {i} u");
                assert!((proj.pixels[i][1] - v).abs() < 1e-6, "corner {i} v");
            }
        }
    }
}

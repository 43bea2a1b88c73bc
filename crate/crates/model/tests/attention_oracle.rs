//! Equivalence of each decomposed attention block with the brute-force
//! full-attention oracle under the matching mask rule, plus locality probes.

use mvd_model::{
    cross_frame_attention, cross_view_attention, full_4d_attention_oracle, intra_view_attention,
    AttentionConfig, AttentionParams, MaskRule, ViewAdjacency,
};
use mvd_tensor::rng::DetRng;
use mvd_tensor::{Elem, Tensor};

fn cfg(c: usize, heads: usize, adjacency: ViewAdjacency) -> AttentionConfig {
    AttentionConfig {
        embed_dim: c,
        num_heads: heads,
        view_adjacency: adjacency,
        enable_cross_view: true,
        enable_cross_frame: true,
    }
}

fn trained_params<T: Elem>(c: usize, seed: u64) -> AttentionParams<T> {
    let mut rng = DetRng::new(seed);
    let mut p = AttentionParams::<T>::init(c, c, &mut rng).unwrap();
    p.wo = rng.normal_param(&[c, c], 0.4).unwrap();
    p.norm_beta = rng.normal_param(&[c], 0.1).unwrap();
    p
}

fn random_tokens<T: Elem>(t: usize, v: usize, n: usize, c: usize, seed: u64) -> Tensor<T> {
    DetRng::new(seed).normal_tensor(&[t, v, n, c]).unwrap()
}

#[test]
fn intra_view_matches_oracle_in_f32_and_f64() {
    let conf = cfg(8, 2, ViewAdjacency::Cyclic);
    let p64 = trained_params::<f64>(8, 1);
    let x64 = random_tokens::<f64>(2, 2, 6, 8, 2);
    let block = intra_view_attention(&x64, &p64, &conf).unwrap();
    let oracle = full_4d_attention_oracle(&x64, &p64, &conf, MaskRule::SameFrameView).unwrap();
    assert!(block.max_abs_diff(&oracle).unwrap() < 1e-10);

    let p32 = trained_params::<f32>(8, 1);
    let x32 = random_tokens::<f32>(2, 2, 6, 8, 2);
    let block = intra_view_attention(&x32, &p32, &conf).unwrap();
    let oracle = full_4d_attention_oracle(&x32, &p32, &conf, MaskRule::SameFrameView).unwrap();
    assert!(block.max_abs_diff(&oracle).unwrap() < 1e-5);
}

#[test]
fn cross_view_matches_oracle_for_cyclic_rings() {
    for views in [2, 3, 4] {
        let conf = cfg(8, 2, ViewAdjacency::Cyclic);
        let p = trained_params::<f64>(8, 3);
        let x = random_tokens::<f64>(3, views, 4, 8, 4 + views as u64);
        let block = cross_view_attention(&x, &p, &conf).unwrap();
        let oracle = full_4d_attention_oracle(&x, &p, &conf, MaskRule::AdjacentViews).unwrap();
        assert!(
            block.max_abs_diff(&oracle).unwrap() < 1e-10,
            "divergence at V={views}"
        );
    }
}

#[test]
fn cross_view_matches_oracle_for_linear_chains() {
    let conf = cfg(8, 4, ViewAdjacency::Linear);
    let p = trained_params::<f64>(8, 5);
    let x = random_tokens::<f64>(2, 4, 4, 8, 6);
    let block = cross_view_attention(&x, &p, &conf).unwrap();
    let oracle = full_4d_attention_oracle(&x, &p, &conf, MaskRule::AdjacentViews).unwrap();
    assert!(block.max_abs_diff(&oracle).unwrap() < 1e-10);
}

#[test]
fn cross_frame_matches_oracle() {
    let conf = cfg(8, 2, ViewAdjacency::Cyclic);
    let p64 = trained_params::<f64>(8, 7);
    let x64 = random_tokens::<f64>(3, 2, 4, 8, 8);
    let block = cross_frame_attention(&x64, &p64, &conf, None).unwrap();
    let oracle = full_4d_attention_oracle(&x64, &p64, &conf, MaskRule::SameLocation).unwrap();
    assert!(block.max_abs_diff(&oracle).unwrap() < 1e-10);

    let p32 = trained_params::<f32>(8, 7);
    let x32 = random_tokens::<f32>(3, 2, 4, 8, 8);
    let block = cross_frame_attention(&x32, &p32, &conf, None).unwrap();
    let oracle = full_4d_attention_oracle(&x32, &p32, &conf, MaskRule::SameLocation).unwrap();
    assert!(block.max_abs_diff(&oracle).unwrap() < 1e-5);
}

#[test]
fn single_token_oracle_with_all_pairs_is_value_projection() {
    let conf = cfg(4, 1, ViewAdjacency::Cyclic);
    let p = trained_params::<f64>(4, 9);
    let x = random_tokens::<f64>(1, 1, 1, 4, 10);
    let out = full_4d_attention_oracle(&x, &p, &conf, MaskRule::AllPairs).unwrap();
    let intra = intra_view_attention(&x, &p, &conf).unwrap();
    assert!(out.max_abs_diff(&intra).unwrap() < 1e-12);
}

#[test]
fn intra_view_output_ignores_other_frames_and_views() {
    let conf = cfg(8, 2, ViewAdjacency::Cyclic);
    let p = trained_params::<f64>(8, 11);
    let x = random_tokens::<f64>(2, 3, 5, 8, 12);
    let base = intra_view_attention(&x, &p, &conf).unwrap();

    // Perturb every panel except (frame 0, view 1).
    let mut data = x.to_vec();
    let n = 5 * 8;
    for t in 0..2 {
        for v in 0..3 {
            if t == 0 && v == 1 {
                continue;
            }
            let start = (t * 3 + v) * n;
            for value in &mut data[start..start + n] {
                *value += 7.25;
            }
        }
    }
    let perturbed = Tensor::from_vec(data, &[2, 3, 5, 8]).unwrap();
    let out = intra_view_attention(&perturbed, &p, &conf).unwrap();

    let keep_base = base.narrow(0, 0, 1).unwrap().narrow(1, 1, 1).unwrap();
    let keep_out = out.narrow(0, 0, 1).unwrap().narrow(1, 1, 1).unwrap();
    assert_eq!(keep_base.data(), keep_out.data());
}

#[test]
fn cross_frame_output_ignores_other_spatial_locations() {
    let conf = cfg(8, 2, ViewAdjacency::Cyclic);
    let p = trained_params::<f64>(8, 13);
    let x = random_tokens::<f64>(3, 2, 4, 8, 14);
    let base = cross_frame_attention(&x, &p, &conf, None).unwrap();

    // Perturb every spatial token except index 2 of view 0, in all frames.
    let mut data = x.to_vec();
    for t in 0..3 {
        for v in 0..2 {
            for n in 0..4 {
                if v == 0 && n == 2 {
                    continue;
                }
                let start = ((t * 2 + v) * 4 + n) * 8;
                for value in &mut data[start..start + 8] {
                    *value -= 3.5;
                }
            }
        }
    }
    let perturbed = Tensor::from_vec(data, &[3, 2, 4, 8]).unwrap();
    let out = cross_frame_attention(&perturbed, &p, &conf, None).unwrap();

    for t in 0..3 {
        let keep_base = base
            .narrow(0, t, 1)
            .unwrap()
            .narrow(1, 0, 1)
            .unwrap()
            .narrow(2, 2, 1)
            .unwrap();
        let keep_out = out
            .narrow(0, t, 1)
            .unwrap()
            .narrow(1, 0, 1)
            .unwrap()
            .narrow(2, 2, 1)
            .unwrap();
        assert_eq!(keep_base.data(), keep_out.data());
    }
}

#[test]
fn cross_frame_is_equivariant_under_frame_permutation() {
    let conf = cfg(8, 2, ViewAdjacency::Cyclic);
    let p = trained_params::<f64>(8, 15);
    let x = random_tokens::<f64>(4, 2, 3, 8, 16);
    let out = cross_frame_attention(&x, &p, &conf, None).unwrap();

    let perm = [2usize, 0, 3, 1];
    let frames: Vec<Tensor<f64>> = perm.iter().map(|&t| x.narrow(0, t, 1).unwrap()).collect();
    let refs: Vec<&Tensor<f64>> = frames.iter().collect();
    let shuffled = Tensor::concat(&refs, 0).unwrap();
    let out_shuffled = cross_frame_attention(&shuffled, &p, &conf, None).unwrap();

    for (dst, &src) in perm.iter().enumerate() {
        let a = out.narrow(0, src, 1).unwrap();
        let b = out_shuffled.narrow(0, dst, 1).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }
}

#[test]
fn temporal_encoding_breaks_permutation_symmetry_but_keeps_locality() {
    let conf = cfg(8, 2, ViewAdjacency::Cyclic);
    let p = trained_params::<f64>(8, 17);
    let mut rng = DetRng::new(18);
    let pos = rng.normal_tensor::<f64>(&[8, 8]).unwrap();
    let x = random_tokens::<f64>(3, 2, 4, 8, 19);
    let base = cross_frame_attention(&x, &p, &conf, Some(&pos)).unwrap();

    // Swapping two frames no longer just permutes outputs.
    let swapped = {
        let f0 = x.narrow(0, 1, 1).unwrap();
        let f1 = x.narrow(0, 0, 1).unwrap();
        let f2 = x.narrow(0, 2, 1).unwrap();
        Tensor::concat(&[&f0, &f1, &f2], 0).unwrap()
    };
    let out_swapped = cross_frame_attention(&swapped, &p, &conf, Some(&pos)).unwrap();
    let naive_permute = Tensor::concat(
        &[
            &base.narrow(0, 1, 1).unwrap(),
            &base.narrow(0, 0, 1).unwrap(),
            &base.narrow(0, 2, 1).unwrap(),
        ],
        0,
    )
    .unwrap();
    assert!(out_swapped.max_abs_diff(&naive_permute).unwrap() > 1e-6);

    // Locality still holds: other spatial tracks cannot influence a track.
    let mut data = x.to_vec();
    for t in 0..3 {
        for v in 0..2 {
            for n in 0..4 {
                if v == 1 && n == 0 {
                    continue;
                }
                let start = ((t * 2 + v) * 4 + n) * 8;
                for value in &mut data[start..start + 8] {
                    *value += 1.75;
                }
            }
        }
    }
    let perturbed = Tensor::from_vec(data, &[3, 2, 4, 8]).unwrap();
    let out = cross_frame_attention(&perturbed, &p, &conf, Some(&pos)).unwrap();
    for t in 0..3 {
        let keep_base = base
            .narrow(0, t, 1)
            .unwrap()
            .narrow(1, 1, 1)
            .unwrap()
            .narrow(2, 0, 1)
            .unwrap();
        let keep_out = out
            .narrow(0, t, 1)
            .unwrap()
            .narrow(1, 1, 1)
            .unwrap()
            .narrow(2, 0, 1)
            .unwrap();
        assert_eq!(keep_base.data(), keep_out.data());
    }
}

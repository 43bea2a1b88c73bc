//! Analytic gradients of every kernel checked against the f64
//! central-difference oracle.
//!
//! Each case builds a scalar loss `sum(op(inputs) * fixed_weights)` so every
//! output element receives a distinct upstream gradient, then compares
//! `backward` against `finite_diff_grad` input by input. Tolerance is 1e-4
//! relative on entries above the 1e-6 floor.

use mvd_tensor::rng::DetRng;
use mvd_tensor::{backward, finite_diff_grad, max_rel_err, Result, Tensor};

const TOL: f64 = 1e-4;
const H: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

fn rand_param(rng: &mut DetRng, shape: &[usize], scale: f64) -> Tensor<f64> {
    rng.normal_param(shape, scale).unwrap()
}

/// Weights the op output into a scalar with a fixed random covector.
fn weighted_loss(out: &Tensor<f64>, rng: &mut DetRng) -> Result<Tensor<f64>> {
    let w = rng.normal_tensor::<f64>(out.shape())?;
    Ok(out.mul(&w)?.sum_all())
}

fn check<F>(name: &str, inputs: Vec<Tensor<f64>>, f: F)
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let loss = f(&inputs).unwrap_or_else(|e| panic!("{name}: forward failed: {e}"));
    let grads = backward(&loss).unwrap_or_else(|e| panic!("{name}: backward failed: {e}"));
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.get(x);
        let numeric = finite_diff_grad(
            |v| {
                let mut ins: Vec<Tensor<f64>> = inputs.clone();
                ins[i] = v.clone();
                f(&ins)?.item()
            },
            &x.detach(),
            H,
        )
        .unwrap();
        let err = max_rel_err(analytic.data(), numeric.data(), FLOOR);
        assert!(
            err <= TOL,
            "{name}: input {i} gradient off by {err:.3e} (tol {TOL:.0e})"
        );
    }
}

// The loss weights must not depend on which input is perturbed, so every
// case derives its own fixed RNG stream for them.
fn loss_rng(tag: u64) -> DetRng {
    DetRng::new(0xC0FFEE).derive(tag)
}

#[test]
fn elementwise_ops() {
    let mut rng = DetRng::new(10);
    let a = rand_param(&mut rng, &[3, 4], 1.0);
    let b = rand_param(&mut rng, &[3, 4], 1.0);
    check("add", vec![a.clone(), b.clone()], |ins| {
        weighted_loss(&ins[0].add(&ins[1])?, &mut loss_rng(1))
    });
    check("sub", vec![a.clone(), b.clone()], |ins| {
        weighted_loss(&ins[0].sub(&ins[1])?, &mut loss_rng(2))
    });
    check("mul", vec![a.clone(), b.clone()], |ins| {
        weighted_loss(&ins[0].mul(&ins[1])?, &mut loss_rng(3))
    });
    check("neg", vec![a.clone()], |ins| {
        weighted_loss(&ins[0].neg(), &mut loss_rng(4))
    });
    check("scale", vec![a.clone()], |ins| {
        weighted_loss(&ins[0].scale(-1.7), &mut loss_rng(5))
    });
    check("add_scalar", vec![a.clone()], |ins| {
        weighted_loss(&ins[0].add_scalar(0.3), &mut loss_rng(6))
    });
    check("exp", vec![a.clone()], |ins| {
        weighted_loss(&ins[0].exp(), &mut loss_rng(7))
    });
    check("silu", vec![a], |ins| {
        weighted_loss(&ins[0].silu(), &mut loss_rng(8))
    });
}

#[test]
fn add_bias_broadcasts_along_inner_axis() {
    let mut rng = DetRng::new(11);
    let x = rand_param(&mut rng, &[2, 3, 4], 1.0);
    let bias = rand_param(&mut rng, &[3], 1.0);
    check("add_bias", vec![x, bias], |ins| {
        weighted_loss(&ins[0].add_bias(&ins[1], 1)?, &mut loss_rng(9))
    });
}

#[test]
fn matmul_variants() {
    let mut rng = DetRng::new(12);
    let a2 = rand_param(&mut rng, &[3, 4], 1.0);
    let b2 = rand_param(&mut rng, &[4, 2], 1.0);
    check("matmul_2d", vec![a2, b2], |ins| {
        weighted_loss(&ins[0].matmul(&ins[1])?, &mut loss_rng(10))
    });

    let a_b = rand_param(&mut rng, &[2, 3, 3, 4], 1.0);
    let b_b = rand_param(&mut rng, &[2, 3, 4, 2], 1.0);
    check("matmul_batched", vec![a_b, b_b], |ins| {
        weighted_loss(&ins[0].matmul(&ins[1])?, &mut loss_rng(11))
    });

    let a_s = rand_param(&mut rng, &[2, 3, 4], 1.0);
    let b_s = rand_param(&mut rng, &[4, 5], 1.0);
    check("matmul_shared_rhs", vec![a_s, b_s], |ins| {
        weighted_loss(&ins[0].matmul(&ins[1])?, &mut loss_rng(12))
    });
}

#[test]
fn softmax_lastdim() {
    let mut rng = DetRng::new(13);
    let x = rand_param(&mut rng, &[2, 3, 5], 2.0);
    check("softmax_lastdim", vec![x], |ins| {
        weighted_loss(&ins[0].softmax_lastdim()?, &mut loss_rng(13))
    });
}

#[test]
fn shape_ops() {
    let mut rng = DetRng::new(14);
    let x = rand_param(&mut rng, &[2, 3, 4], 1.0);
    check("reshape", vec![x.clone()], |ins| {
        weighted_loss(&ins[0].reshape(&[6, 4])?, &mut loss_rng(14))
    });
    check("transpose", vec![x.clone()], |ins| {
        weighted_loss(&ins[0].transpose(0, 2)?, &mut loss_rng(15))
    });
    check("narrow", vec![x.clone()], |ins| {
        weighted_loss(&ins[0].narrow(1, 1, 2)?, &mut loss_rng(16))
    });
    check("repeat_axis", vec![x.clone()], |ins| {
        weighted_loss(&ins[0].repeat_axis(1, 3)?, &mut loss_rng(17))
    });

    let y = rand_param(&mut rng, &[2, 2, 4], 1.0);
    let z = rand_param(&mut rng, &[2, 1, 4], 1.0);
    check("concat", vec![x, y, z], |ins| {
        let cat = Tensor::concat(&[&ins[0], &ins[1], &ins[2]], 1)?;
        weighted_loss(&cat, &mut loss_rng(18))
    });
}

#[test]
fn reductions() {
    let mut rng = DetRng::new(15);
    let x = rand_param(&mut rng, &[3, 4], 1.0);
    let target = rand_param(&mut rng, &[3, 4], 1.0);
    check("mean_all", vec![x.clone()], |ins| {
        ins[0].mean_all()
    });
    check("sum_all", vec![x.clone()], |ins| {
        Ok(ins[0].sum_all())
    });
    check("mse", vec![x, target], |ins| {
        ins[0].mse(&ins[1])
    });
}

#[test]
fn conv2d_variants() {
    let mut rng = DetRng::new(16);
    let x = rand_param(&mut rng, &[2, 3, 4, 5], 1.0);

    let w3 = rand_param(&mut rng, &[2, 3, 3, 3], 0.5);
    let b3 = rand_param(&mut rng, &[2], 0.5);
    check("conv3x3_s1", vec![x.clone(), w3.clone(), b3.clone()], |ins| {
        weighted_loss(&ins[0].conv2d(&ins[1], &ins[2], 1)?, &mut loss_rng(19))
    });
    check("conv3x3_s2", vec![x.clone(), w3, b3], |ins| {
        weighted_loss(&ins[0].conv2d(&ins[1], &ins[2], 2)?, &mut loss_rng(20))
    });

    let w1 = rand_param(&mut rng, &[4, 3, 1, 1], 0.5);
    let b1 = rand_param(&mut rng, &[4], 0.5);
    check("conv1x1_s1", vec![x, w1, b1], |ins| {
        weighted_loss(&ins[0].conv2d(&ins[1], &ins[2], 1)?, &mut loss_rng(21))
    });
}

#[test]
fn group_norm() {
    let mut rng = DetRng::new(17);
    let x = rand_param(&mut rng, &[2, 4, 3, 2], 1.5);
    let gamma = rand_param(&mut rng, &[4], 1.0);
    let beta = rand_param(&mut rng, &[4], 1.0);
    check("group_norm_g2", vec![x.clone(), gamma.clone(), beta.clone()], |ins| {
        weighted_loss(&ins[0].group_norm(&ins[1], &ins[2], 2, 1e-5)?, &mut loss_rng(22))
    });
    // Tokens case: (n, c) with a single group behaves as layer norm.
    let tokens = rand_param(&mut rng, &[6, 5], 1.0);
    let g = rand_param(&mut rng, &[5], 1.0);
    let b = rand_param(&mut rng, &[5], 1.0);
    check("group_norm_tokens", vec![tokens, g, b], |ins| {
        weighted_loss(&ins[0].group_norm(&ins[1], &ins[2], 1, 1e-5)?, &mut loss_rng(23))
    });
}

#[test]
fn upsample_and_gather() {
    let mut rng = DetRng::new(18);
    let x = rand_param(&mut rng, &[2, 3, 2, 3], 1.0);
    check("upsample_nearest_2x", vec![x], |ins| {
        weighted_loss(&ins[0].upsample_nearest_2x()?, &mut loss_rng(24))
    });

    let table = rand_param(&mut rng, &[4, 3], 1.0);
    check("gather_rows_repeated", vec![table], |ins| {
        weighted_loss(&ins[0].gather_rows(&[1, 3, 1])?, &mut loss_rng(25))
    });
}

#[test]
fn linear_layer() {
    let mut rng = DetRng::new(19);
    let x = rand_param(&mut rng, &[2, 3, 4], 1.0);
    let w = rand_param(&mut rng, &[4, 5], 0.5);
    let b = rand_param(&mut rng, &[5], 0.5);
    check("linear", vec![x, w, b], |ins| {
        weighted_loss(&ins[0].linear(&ins[1], &ins[2])?, &mut loss_rng(26))
    });
}

#[test]
fn random_composites() {
    // Three-op chains mixing kernel families, the shape a model layer takes.
    let mut rng = DetRng::new(20);

    let x = rand_param(&mut rng, &[2, 4, 4, 4], 1.0);
    let gamma = rand_param(&mut rng, &[4], 1.0);
    let beta = rand_param(&mut rng, &[4], 1.0);
    let w = rand_param(&mut rng, &[4, 4, 3, 3], 0.4);
    let b = rand_param(&mut rng, &[4], 0.4);
    check(
        "norm_silu_conv",
        vec![x, gamma, beta, w, b],
        |ins| {
            let h = ins[0].group_norm(&ins[1], &ins[2], 2, 1e-5)?;
            let h = h.silu();
            weighted_loss(&h.conv2d(&ins[3], &ins[4], 1)?, &mut loss_rng(27))
        },
    );

    let q = rand_param(&mut rng, &[2, 3, 4], 1.0);
    let k = rand_param(&mut rng, &[2, 5, 4], 1.0);
    let v = rand_param(&mut rng, &[2, 5, 4], 1.0);
    check("attention_core", vec![q, k, v], |ins| {
        let scores = ins[0].matmul(&ins[1].transpose(1, 2)?)?.scale(0.5);
        let attn = scores.softmax_lastdim()?;
        weighted_loss(&attn.matmul(&ins[2])?, &mut loss_rng(28))
    });
}

//! Counter-based deterministic random generator.
//!
//! Every stochastic call site in the workspace receives an explicit seed and
//! draws from one of these. A draw depends only on `(key, counter)`, so
//! streams can be forked by tag without consuming state from the parent,
//! and re-running any pipeline with the same seed reproduces every draw.

use crate::elem::Elem;
use crate::error::Result;
use crate::tensor::Tensor;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct DetRng {
    key: u64,
    counter: u64,
    cached_normal: Option<f64>,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng {
            key: mix(seed ^ GOLDEN),
            counter: 0,
            cached_normal: None,
        }
    }

    /// Independent stream derived from this one; does not advance `self`.
    pub fn derive(&self, tag: u64) -> DetRng {
        DetRng {
            key: mix(self.key ^ mix(tag.wrapping_add(GOLDEN))),
            counter: 0,
            cached_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Unbiased-enough index draw in `[0, n)` via fixed-point scaling.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal draw (Box-Muller, pairs cached).
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.cached_normal.take() {
            return v;
        }
        // Shift into (0, 1] so the log argument is never zero.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_tensor<T: Elem>(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| T::from_f64(self.normal())).collect();
        Tensor::from_vec(data, shape)
    }

    /// Normal draws scaled by `std`, as a parameter leaf.
    pub fn normal_param<T: Elem>(&mut self, shape: &[usize], std: f64) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::from_f64(self.normal() * std))
            .collect();
        Tensor::param(data, shape)
    }
}

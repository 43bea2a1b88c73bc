//! Dense tensors with reverse-mode autodiff, deterministic RNG, and flat
//! binary tensor files.
//!
//! The numeric substrate for the rest of the workspace:
//!
//! - [`Tensor`] is a row-major dense array over f32 or f64. Ops are eager,
//!   validate shapes, and record a differentiation graph while training.
//! - [`backward`] walks that graph once in reverse creation order and hands
//!   back [`Gradients`] for every participating parameter leaf.
//! - [`check::finite_diff_grad`] is the f64 central-difference oracle the
//!   analytic gradients are tested against.
//! - [`rng::DetRng`] is a counter-based generator; all randomness in the
//!   workspace flows through explicitly seeded instances of it.
//! - [`io`] reads and writes the `PTNSR1` tensor file format.
//!
//! Kernels may run on rayon threads internally, but parallel execution is
//! always bit-identical to sequential execution: work is split per output
//! element and inner reductions keep a fixed order.

mod check;
mod elem;
mod error;
mod ops;
mod tape;
mod tensor;

pub mod io;
pub mod rng;

pub use check::{finite_diff_grad, max_rel_err};
pub use elem::{Dtype, Elem};
pub use error::{Result, TensorError};
pub use tape::{backward, grad_enabled, no_grad, Gradients, NoGradGuard};
pub use tensor::Tensor;

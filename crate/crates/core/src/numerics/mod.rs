//! Minimal reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a dense row-major array, [`Tape`] a Wengert list of operations
//! with eager forward evaluation and a reverse pass seeded from a scalar loss.
//! Parameters live at the front of the tape; [`Tape::truncate`] drops the
//! per-batch graph while keeping parameters in place.

mod rnn;
mod serialize;
mod sgd;
mod tape;
mod tensor;

pub use rnn::{lstm_cell, LstmParams};
pub use serialize::{digest_params, NamedTensor, ParamReader};
pub use sgd::{sgd_step, SgdConfig};
pub use tape::{Tape, Var, MASK_NEG};
pub use tensor::Tensor;

use crate::scalar::Scalar;
use rand::Rng;

/// Uniform init in `[lo, hi)`; draws are made at `f64` for cross-width determinism.
pub fn uniform_init<F: Scalar, R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::of_f64(rng.gen_range(lo..hi))).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape/product agree")
}

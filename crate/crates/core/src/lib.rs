//! Multi-agent style transfer toolkit.
//!
//! The crate is organized around the stages of the pipeline:
//!
//! - [`corpus`]: aligned multi-style text, vocabularies, splits, noise, and
//!   synthetic style generation for desk-scale experiments.
//! - [`numerics`]: a small reverse-mode autodiff tape with the layer set the
//!   models need (affine, embeddings, LSTM cells, softmax, dropout,
//!   cross-entropy) and plain SGD.
//! - [`seq2seq`]: the attentional encoder-decoder agent (AttS2S), teacher-forced
//!   training and greedy decoding.
//! - [`semi`]: semi-supervised training mixing the supervised, back-translation
//!   and denoising auto-encoding routes.
//! - [`sos`]: self-organization by similarities — pairwise style classifiers,
//!   score matrices and neighbor selection.
//! - [`mat`]: multi-agent training — a controller mixing frozen agents over a
//!   global action space.
//! - [`harness`]: BLEU, experiment orchestration, sweeps and reporting.
//!
//! All neural components are generic over the scalar type via [`Scalar`]
//! (`f32` or `f64`); concrete aliases live at the crate root.

pub mod corpus;
pub mod error;
pub mod harness;
pub mod mat;
pub mod numerics;
pub mod scalar;
pub mod seeding;
pub mod semi;
pub mod seq2seq;
pub mod sos;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision tensor.
pub type Tensor32 = numerics::Tensor<f32>;
/// Double-precision tensor.
pub type Tensor64 = numerics::Tensor<f64>;
/// Single-precision autodiff tape.
pub type Tape32 = numerics::Tape<f32>;
/// Double-precision autodiff tape.
pub type Tape64 = numerics::Tape<f64>;
/// Single-precision style-transfer agent.
pub type Agent32 = seq2seq::AgentModel<f32>;
/// Double-precision style-transfer agent.
pub type Agent64 = seq2seq::AgentModel<f64>;

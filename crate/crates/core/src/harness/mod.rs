//! Evaluation and experiment orchestration.

pub mod bleu;

pub use bleu::{bleu, bleu_stats, BleuStats};

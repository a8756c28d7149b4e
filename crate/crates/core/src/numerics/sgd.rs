//! Plain SGD with optional global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    /// Global-norm clip; `None` reproduces unclipped SGD.
    pub clip_norm: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 1.0,
            clip_norm: Some(5.0),
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 {
                return Err(Error::Config(format!(
                    "clip_norm must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Apply one SGD update to the given parameter vars in place. Gradients are
/// read from the tape; parameters without an accumulated gradient are left
/// untouched. Returns the pre-clip global gradient norm.
pub fn sgd_step<F: Scalar>(tape: &mut Tape<F>, params: &[Var], cfg: &SgdConfig) -> Result<f64> {
    let mut sq_norm = 0.0f64;
    for &p in params {
        if let Some(g) = tape.grad(p) {
            sq_norm += g.sq_l2_norm().to_f64_lossy();
        }
    }
    let norm = sq_norm.sqrt();
    let mut factor = cfg.learning_rate;
    if let Some(clip) = cfg.clip_norm {
        if norm > clip {
            factor *= clip / norm;
        }
    }
    let step = F::of_f64(factor);
    for &p in params {
        if let Some(g) = tape.grad(p) {
            let g = g.clone();
            let mut value = tape.value(p).clone();
            value.add_scaled(&g, -step);
            tape.set_value(p, value);
        }
    }
    Ok(norm)
}

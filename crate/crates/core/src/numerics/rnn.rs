//! LSTM cell built from tape primitives.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Scalar;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::uniform_init;
use rand::Rng;

/// One LSTM layer's parameters; generic over the slot so the same struct holds
/// owned tensors (storage/checkpoints) or tape vars (bound for execution).
/// Gate order is input, forget, candidate, output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LstmParams<S> {
    pub wx: [S; 4],
    pub wh: [S; 4],
    pub b: [S; 4],
}

pub(crate) const GATE_NAMES: [&str; 4] = ["i", "f", "g", "o"];

impl<S> LstmParams<S> {
    pub fn map<S2>(self, path: &str, f: &mut impl FnMut(String, S) -> S2) -> LstmParams<S2> {
        let name = |kind: &str, gate: usize| format!("{path}.{kind}{}", GATE_NAMES[gate]);
        let mut gate = 0;
        let wx = self.wx.map(|s| {
            let out = f(name("wx", gate), s);
            gate += 1;
            out
        });
        gate = 0;
        let wh = self.wh.map(|s| {
            let out = f(name("wh", gate), s);
            gate += 1;
            out
        });
        gate = 0;
        let b = self.b.map(|s| {
            let out = f(name("b", gate), s);
            gate += 1;
            out
        });
        LstmParams { wx, wh, b }
    }

    pub fn visit<'a>(&'a self, path: &str, f: &mut impl FnMut(String, &'a S)) {
        for (gate, s) in self.wx.iter().enumerate() {
            f(format!("{path}.wx{}", GATE_NAMES[gate]), s);
        }
        for (gate, s) in self.wh.iter().enumerate() {
            f(format!("{path}.wh{}", GATE_NAMES[gate]), s);
        }
        for (gate, s) in self.b.iter().enumerate() {
            f(format!("{path}.b{}", GATE_NAMES[gate]), s);
        }
    }
}

impl<F: Scalar> LstmParams<Tensor<F>> {
    /// Uniform(-scale, scale) weights, zero biases except forget-gate bias +1.
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        let wx = core::array::from_fn(|_| uniform_init(&[input_dim, hidden], -scale, scale, rng));
        let wh = core::array::from_fn(|_| uniform_init(&[hidden, hidden], -scale, scale, rng));
        let b = core::array::from_fn(|gate| {
            if gate == 1 {
                Tensor::full(&[hidden], F::one())
            } else {
                Tensor::zeros(&[hidden])
            }
        });
        LstmParams { wx, wh, b }
    }

    pub fn hidden_size(&self) -> usize {
        self.b[0].len()
    }
}

/// Standard LSTM step: returns `(h, c)` for inputs `x` `[B×D]` and previous
/// state `(h_prev, c_prev)` `[B×H]`.
pub fn lstm_cell<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmParams<Var>,
) -> Result<(Var, Var)> {
    let gate = |tape: &mut Tape<F>, idx: usize| -> Result<Var> {
        let xw = tape.affine(x, p.wx[idx], p.b[idx])?;
        let hw = tape.matmul(h_prev, p.wh[idx], false, false)?;
        tape.add(xw, hw)
    };
    let i_pre = gate(tape, 0)?;
    let i = tape.sigmoid(i_pre);
    let f_pre = gate(tape, 1)?;
    let f = tape.sigmoid(f_pre);
    let g_pre = gate(tape, 2)?;
    let g = tape.tanh(g_pre);
    let o_pre = gate(tape, 3)?;
    let o = tape.sigmoid(o_pre);

    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let c_act = tape.tanh(c);
    let h = tape.mul(o, c_act)?;
    Ok((h, c))
}

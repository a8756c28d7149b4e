//! Bound-agent execution: batched encoding, attentional decode steps, greedy
//! decoding. Batches are padded; padded source positions are masked out of the
//! attention softmax and carried through the encoder state unchanged, so every
//! sentence computes exactly what it would alone.

use rand_chacha::ChaCha8Rng;

use crate::corpus::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::numerics::{lstm_cell, LstmParams, Tape, Tensor, Var};
use crate::scalar::Scalar;

use super::{DecoderParams, EncoderParams, ModelDims};

/// Agent parameters bound onto a tape.
#[derive(Clone)]
pub struct BoundAgent {
    pub encoder: EncoderParams<Var>,
    pub decoder: DecoderParams<Var>,
    pub dims: ModelDims,
}

impl BoundAgent {
    pub fn param_vars(&self) -> Vec<Var> {
        let mut vars = Vec::new();
        {
            let mut push = |_: String, v: &Var| vars.push(*v);
            self.encoder.visit("enc", &mut push);
            self.decoder.visit("dec", &mut push);
        }
        vars
    }
}

/// Dropout context threaded through forward passes during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

pub(crate) fn apply_dropout<F: Scalar>(
    tape: &mut Tape<F>,
    v: Var,
    ctx: &mut Option<Dropout>,
) -> Var {
    match ctx {
        Some(d) if d.rate > 0.0 => tape.dropout(v, d.rate, true, d.rng),
        _ => v,
    }
}

/// Encoder output: per-position annotations plus the sentence lengths that
/// drive attention masking.
pub struct EncodeOut {
    pub anns: Vec<Var>,
    pub lens: Vec<usize>,
}

/// Per-layer decoder recurrent state.
#[derive(Clone)]
pub struct DecState {
    pub layers: Vec<(Var, Var)>,
}

/// Encode a padded batch. Returns annotations (top-layer forward and backward
/// states concatenated per position) and the bridged initial decoder state.
pub fn encode<F: Scalar>(
    tape: &mut Tape<F>,
    enc: &EncoderParams<Var>,
    batch: &[Vec<usize>],
    dropout: &mut Option<Dropout>,
) -> Result<(EncodeOut, DecState)> {
    let b = batch.len();
    assert!(b > 0, "encode on empty batch");
    let lens: Vec<usize> = batch.iter().map(Vec::len).collect();
    let t_max = *lens.iter().max().unwrap();
    if t_max == 0 {
        return Err(Error::ShapeMismatch {
            op: "encode",
            detail: "empty source sentence".into(),
        });
    }
    let layers = enc.fw.len();
    let hidden = tape.value(enc.fw[0].b[0]).len();

    // Embeddings per position, shared by both directions.
    let mut embeds = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let ids: Vec<usize> = batch
            .iter()
            .map(|s| s.get(t).copied().unwrap_or(PAD))
            .collect();
        embeds.push(tape.embed(enc.embed, &ids)?);
    }

    // Per-position carry masks: 1 keeps the fresh state, 0 keeps the previous
    // one (padded slots), so final states equal each sentence's true last state.
    let mut keep_masks: Vec<Option<(Var, Var)>> = Vec::with_capacity(t_max);
    for t in 0..t_max {
        if lens.iter().all(|&l| t < l) {
            keep_masks.push(None);
        } else {
            let mut keep = Tensor::zeros(&[b, hidden]);
            let mut carry = Tensor::zeros(&[b, hidden]);
            for (row, &l) in lens.iter().enumerate() {
                let fill = if t < l { F::one() } else { F::zero() };
                let inv = F::one() - fill;
                for col in 0..hidden {
                    keep.set2(row, col, fill);
                    carry.set2(row, col, inv);
                }
            }
            keep_masks.push(Some((tape.leaf(keep), tape.leaf(carry))));
        }
    }

    let zero_state = || Tensor::<F>::zeros(&[b, hidden]);
    let run_direction = |tape: &mut Tape<F>,
                             params: &[LstmParams<Var>],
                             forward: bool,
                             dropout: &mut Option<Dropout>|
     -> Result<(Vec<Var>, Vec<(Var, Var)>)> {
        let mut inputs: Vec<Var> = embeds.clone();
        let mut finals = Vec::with_capacity(layers);
        let mut outputs: Vec<Var> = Vec::new();
        for layer_params in params.iter().take(layers) {
            let mut h = tape.leaf(zero_state());
            let mut c = tape.leaf(zero_state());
            let mut layer_out = vec![h; t_max];
            let order: Vec<usize> = if forward {
                (0..t_max).collect()
            } else {
                (0..t_max).rev().collect()
            };
            for &t in &order {
                let x = apply_dropout(tape, inputs[t], dropout);
                let (h_new, c_new) = lstm_cell(tape, x, h, c, layer_params)?;
                let (h_next, c_next) = match keep_masks[t] {
                    None => (h_new, c_new),
                    Some((keep, carry)) => {
                        let hk = tape.mul(h_new, keep)?;
                        let hc = tape.mul(h, carry)?;
                        let ck = tape.mul(c_new, keep)?;
                        let cc = tape.mul(c, carry)?;
                        (tape.add(hk, hc)?, tape.add(ck, cc)?)
                    }
                };
                h = h_next;
                c = c_next;
                layer_out[t] = h;
            }
            finals.push((h, c));
            inputs = layer_out.clone();
            outputs = layer_out;
        }
        Ok((outputs, finals))
    };

    let (fw_out, fw_finals) = run_direction(tape, &enc.fw, true, dropout)?;
    let (bw_out, bw_finals) = run_direction(tape, &enc.bw, false, dropout)?;

    let mut anns = Vec::with_capacity(t_max);
    for t in 0..t_max {
        anns.push(tape.concat_cols(&[fw_out[t], bw_out[t]])?);
    }

    let mut state_layers = Vec::with_capacity(layers);
    for l in 0..layers {
        let h_cat = tape.concat_cols(&[fw_finals[l].0, bw_finals[l].0])?;
        let h_aff = tape.affine(h_cat, enc.bridge_h[l].w, enc.bridge_h[l].b)?;
        let h0 = tape.tanh(h_aff);
        let c_cat = tape.concat_cols(&[fw_finals[l].1, bw_finals[l].1])?;
        let c_aff = tape.affine(c_cat, enc.bridge_c[l].w, enc.bridge_c[l].b)?;
        let c0 = tape.tanh(c_aff);
        state_layers.push((h0, c0));
    }

    Ok((EncodeOut { anns, lens }, DecState {
        layers: state_layers,
    }))
}

/// Attention tensors fixed for a batch: projected annotation keys and the
/// additive mask that zeroes padded positions.
pub struct AttnCache {
    pub keys: Vec<Var>,
    pub anns: Vec<Var>,
    pub mask: Option<Var>,
}

pub fn attn_cache<F: Scalar>(
    tape: &mut Tape<F>,
    dec: &DecoderParams<Var>,
    enc_out: &EncodeOut,
) -> Result<AttnCache> {
    let keys = enc_out
        .anns
        .iter()
        .map(|&a| tape.matmul(a, dec.attn, false, false))
        .collect::<Result<Vec<_>>>()?;
    let t_max = enc_out.anns.len();
    let b = enc_out.lens.len();
    let mask = if enc_out.lens.iter().all(|&l| l == t_max) {
        None
    } else {
        let mut m = Tensor::zeros(&[b, t_max]);
        for (row, &l) in enc_out.lens.iter().enumerate() {
            for t in l..t_max {
                m.set2(row, t, F::of_f64(crate::numerics::MASK_NEG));
            }
        }
        Some(tape.leaf(m))
    };
    Ok(AttnCache {
        keys,
        anns: enc_out.anns.clone(),
        mask,
    })
}

/// One decoder step: advance the stacked LSTM with the previous target token,
/// attend over the annotations, and project to a probability row per sentence.
pub fn decode_step<F: Scalar>(
    tape: &mut Tape<F>,
    dec: &DecoderParams<Var>,
    state: &DecState,
    prev_ids: &[usize],
    cache: &AttnCache,
    dropout: &mut Option<Dropout>,
) -> Result<(Var, DecState, Var)> {
    let embedded = tape.embed(dec.embed, prev_ids)?;
    let mut x = apply_dropout(tape, embedded, dropout);
    let mut new_layers = Vec::with_capacity(state.layers.len());
    for (l, params) in dec.layers.iter().enumerate() {
        if l > 0 {
            x = apply_dropout(tape, x, dropout);
        }
        let (h, c) = lstm_cell(tape, x, state.layers[l].0, state.layers[l].1, params)?;
        new_layers.push((h, c));
        x = h;
    }
    let top_h = new_layers.last().unwrap().0;
    let raw_scores = tape.attn_scores(top_h, &cache.keys)?;
    let scores = match cache.mask {
        Some(m) => tape.add(raw_scores, m)?,
        None => raw_scores,
    };
    let weights = tape.softmax(scores);
    let context = tape.attn_context(weights, &cache.anns)?;
    let cat = tape.concat_cols(&[context, top_h])?;
    let combined = tape.affine(cat, dec.combine.w, dec.combine.b)?;
    let attentional = tape.tanh(combined);
    let logits = tape.affine(attentional, dec.proj.w, dec.proj.b)?;
    let probs = tape.softmax(logits);
    Ok((
        probs,
        DecState { layers: new_layers },
        weights,
    ))
}

/// Greedy decode a batch: argmax each step (ties to the lower id), stop per
/// sentence at EOS or after `max_len` tokens; EOS is not part of the output.
pub fn greedy_decode_bound_batch<F: Scalar>(
    tape: &mut Tape<F>,
    agent: &BoundAgent,
    srcs: &[Vec<usize>],
    max_len: usize,
) -> Result<Vec<Vec<usize>>> {
    assert!(max_len >= 1, "max_len must be at least 1");
    let b = srcs.len();
    let (enc_out, mut state) = encode(tape, &agent.encoder, srcs, &mut None)?;
    let cache = attn_cache(tape, &agent.decoder, &enc_out)?;
    let mut prev = vec![BOS; b];
    let mut done = vec![false; b];
    let mut out = vec![Vec::new(); b];
    for _ in 0..max_len {
        let (probs, next_state, _) =
            decode_step(tape, &agent.decoder, &state, &prev, &cache, &mut None)?;
        state = next_state;
        let pv = tape.value(probs);
        for row in 0..b {
            if done[row] {
                prev[row] = EOS;
                continue;
            }
            let pick = pv.argmax_row(row);
            if pick == EOS {
                done[row] = true;
            } else {
                out[row].push(pick);
            }
            prev[row] = pick;
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    Ok(out)
}

/// Single-sentence greedy decode on an existing tape.
pub fn greedy_decode_bound<F: Scalar>(
    tape: &mut Tape<F>,
    agent: &BoundAgent,
    src: &[usize],
    max_len: usize,
) -> Result<Vec<usize>> {
    Ok(greedy_decode_bound_batch(tape, agent, &[src.to_vec()], max_len)?.remove(0))
}

/// Greedy decode from a stored agent on a scratch tape.
pub fn greedy_decode<F: Scalar>(
    agent: &super::AgentModel<F>,
    src: &[usize],
    max_len: usize,
) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let bound = agent.bind(&mut tape, false);
    greedy_decode_bound(&mut tape, &bound, src, max_len)
}

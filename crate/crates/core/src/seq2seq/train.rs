//! Teacher-forced training for one agent.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{denumericalize, Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::harness::bleu;
use crate::numerics::{sgd_step, SgdConfig, Tape, Var};
use crate::scalar::Scalar;
use crate::seeding;

use super::model::{
    attn_cache, decode_step, encode, greedy_decode_bound_batch, BoundAgent, Dropout,
};
use super::AgentModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early stop after this many dev evaluations without improvement.
    pub patience: Option<usize>,
    /// Epochs to run before the patience counter starts; attention models sit
    /// on a flat plateau before alignment kicks in.
    pub min_epochs: usize,
    pub max_decode_len: usize,
    /// Smooth the in-training dev BLEU used for checkpoint selection; the
    /// reported test BLEU is never smoothed.
    pub dev_bleu_smoothing: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            batch_size: 16,
            max_epochs: 55,
            patience: Some(8),
            min_epochs: 32,
            max_decode_len: 40,
            dev_bleu_smoothing: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainHyper {
    pub sgd: SgdConfig,
    pub dropout: f64,
    pub schedule: TrainSchedule,
}

impl Default for TrainHyper {
    /// Desk-scale defaults; the paper-scale preset uses lr 1.0, clip 5.0,
    /// dropout 0.3 and batch 32.
    fn default() -> Self {
        TrainHyper {
            sgd: SgdConfig {
                learning_rate: 2.0,
                clip_norm: Some(1.0),
            },
            dropout: 0.1,
            schedule: TrainSchedule::default(),
        }
    }
}

/// Numericalized data for one transfer direction.
#[derive(Clone, Debug, Default)]
pub struct TaskData {
    /// (source ids, target ids) labeled pairs.
    pub labeled: Vec<(Vec<usize>, Vec<usize>)>,
    pub dev_src: Vec<Vec<usize>>,
    /// Raw reference tokens (not clipped through any vocabulary).
    pub dev_refs: Vec<Vec<String>>,
}

/// Cycles shuffled indexes, reshuffling on wrap; batches never straddle a
/// reshuffle so an epoch of `ceil(n/b)` pulls visits every index exactly once.
pub struct BatchCycler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchCycler {
    pub fn new(n: usize, mut rng: ChaCha8Rng) -> Self {
        assert!(n > 0, "cannot cycle an empty set");
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        BatchCycler { order, pos: 0, rng }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        assert!(size > 0);
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let take = size.min(self.order.len() - self.pos);
        let batch = self.order[self.pos..self.pos + take].to_vec();
        self.pos += take;
        batch
    }

    pub fn batches_per_epoch(&self, size: usize) -> usize {
        self.order.len().div_ceil(size)
    }
}

/// Mean per-token cross-entropy under teacher forcing: the decoder consumes
/// BOS followed by the gold prefix and is scored against the gold tokens plus
/// EOS; padded positions are excluded from the mean.
pub fn teacher_forced_loss<F: Scalar>(
    tape: &mut Tape<F>,
    agent: &BoundAgent,
    srcs: &[Vec<usize>],
    tgts: &[Vec<usize>],
    dropout: &mut Option<Dropout>,
) -> Result<Var> {
    assert_eq!(srcs.len(), tgts.len());
    assert!(!srcs.is_empty());
    let b = srcs.len();
    let (enc_out, mut state) = encode(tape, &agent.encoder, srcs, dropout)?;
    let cache = attn_cache(tape, &agent.decoder, &enc_out)?;
    let t_dec = tgts.iter().map(Vec::len).max().unwrap() + 1;
    let mut acc: Option<Var> = None;
    let mut token_count = 0usize;
    for t in 0..t_dec {
        let prev: Vec<usize> = tgts
            .iter()
            .map(|tgt| {
                if t == 0 {
                    BOS
                } else {
                    tgt.get(t - 1).copied().unwrap_or(PAD)
                }
            })
            .collect();
        let mut targets = Vec::with_capacity(b);
        let mut mask = Vec::with_capacity(b);
        for tgt in tgts {
            if t < tgt.len() {
                targets.push(tgt[t]);
                mask.push(true);
            } else if t == tgt.len() {
                targets.push(EOS);
                mask.push(true);
            } else {
                targets.push(PAD);
                mask.push(false);
            }
        }
        token_count += mask.iter().filter(|&&m| m).count();
        let (probs, next_state, _) = decode_step(tape, &agent.decoder, &state, &prev, &cache, dropout)?;
        state = next_state;
        let nll = tape.nll_rows(probs, &targets, &mask)?;
        acc = Some(match acc {
            None => nll,
            Some(prev_acc) => tape.add(prev_acc, nll)?,
        });
    }
    let total = tape.sum(acc.expect("t_dec >= 1"));
    Ok(tape.scale(total, F::of_f64(1.0 / token_count as f64)))
}

/// Greedy-decode the dev set and score it against the references. The tape is
/// truncated to its parameter region after each chunk, so call this only
/// between training steps.
pub fn eval_dev_bleu<F: Scalar>(
    tape: &mut Tape<F>,
    agent: &BoundAgent,
    dev_src: &[Vec<usize>],
    dev_refs: &[Vec<String>],
    target_vocab: &Vocabulary,
    max_len: usize,
    smoothing: bool,
) -> Result<f64> {
    let mut hyps = Vec::with_capacity(dev_src.len());
    for chunk in dev_src.chunks(64) {
        let decoded = greedy_decode_bound_batch(tape, agent, chunk, max_len)?;
        tape.truncate();
        for ids in decoded {
            hyps.push(denumericalize(&ids, target_vocab)?);
        }
    }
    bleu(&hyps, dev_refs, 4, smoothing)
}

/// Mini-batch SGD over the teacher-forced loss with per-epoch dev BLEU
/// evaluation; returns the best-dev checkpoint and the dev trace.
pub fn train_atts2s<F: Scalar>(
    init: &AgentModel<F>,
    data: &TaskData,
    hp: &TrainHyper,
    seed: u64,
) -> Result<(AgentModel<F>, Vec<f64>)> {
    if data.labeled.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut tape: Tape<F> = Tape::new();
    let bound = init.bind(&mut tape, true);
    tape.mark_params_end();
    let params = bound.param_vars();

    let mut cycler = BatchCycler::new(data.labeled.len(), seeding::stream(seed, "batches"));
    let mut dropout_rng = seeding::stream(seed, "dropout");
    let steps_per_epoch = cycler.batches_per_epoch(hp.schedule.batch_size);

    let mut best = init.clone();
    let mut best_bleu = f64::NEG_INFINITY;
    let mut stale = 0usize;
    let mut trace = Vec::with_capacity(hp.schedule.max_epochs);

    for epoch in 0..hp.schedule.max_epochs {
        for _ in 0..steps_per_epoch {
            let idx = cycler.next_batch(hp.schedule.batch_size);
            let srcs: Vec<Vec<usize>> = idx.iter().map(|&i| data.labeled[i].0.clone()).collect();
            let tgts: Vec<Vec<usize>> = idx.iter().map(|&i| data.labeled[i].1.clone()).collect();
            tape.zero_all_grads();
            tape.truncate();
            let mut ctx = Some(Dropout {
                rate: hp.dropout,
                rng: &mut dropout_rng,
            });
            let loss = teacher_forced_loss(&mut tape, &bound, &srcs, &tgts, &mut ctx)?;
            tape.backward(loss)?;
            sgd_step(&mut tape, &params, &hp.sgd)?;
        }
        tape.truncate();
        let dev = eval_dev_bleu(
            &mut tape,
            &bound,
            &data.dev_src,
            &data.dev_refs,
            &init.target_vocab,
            hp.schedule.max_decode_len,
            hp.schedule.dev_bleu_smoothing,
        )?;
        trace.push(dev);
        if dev > best_bleu {
            best_bleu = dev;
            best = init.export(&tape, &bound);
            stale = 0;
        } else {
            stale += 1;
            if let Some(p) = hp.schedule.patience {
                if stale >= p && epoch + 1 >= hp.schedule.min_epochs {
                    break;
                }
            }
        }
    }
    Ok((best, trace))
}

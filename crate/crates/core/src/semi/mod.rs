//! Semi-supervised training: four networks (source/target encoders and
//! decoders) jointly trained by three randomly interleaved routes —
//! supervised transfer, back-translation round trip, and denoising
//! auto-encoding. The shipped artifact is the (source encoder, target
//! decoder) pair.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{apply_noise, numericalize, NoiseConfig, StyleId, Vocabulary, UNK};
use crate::error::{Error, Result};
use crate::numerics::{digest_params, sgd_step, NamedTensor, ParamReader, Tape, Tensor, Var};
use crate::scalar::Scalar;
use crate::seeding;
use crate::seq2seq::{
    eval_dev_bleu, greedy_decode_bound_batch, teacher_forced_loss, AgentModel, BatchCycler,
    BoundAgent, DecoderParams, Dropout, EncoderParams, ModelDims, TrainHyper,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RouteKind {
    Supervised,
    BackTranslation,
    Dae,
}

/// Categorical route draw; deterministic under a seeded rng.
pub fn sample_route<R: Rng>(route_probs: &[f64; 3], rng: &mut R) -> RouteKind {
    let pick = rng.gen::<f64>() * (route_probs[0] + route_probs[1] + route_probs[2]);
    if pick < route_probs[0] {
        RouteKind::Supervised
    } else if pick < route_probs[0] + route_probs[1] {
        RouteKind::BackTranslation
    } else {
        RouteKind::Dae
    }
}

/// The four-network semi-supervised model for one transfer direction.
/// `enc_src`/`dec_tgt` realize the shipped direction; `enc_tgt`/`dec_src`
/// support the back-translation and denoising routes. The back-translation
/// round trip re-encodes generated target text with the same `enc_tgt`
/// parameters the denoising route trains.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SemiModel<F: Scalar> {
    pub source_style: StyleId,
    pub target_style: StyleId,
    pub dims: ModelDims,
    pub source_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
    pub route_probs: [f64; 3],
    pub enc_src: EncoderParams<Tensor<F>>,
    pub dec_src: DecoderParams<Tensor<F>>,
    pub enc_tgt: EncoderParams<Tensor<F>>,
    pub dec_tgt: DecoderParams<Tensor<F>>,
}

/// Semi model bound onto a tape: the forward (source->target) and reverse
/// (target->source) agent views share parameter vars.
pub struct BoundSemi {
    pub forward: BoundAgent,
    pub reverse: BoundAgent,
}

impl<F: Scalar> SemiModel<F> {
    /// The shipped pair (`enc_src`, `dec_tgt`) draws from the same named
    /// streams as [`AgentModel::init`], so a Semi model and a plain agent
    /// initialized from one seed start from identical parameters.
    pub fn init(
        source_style: StyleId,
        target_style: StyleId,
        source_vocab: Vocabulary,
        target_vocab: Vocabulary,
        dims: ModelDims,
        route_probs: [f64; 3],
        seed: u64,
    ) -> Self {
        SemiModel {
            enc_src: EncoderParams::init(
                source_vocab.size(),
                dims,
                &mut seeding::stream(seed, "init/enc_src"),
            ),
            dec_src: DecoderParams::init(
                source_vocab.size(),
                dims,
                &mut seeding::stream(seed, "init/dec_src"),
            ),
            enc_tgt: EncoderParams::init(
                target_vocab.size(),
                dims,
                &mut seeding::stream(seed, "init/enc_tgt"),
            ),
            dec_tgt: DecoderParams::init(
                target_vocab.size(),
                dims,
                &mut seeding::stream(seed, "init/dec_tgt"),
            ),
            source_style,
            target_style,
            dims,
            source_vocab,
            target_vocab,
            route_probs,
        }
    }

    pub fn bind(&self, tape: &mut Tape<F>, trainable: bool) -> BoundSemi {
        let mut slot = |_: String, t: Tensor<F>| {
            if trainable {
                tape.param(t)
            } else {
                tape.leaf(t)
            }
        };
        let enc_src = self.enc_src.clone().map("enc_src", &mut slot);
        let dec_src = self.dec_src.clone().map("dec_src", &mut slot);
        let enc_tgt = self.enc_tgt.clone().map("enc_tgt", &mut slot);
        let dec_tgt = self.dec_tgt.clone().map("dec_tgt", &mut slot);
        BoundSemi {
            forward: BoundAgent {
                encoder: enc_src.clone(),
                decoder: dec_tgt,
                dims: self.dims,
            },
            reverse: BoundAgent {
                encoder: enc_tgt,
                decoder: dec_src,
                dims: self.dims,
            },
        }
    }

    pub fn export(&self, tape: &Tape<F>, bound: &BoundSemi) -> SemiModel<F> {
        let mut read = |_: String, v: Var| tape.value(v).clone();
        SemiModel {
            enc_src: bound.forward.encoder.clone().map("enc_src", &mut read),
            dec_src: bound.reverse.decoder.clone().map("dec_src", &mut read),
            enc_tgt: bound.reverse.encoder.clone().map("enc_tgt", &mut read),
            dec_tgt: bound.forward.decoder.clone().map("dec_tgt", &mut read),
            ..self.clone()
        }
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor<F>> {
        let mut out = Vec::new();
        {
            let mut push = |name: String, t: &Tensor<F>| out.push(NamedTensor::new(name, t));
            self.enc_src.visit("enc_src", &mut push);
            self.dec_src.visit("dec_src", &mut push);
            self.enc_tgt.visit("enc_tgt", &mut push);
            self.dec_tgt.visit("dec_tgt", &mut push);
        }
        out.sort_by(|a, b| a.name.cmp(&b.name));
        out
    }

    pub fn digest(&self) -> String {
        digest_params(&self.named_tensors())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = SemiCheckpoint {
            format: SEMI_FORMAT.to_string(),
            dtype: F::DTYPE.to_string(),
            source_style: self.source_style.clone(),
            target_style: self.target_style.clone(),
            dims: self.dims,
            source_vocab: self.source_vocab.clone(),
            target_vocab: self.target_vocab.clone(),
            route_probs: self.route_probs,
            params: self.named_tensors(),
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file: SemiCheckpoint<F> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.format != SEMI_FORMAT {
            return Err(Error::Format(format!(
                "unexpected checkpoint format {}",
                file.format
            )));
        }
        if file.dtype != F::DTYPE {
            return Err(Error::Format(format!(
                "checkpoint dtype {} does not match build dtype {}",
                file.dtype,
                F::DTYPE
            )));
        }
        let template = SemiModel::init(
            file.source_style.clone(),
            file.target_style.clone(),
            file.source_vocab.clone(),
            file.target_vocab.clone(),
            file.dims,
            file.route_probs,
            0,
        );
        let mut reader = ParamReader::new(file.params)?;
        let mut err: Option<Error> = None;
        let mut fill = |name: String, t: Tensor<F>| match reader.take(&name) {
            Ok(loaded) if loaded.shape() == t.shape() => loaded,
            Ok(loaded) => {
                err.get_or_insert(Error::VocabMismatch(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    loaded.shape(),
                    t.shape()
                )));
                t
            }
            Err(e) => {
                err.get_or_insert(e);
                t
            }
        };
        let enc_src = template.enc_src.map("enc_src", &mut fill);
        let dec_src = template.dec_src.map("dec_src", &mut fill);
        let enc_tgt = template.enc_tgt.map("enc_tgt", &mut fill);
        let dec_tgt = template.dec_tgt.map("dec_tgt", &mut fill);
        if let Some(e) = err {
            return Err(e);
        }
        reader.finish()?;
        Ok(SemiModel {
            source_style: file.source_style,
            target_style: file.target_style,
            dims: file.dims,
            source_vocab: file.source_vocab,
            target_vocab: file.target_vocab,
            route_probs: file.route_probs,
            enc_src,
            dec_src,
            enc_tgt,
            dec_tgt,
        })
    }

    /// The trained artifact: the source encoder and target decoder, dropping
    /// the two auxiliary networks.
    pub fn extract_agent(&self) -> AgentModel<F> {
        AgentModel {
            source_style: self.source_style.clone(),
            target_style: self.target_style.clone(),
            dims: self.dims,
            source_vocab: self.source_vocab.clone(),
            target_vocab: self.target_vocab.clone(),
            encoder: self.enc_src.clone(),
            decoder: self.dec_tgt.clone(),
        }
    }
}

const SEMI_FORMAT: &str = "mast.semi.v1";

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct SemiCheckpoint<F: Scalar> {
    format: String,
    dtype: String,
    source_style: StyleId,
    target_style: StyleId,
    dims: ModelDims,
    source_vocab: Vocabulary,
    target_vocab: Vocabulary,
    route_probs: [f64; 3],
    params: Vec<NamedTensor<F>>,
}

/// Supervised route: teacher-forced transfer through the shipped pair.
pub fn route_supervised<F: Scalar>(
    tape: &mut Tape<F>,
    semi: &BoundSemi,
    srcs: &[Vec<usize>],
    tgts: &[Vec<usize>],
    dropout: &mut Option<Dropout>,
) -> Result<Var> {
    teacher_forced_loss(tape, &semi.forward, srcs, tgts, dropout)
}

/// Back-translation route: greedily generate target-style text from unlabeled
/// source sentences with no gradient, then reconstruct the source from it
/// through the reverse pair. Empty generations are replaced by a single UNK.
pub fn route_backtranslation<F: Scalar>(
    tape: &mut Tape<F>,
    semi: &BoundSemi,
    unlabeled_src: &[Vec<usize>],
    max_len: usize,
    dropout: &mut Option<Dropout>,
) -> Result<Var> {
    assert!(!unlabeled_src.is_empty());
    let generated = greedy_decode_bound_batch(tape, &semi.forward, unlabeled_src, max_len)?;
    tape.truncate();
    let synthetic: Vec<Vec<usize>> = generated
        .into_iter()
        .map(|ids| if ids.is_empty() { vec![UNK] } else { ids })
        .collect();
    teacher_forced_loss(tape, &semi.reverse, &synthetic, unlabeled_src, dropout)
}

/// Denoising route: reconstruct clean target-style sentences from noised
/// copies through the target-side autoencoder pair.
pub fn route_dae<F: Scalar>(
    tape: &mut Tape<F>,
    semi: &BoundSemi,
    unlabeled_tgt_tokens: &[Vec<String>],
    target_vocab: &Vocabulary,
    noise: &NoiseConfig,
    noise_rng: &mut ChaCha8Rng,
    dropout: &mut Option<Dropout>,
) -> Result<Var> {
    assert!(!unlabeled_tgt_tokens.is_empty());
    let mut noised = Vec::with_capacity(unlabeled_tgt_tokens.len());
    let mut clean = Vec::with_capacity(unlabeled_tgt_tokens.len());
    for sentence in unlabeled_tgt_tokens {
        let corrupted = apply_noise(sentence, noise, noise_rng);
        noised.push(numericalize(&corrupted, target_vocab));
        clean.push(numericalize(sentence, target_vocab));
    }
    let dae = BoundAgent {
        encoder: semi.reverse.encoder.clone(),
        decoder: semi.forward.decoder.clone(),
        dims: semi.forward.dims,
    };
    teacher_forced_loss(tape, &dae, &noised, &clean, dropout)
}

/// Unlabeled pools for one direction: source-style sentences ids for
/// back-translation, raw target-style tokens for denoising.
#[derive(Clone, Debug, Default)]
pub struct SemiPools {
    pub unlabeled_src: Vec<Vec<usize>>,
    pub unlabeled_tgt_tokens: Vec<Vec<String>>,
}

/// Jointly train the four networks, sampling one route per batch; returns the
/// best-dev model and the dev-BLEU trace. With route probabilities (1,0,0)
/// and the same seed this follows the exact parameter trajectory of
/// [`crate::seq2seq::train_atts2s`].
pub fn train_semi<F: Scalar>(
    init: &SemiModel<F>,
    data: &crate::seq2seq::TaskData,
    pools: &SemiPools,
    noise: &NoiseConfig,
    hp: &TrainHyper,
    seed: u64,
) -> Result<(SemiModel<F>, Vec<f64>)> {
    if data.labeled.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let needs_bt = init.route_probs[1] > 0.0;
    let needs_dae = init.route_probs[2] > 0.0;
    if (needs_bt && pools.unlabeled_src.is_empty()) || (needs_dae && pools.unlabeled_tgt_tokens.is_empty())
    {
        return Err(Error::EmptyTrainingSet);
    }
    let mut tape: Tape<F> = Tape::new();
    let bound = init.bind(&mut tape, true);
    tape.mark_params_end();
    let params: Vec<Var> = {
        let mut vars = bound.forward.param_vars();
        vars.extend(bound.reverse.param_vars());
        vars
    };

    let mut labeled_cycler = BatchCycler::new(data.labeled.len(), seeding::stream(seed, "batches"));
    let mut bt_cycler = needs_bt
        .then(|| BatchCycler::new(pools.unlabeled_src.len(), seeding::stream(seed, "batches/bt")));
    let mut dae_cycler = needs_dae.then(|| {
        BatchCycler::new(
            pools.unlabeled_tgt_tokens.len(),
            seeding::stream(seed, "batches/dae"),
        )
    });
    let mut dropout_rng = seeding::stream(seed, "dropout");
    let mut route_rng = seeding::stream(seed, "routes");
    let mut noise_rng = seeding::stream(seed, "noise");
    let steps_per_epoch = labeled_cycler.batches_per_epoch(hp.schedule.batch_size);

    let mut best = init.clone();
    let mut best_bleu = f64::NEG_INFINITY;
    let mut stale = 0usize;
    let mut trace = Vec::with_capacity(hp.schedule.max_epochs);

    for epoch in 0..hp.schedule.max_epochs {
        for _ in 0..steps_per_epoch {
            tape.zero_all_grads();
            tape.truncate();
            let mut ctx = Some(Dropout {
                rate: hp.dropout,
                rng: &mut dropout_rng,
            });
            let loss = match sample_route(&init.route_probs, &mut route_rng) {
                RouteKind::Supervised => {
                    let idx = labeled_cycler.next_batch(hp.schedule.batch_size);
                    let srcs: Vec<Vec<usize>> =
                        idx.iter().map(|&i| data.labeled[i].0.clone()).collect();
                    let tgts: Vec<Vec<usize>> =
                        idx.iter().map(|&i| data.labeled[i].1.clone()).collect();
                    route_supervised(&mut tape, &bound, &srcs, &tgts, &mut ctx)?
                }
                RouteKind::BackTranslation => {
                    let cycler = bt_cycler.as_mut().expect("checked above");
                    let idx = cycler.next_batch(hp.schedule.batch_size);
                    let srcs: Vec<Vec<usize>> = idx
                        .iter()
                        .map(|&i| pools.unlabeled_src[i].clone())
                        .collect();
                    route_backtranslation(
                        &mut tape,
                        &bound,
                        &srcs,
                        hp.schedule.max_decode_len,
                        &mut ctx,
                    )?
                }
                RouteKind::Dae => {
                    let cycler = dae_cycler.as_mut().expect("checked above");
                    let idx = cycler.next_batch(hp.schedule.batch_size);
                    let batch: Vec<Vec<String>> = idx
                        .iter()
                        .map(|&i| pools.unlabeled_tgt_tokens[i].clone())
                        .collect();
                    route_dae(
                        &mut tape,
                        &bound,
                        &batch,
                        &init.target_vocab,
                        noise,
                        &mut noise_rng,
                        &mut ctx,
                    )?
                }
            };
            tape.backward(loss)?;
            sgd_step(&mut tape, &params, &hp.sgd)?;
        }
        tape.truncate();
        let dev = eval_dev_bleu(
            &mut tape,
            &bound.forward,
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

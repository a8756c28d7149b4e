//! Binary style classifier: embedding, one LSTM layer, attention pooling
//! into a single feature vector, and a two-way output layer.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocabulary, numericalize, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::numerics::{
    digest_params, lstm_cell, sgd_step, LstmParams, NamedTensor, SgdConfig, Tape, Tensor, Var,
    MASK_NEG,
};
use crate::scalar::Scalar;
use crate::seeding;
use crate::seq2seq::{Affine, INIT_ATTN_SCALE, INIT_EMBED_SCALE, INIT_SCALE};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub embed: usize,
    pub vocab_max: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub sgd: SgdConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 32,
            embed: 32,
            vocab_max: 2000,
            epochs: 10,
            batch_size: 32,
            dropout: 0.1,
            sgd: SgdConfig {
                learning_rate: 1.0,
                clip_norm: Some(1.0),
            },
        }
    }
}

/// Trained pairwise classifier; output index 0 is the first style.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StyleClassifier<F: Scalar> {
    pub style_a: String,
    pub style_b: String,
    pub vocab: Vocabulary,
    pub embed: Tensor<F>,
    pub lstm: LstmParams<Tensor<F>>,
    pub attn_v: Tensor<F>,
    pub fc: Affine<Tensor<F>>,
}

pub struct BoundClassifier {
    pub embed: Var,
    pub lstm: LstmParams<Var>,
    pub attn_v: Var,
    pub fc: Affine<Var>,
}

impl<F: Scalar> StyleClassifier<F> {
    fn init(
        style_a: String,
        style_b: String,
        vocab: Vocabulary,
        cfg: &ClassifierConfig,
        seed: u64,
    ) -> Self {
        let rng = &mut seeding::stream(seed, "init/classifier");
        StyleClassifier {
            embed: crate::numerics::uniform_init(
                &[vocab.size(), cfg.embed],
                -INIT_EMBED_SCALE,
                INIT_EMBED_SCALE,
                rng,
            ),
            lstm: LstmParams::init(cfg.embed, cfg.hidden, INIT_SCALE, rng),
            attn_v: crate::numerics::uniform_init(
                &[1, cfg.hidden],
                -INIT_ATTN_SCALE,
                INIT_ATTN_SCALE,
                rng,
            ),
            fc: Affine::init(cfg.hidden, 2, rng),
            style_a,
            style_b,
            vocab,
        }
    }

    pub fn bind(&self, tape: &mut Tape<F>, trainable: bool) -> BoundClassifier {
        let mut slot = |_: String, t: Tensor<F>| {
            if trainable {
                tape.param(t)
            } else {
                tape.leaf(t)
            }
        };
        BoundClassifier {
            embed: slot("embed".into(), self.embed.clone()),
            lstm: self.lstm.clone().map("lstm", &mut slot),
            attn_v: slot("attn_v".into(), self.attn_v.clone()),
            fc: self.fc.clone().map("fc", &mut slot),
        }
    }

    fn export(&self, tape: &Tape<F>, bound: &BoundClassifier) -> StyleClassifier<F> {
        let mut read = |_: String, v: Var| tape.value(v).clone();
        StyleClassifier {
            embed: tape.value(bound.embed).clone(),
            lstm: bound.lstm.clone().map("lstm", &mut read),
            attn_v: tape.value(bound.attn_v).clone(),
            fc: bound.fc.clone().map("fc", &mut read),
            ..self.clone()
        }
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor<F>> {
        let mut out = vec![
            NamedTensor::new("embed".into(), &self.embed),
            NamedTensor::new("attn_v".into(), &self.attn_v),
        ];
        {
            let mut push = |name: String, t: &Tensor<F>| out.push(NamedTensor::new(name, t));
            self.lstm.visit("lstm", &mut push);
            self.fc.visit("fc", &mut push);
        }
        out.sort_by(|a, b| a.name.cmp(&b.name));
        out
    }

    pub fn digest(&self) -> String {
        digest_params(&self.named_tensors())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Forward pass: probability rows over {style_a, style_b}.
pub fn classify_batch<F: Scalar>(
    tape: &mut Tape<F>,
    bound: &BoundClassifier,
    batch: &[Vec<usize>],
    dropout: &mut Option<crate::seq2seq::Dropout>,
) -> Result<Var> {
    assert!(!batch.is_empty());
    let b = batch.len();
    let lens: Vec<usize> = batch.iter().map(Vec::len).collect();
    let t_max = *lens.iter().max().unwrap();
    if t_max == 0 {
        return Err(Error::ShapeMismatch {
            op: "classify",
            detail: "empty sentence".into(),
        });
    }
    let hidden = tape.value(bound.lstm.b[0]).len();
    let mut h = tape.leaf(Tensor::zeros(&[b, hidden]));
    let mut c = tape.leaf(Tensor::zeros(&[b, hidden]));
    let mut states = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let ids: Vec<usize> = batch
            .iter()
            .map(|s| s.get(t).copied().unwrap_or(PAD))
            .collect();
        let embedded = tape.embed(bound.embed, &ids)?;
        let x = crate::seq2seq::apply_dropout(tape, embedded, dropout);
        let (h2, c2) = lstm_cell(tape, x, h, c, &bound.lstm)?;
        h = h2;
        c = c2;
        states.push(h);
    }
    let query = tape.broadcast_rows(bound.attn_v, b)?;
    let raw_scores = tape.attn_scores(query, &states)?;
    let scores = if lens.iter().all(|&l| l == t_max) {
        raw_scores
    } else {
        let mut m = Tensor::zeros(&[b, t_max]);
        for (row, &l) in lens.iter().enumerate() {
            for t in l..t_max {
                m.set2(row, t, F::of_f64(MASK_NEG));
            }
        }
        let mask = tape.leaf(m);
        tape.add(raw_scores, mask)?
    };
    let weights = tape.softmax(scores);
    let pooled = tape.attn_context(weights, &states)?;
    let logits = tape.affine(pooled, bound.fc.w, bound.fc.b)?;
    Ok(tape.softmax(logits))
}

/// Train a binary classifier on two styles' sentences. Classes are balanced
/// by downsampling the larger side before training; the vocabulary is built
/// from the balanced training sentences.
pub fn train_pair_classifier<F: Scalar>(
    style_a: &str,
    style_b: &str,
    sentences_a: &[Vec<String>],
    sentences_b: &[Vec<String>],
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<StyleClassifier<F>> {
    if sentences_a.is_empty() {
        return Err(Error::EmptyClass(style_a.to_string()));
    }
    if sentences_b.is_empty() {
        return Err(Error::EmptyClass(style_b.to_string()));
    }
    let keep = sentences_a.len().min(sentences_b.len());
    let mut balance_rng = seeding::stream(seed, "downsample");
    let mut downsample = |sentences: &[Vec<String>]| -> Vec<Vec<String>> {
        let mut idx: Vec<usize> = (0..sentences.len()).collect();
        idx.shuffle(&mut balance_rng);
        idx.truncate(keep);
        idx.sort_unstable();
        idx.into_iter().map(|i| sentences[i].clone()).collect()
    };
    let kept_a = downsample(sentences_a);
    let kept_b = downsample(sentences_b);

    let vocab = build_vocabulary(
        kept_a.iter().chain(kept_b.iter()).map(|s| s.as_slice()),
        cfg.vocab_max,
        1,
    )?;
    let mut examples: Vec<(Vec<usize>, usize)> = Vec::with_capacity(2 * keep);
    for s in &kept_a {
        examples.push((guard_nonempty(numericalize(s, &vocab)), 0));
    }
    for s in &kept_b {
        examples.push((guard_nonempty(numericalize(s, &vocab)), 1));
    }

    let init = StyleClassifier::init(
        style_a.to_string(),
        style_b.to_string(),
        vocab,
        cfg,
        seed,
    );
    let mut tape: Tape<F> = Tape::new();
    let bound = init.bind(&mut tape, true);
    tape.mark_params_end();
    let params: Vec<Var> = {
        let mut vars = vec![bound.embed, bound.attn_v];
        bound.lstm.visit("lstm", &mut |_, v: &Var| vars.push(*v));
        bound.fc.visit("fc", &mut |_, v: &Var| vars.push(*v));
        vars
    };
    let mut cycler =
        crate::seq2seq::BatchCycler::new(examples.len(), seeding::stream(seed, "batches"));
    let mut dropout_rng = seeding::stream(seed, "dropout");
    let steps = cycler.batches_per_epoch(cfg.batch_size);
    let inv_b = |n: usize| F::of_f64(1.0 / n as f64);
    for _ in 0..cfg.epochs {
        for _ in 0..steps {
            let idx = cycler.next_batch(cfg.batch_size);
            let batch: Vec<Vec<usize>> = idx.iter().map(|&i| examples[i].0.clone()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| examples[i].1).collect();
            tape.zero_all_grads();
            tape.truncate();
            let mut ctx = Some(crate::seq2seq::Dropout {
                rate: cfg.dropout,
                rng: &mut dropout_rng,
            });
            let probs = classify_batch(&mut tape, &bound, &batch, &mut ctx)?;
            let mask = vec![true; batch.len()];
            let nll = tape.nll_rows(probs, &labels, &mask)?;
            let total = tape.sum(nll);
            let loss = tape.scale(total, inv_b(batch.len()));
            tape.backward(loss)?;
            sgd_step(&mut tape, &params, &cfg.sgd)?;
        }
    }
    tape.truncate();
    Ok(init.export(&tape, &bound))
}

fn guard_nonempty(mut ids: Vec<usize>) -> Vec<usize> {
    if ids.is_empty() {
        ids.push(crate::corpus::UNK);
    }
    ids
}

/// Macro-averaged accuracy over two dev sets: each class contributes its own
/// accuracy with equal weight.
pub fn classifier_accuracy<F: Scalar>(
    classifier: &StyleClassifier<F>,
    dev_a: &[Vec<String>],
    dev_b: &[Vec<String>],
) -> Result<f64> {
    if dev_a.is_empty() {
        return Err(Error::EmptyClass(classifier.style_a.clone()));
    }
    if dev_b.is_empty() {
        return Err(Error::EmptyClass(classifier.style_b.clone()));
    }
    let mut tape: Tape<F> = Tape::new();
    let bound = classifier.bind(&mut tape, false);
    tape.mark_params_end();
    let mut class_acc = [0.0f64; 2];
    for (label, dev) in [(0usize, dev_a), (1usize, dev_b)] {
        let mut correct = 0usize;
        for chunk in dev.chunks(64) {
            let batch: Vec<Vec<usize>> = chunk
                .iter()
                .map(|s| guard_nonempty(numericalize(s, &classifier.vocab)))
                .collect();
            let probs = classify_batch(&mut tape, &bound, &batch, &mut None)?;
            let pv = tape.value(probs);
            for row in 0..batch.len() {
                if pv.argmax_row(row) == label {
                    correct += 1;
                }
            }
            tape.truncate();
        }
        class_acc[label] = correct as f64 / dev.len() as f64;
    }
    Ok((class_acc[0] + class_acc[1]) / 2.0)
}

//! Multi-agent training and decoding: a trainable controller predicts
//! per-timestep weights over k+1 frozen agents; their local distributions are
//! mapped into a shared global action space and mixed, predictions feed back
//! to every agent so the ensemble advances in lockstep.

mod controller;
mod global;

pub use controller::{controller_step, BoundController, Controller, ControllerDims, CtrlCache};
pub use global::{build_global_vocab, map_local_to_global, GlobalVocab};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{numericalize, Vocabulary, BOS, EOS, UNK};
use crate::error::{Error, Result};
use crate::numerics::{sgd_step, NamedTensor, Tape, Tensor, Var};
use crate::scalar::Scalar;
use crate::seeding;
use crate::seq2seq::{
    attn_cache, decode_step, encode, AgentModel, AttnCache, BoundAgent, DecState, Dropout,
    TrainHyper,
};

/// Mixed distribution over the global action space plus the weights that
/// produced it.
#[derive(Clone, Debug)]
pub struct MixtureDistribution<F: Scalar> {
    pub probs: Tensor<F>,
    pub weights: Tensor<F>,
}

/// Plain-tensor mixture: `p = sum_j M(w_j * p_j)` over the global space.
pub fn mixture_step<F: Scalar>(
    dists: &[Tensor<F>],
    weights: &Tensor<F>,
    gv: &GlobalVocab,
) -> Result<MixtureDistribution<F>> {
    if dists.len() != gv.agents() || weights.len() != gv.agents() {
        return Err(Error::ShapeMismatch {
            op: "mixture_step",
            detail: format!(
                "{} distributions, {} weights, {} agents",
                dists.len(),
                weights.len(),
                gv.agents()
            ),
        });
    }
    let mut probs = Tensor::zeros(&[gv.size()]);
    for (j, dist) in dists.iter().enumerate() {
        let w = weights.data()[j];
        let scaled = dist.map(|p| p * w);
        let mapped = map_local_to_global(&gv.maps[j], &scaled, gv.size())?;
        probs.add_assign(&mapped);
    }
    Ok(MixtureDistribution {
        probs,
        weights: weights.clone(),
    })
}

/// Greedy feedback: for each agent, the argmax of the mixture restricted to
/// its own action space, as a local id (ties to the lowest global index; an
/// all-zero restriction yields UNK).
pub fn per_agent_feedback<F: Scalar>(probs: &Tensor<F>, gv: &GlobalVocab) -> Vec<usize> {
    (0..gv.agents())
        .map(|j| {
            let mut best: Option<(usize, F)> = None;
            for (g, &p) in probs.data().iter().enumerate() {
                if !gv.masks[j][g] || p <= F::zero() {
                    continue;
                }
                match best {
                    Some((_, bv)) if p <= bv => {}
                    _ => best = Some((g, p)),
                }
            }
            match best {
                Some((g, _)) => gv.to_local(j, g).expect("masked index maps back"),
                None => UNK,
            }
        })
        .collect()
}

/// How decoded tokens are emitted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emission {
    /// Agent 0's restricted argmax stream, in its own target vocabulary.
    #[default]
    OwnVocab,
    /// The unrestricted global argmax token per step (ablation only; the stop
    /// rule still follows agent 0's stream).
    GlobalArgmax,
}

pub struct MatStats {
    /// Gold tokens that fell outside the global action space and were scored
    /// against global UNK.
    pub unk_references: usize,
    /// Digests of the frozen agents read back off the training tape.
    pub agent_digests_after: Vec<String>,
}

struct JointSystem<'a> {
    agents: Vec<BoundAgent>,
    controller: BoundController,
    gv: &'a GlobalVocab,
}

struct SentenceRun {
    agent_states: Vec<DecState>,
    agent_caches: Vec<AttnCache>,
    prev: Vec<usize>,
    ctrl_cache: CtrlCache,
    ctrl_state: (Var, Var),
}

impl<'a> JointSystem<'a> {
    /// Encode the source with every agent and the controller; all previous
    /// predictions start at BOS.
    fn start<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        agents_meta: &[&AgentModel<F>],
        controller: &Controller<F>,
        src_tokens: &[String],
    ) -> Result<SentenceRun> {
        let mut agent_states = Vec::with_capacity(self.agents.len());
        let mut agent_caches = Vec::with_capacity(self.agents.len());
        for (bound, meta) in self.agents.iter().zip(agents_meta) {
            let ids = nonempty(numericalize(src_tokens, &meta.source_vocab));
            let (enc_out, state) = encode(tape, &bound.encoder, &[ids], &mut None)?;
            let cache = attn_cache(tape, &bound.decoder, &enc_out)?;
            agent_states.push(state);
            agent_caches.push(cache);
        }
        let ids = nonempty(numericalize(src_tokens, &controller.src_vocab));
        let (ctrl_cache, ctrl_state) =
            controller::controller_encode(tape, &self.controller, &ids)?;
        Ok(SentenceRun {
            agent_states,
            agent_caches,
            prev: vec![BOS; self.agents.len()],
            ctrl_cache,
            ctrl_state,
        })
    }

    /// One lockstep timestep: query every agent with its own previous
    /// prediction, the controller with agent 0's, mix into the global space,
    /// and compute the greedy feedback. Returns the mixture var and feedback.
    fn step<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        run: &mut SentenceRun,
        dropout: &mut Option<Dropout>,
    ) -> Result<(Var, Vec<usize>)> {
        let mut dists = Vec::with_capacity(self.agents.len());
        for (j, bound) in self.agents.iter().enumerate() {
            let (probs, state, _) = decode_step(
                tape,
                &bound.decoder,
                &run.agent_states[j],
                &[run.prev[j]],
                &run.agent_caches[j],
                &mut None,
            )?;
            run.agent_states[j] = state;
            dists.push(probs);
        }
        let (weights, ctrl_state) = controller_step(
            tape,
            &self.controller,
            &run.ctrl_cache,
            &run.ctrl_state,
            run.prev[0],
            dropout,
        )?;
        run.ctrl_state = ctrl_state;
        let mut mixture: Option<Var> = None;
        for (j, &dist) in dists.iter().enumerate() {
            let scaled = tape.scale_by_entry(dist, weights, j)?;
            let mapped = tape.scatter(scaled, Arc::clone(&self.gv.maps[j]), self.gv.size())?;
            mixture = Some(match mixture {
                None => mapped,
                Some(acc) => tape.add(acc, mapped)?,
            });
        }
        let mixture = mixture.expect("at least one agent");
        let feedback = per_agent_feedback(tape.value(mixture), self.gv);
        run.prev = feedback.clone();
        Ok((mixture, feedback))
    }
}

fn nonempty(mut ids: Vec<usize>) -> Vec<usize> {
    if ids.is_empty() {
        ids.push(UNK);
    }
    ids
}

fn validate_team<F: Scalar>(agent: &AgentModel<F>, neighbors: &[AgentModel<F>]) -> Result<()> {
    if neighbors.is_empty() {
        return Err(Error::Config("MAT needs at least one neighbor".into()));
    }
    for n in neighbors {
        if n.source_style.name != agent.source_style.name {
            return Err(Error::VocabMismatch(format!(
                "neighbor {} encodes source style {}, agent expects {}",
                n.target_style.name, n.source_style.name, agent.source_style.name
            )));
        }
    }
    Ok(())
}

/// Train a controller over the frozen agent and its neighbors. For every
/// labeled pair the joint system decodes in lockstep for `|Y|` steps; the loss
/// sums `-log p_t[y_t]` over the gold target tokens plus EOS (gold tokens
/// missing from the global space score against global UNK and are counted);
/// the controller takes one SGD step per pair on the length-normalized loss.
#[allow(clippy::too_many_arguments)]
pub fn mat_train<F: Scalar>(
    agent: &AgentModel<F>,
    neighbors: &[AgentModel<F>],
    controller_init: &Controller<F>,
    labeled: &[(Vec<String>, Vec<String>)],
    dev: &[(Vec<String>, Vec<String>)],
    hp: &TrainHyper,
    seed: u64,
) -> Result<(Controller<F>, MatStats, Vec<f64>)> {
    if labeled.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    validate_team(agent, neighbors)?;
    let team: Vec<&AgentModel<F>> = std::iter::once(agent).chain(neighbors.iter()).collect();
    let gv = build_global_vocab(
        &team
            .iter()
            .map(|a| &a.target_vocab)
            .collect::<Vec<_>>(),
    );
    controller_init.check_team(&gv, agent)?;
    let global_unk = gv.lookup(crate::corpus::RESERVED_TOKENS[UNK]).expect("unk in union");

    let mut tape: Tape<F> = Tape::new();
    let system = JointSystem {
        agents: team.iter().map(|a| a.bind(&mut tape, false)).collect(),
        controller: controller_init.bind(&mut tape, true),
        gv: &gv,
    };
    tape.mark_params_end();
    let params = system.controller.param_vars();

    let mut cycler =
        crate::seq2seq::BatchCycler::new(labeled.len(), seeding::stream(seed, "batches"));
    let mut dropout_rng = seeding::stream(seed, "dropout");
    let mut unk_references = 0usize;

    let mut best = controller_init.clone();
    let mut best_bleu = f64::NEG_INFINITY;
    let mut stale = 0usize;
    let mut trace = Vec::new();

    for epoch in 0..hp.schedule.max_epochs {
        for _ in 0..labeled.len() {
            let pair = &labeled[cycler.next_batch(1)[0]];
            tape.zero_all_grads();
            tape.truncate();
            let mut ctx = Some(Dropout {
                rate: hp.dropout,
                rng: &mut dropout_rng,
            });
            let mut run = system.start(&mut tape, &team, controller_init, &pair.0)?;
            let mut gold: Vec<usize> = Vec::with_capacity(pair.1.len() + 1);
            for tok in &pair.1 {
                gold.push(gv.lookup(tok).unwrap_or_else(|| {
                    unk_references += 1;
                    global_unk
                }));
            }
            gold.push(gv.lookup(crate::corpus::RESERVED_TOKENS[EOS]).expect("eos in union"));
            let mut total: Option<Var> = None;
            for &y in &gold {
                let (mixture, _) = system.step(&mut tape, &mut run, &mut ctx)?;
                let nll = tape.cross_entropy(mixture, y)?;
                total = Some(match total {
                    None => nll,
                    Some(acc) => tape.add(acc, nll)?,
                });
            }
            let total = total.expect("gold never empty");
            let loss = tape.scale(total, F::of_f64(1.0 / gold.len() as f64));
            tape.backward(loss)?;
            sgd_step(&mut tape, &params, &hp.sgd)?;
        }
        tape.truncate();
        let current = controller_init.export(&tape, &system.controller);
        let dev_bleu = eval_mat_dev(&current, agent, neighbors, dev, hp)?;
        trace.push(dev_bleu);
        if dev_bleu > best_bleu {
            best_bleu = dev_bleu;
            best = current;
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

    let agent_digests_after = system
        .agents
        .iter()
        .zip(&team)
        .map(|(bound, meta)| meta.export(&tape, bound).digest())
        .collect();
    Ok((
        best,
        MatStats {
            unk_references,
            agent_digests_after,
        },
        trace,
    ))
}

fn eval_mat_dev<F: Scalar>(
    controller: &Controller<F>,
    agent: &AgentModel<F>,
    neighbors: &[AgentModel<F>],
    dev: &[(Vec<String>, Vec<String>)],
    hp: &TrainHyper,
) -> Result<f64> {
    if dev.is_empty() {
        return Ok(0.0);
    }
    let mut hyps = Vec::with_capacity(dev.len());
    let mut refs = Vec::with_capacity(dev.len());
    let mut session = MatSession::new(controller, agent, neighbors)?;
    for (src, reference) in dev {
        hyps.push(session.decode(src, hp.schedule.max_decode_len, Emission::OwnVocab)?);
        refs.push(reference.clone());
    }
    crate::harness::bleu(&hyps, &refs, 4, hp.schedule.dev_bleu_smoothing)
}

/// Reusable decoding session: agents and controller stay bound on one tape
/// across sentences.
pub struct MatSession<'m, F: Scalar> {
    tape: Tape<F>,
    gv: GlobalVocab,
    controller_meta: &'m Controller<F>,
    agents_meta: Vec<&'m AgentModel<F>>,
    bound_agents: Vec<BoundAgent>,
    bound_controller: BoundController,
}

impl<'m, F: Scalar> MatSession<'m, F> {
    pub fn new(
        controller: &'m Controller<F>,
        agent: &'m AgentModel<F>,
        neighbors: &'m [AgentModel<F>],
    ) -> Result<Self> {
        validate_team(agent, neighbors)?;
        let agents_meta: Vec<&AgentModel<F>> =
            std::iter::once(agent).chain(neighbors.iter()).collect();
        let gv = build_global_vocab(
            &agents_meta
                .iter()
                .map(|a| &a.target_vocab)
                .collect::<Vec<_>>(),
        );
        controller.check_team(&gv, agent)?;
        let mut tape: Tape<F> = Tape::new();
        let bound_agents = agents_meta.iter().map(|a| a.bind(&mut tape, false)).collect();
        let bound_controller = controller.bind(&mut tape, false);
        tape.mark_params_end();
        Ok(MatSession {
            tape,
            gv,
            controller_meta: controller,
            agents_meta,
            bound_agents,
            bound_controller,
        })
    }

    /// Decode one sentence: the lockstep loop without loss, stopping when
    /// agent 0's stream emits EOS or after `max_len` steps. Returns emitted
    /// tokens (agent 0's own vocabulary under the default emission).
    pub fn decode(
        &mut self,
        src_tokens: &[String],
        max_len: usize,
        emission: Emission,
    ) -> Result<Vec<String>> {
        assert!(max_len >= 1);
        let system = JointSystem {
            agents: self.bound_agents.clone(),
            controller: self.bound_controller.clone(),
            gv: &self.gv,
        };
        let mut run = system.start(
            &mut self.tape,
            &self.agents_meta,
            self.controller_meta,
            src_tokens,
        )?;
        let own_vocab = &self.agents_meta[0].target_vocab;
        let mut out = Vec::new();
        for _ in 0..max_len {
            let (mixture, feedback) = system.step(&mut self.tape, &mut run, &mut None)?;
            let own = feedback[0];
            if own == EOS {
                break;
            }
            match emission {
                Emission::OwnVocab => out.push(own_vocab.token(own)?.to_string()),
                Emission::GlobalArgmax => {
                    let probs = self.tape.value(mixture);
                    let g = probs.argmax_row(0);
                    out.push(self.gv.tokens[g].clone());
                }
            }
        }
        self.tape.truncate();
        Ok(out)
    }
}

/// Decode a batch of sentences with a one-off session.
pub fn mat_decode<F: Scalar>(
    controller: &Controller<F>,
    agent: &AgentModel<F>,
    neighbors: &[AgentModel<F>],
    src_tokens: &[String],
    max_len: usize,
    emission: Emission,
) -> Result<Vec<String>> {
    MatSession::new(controller, agent, neighbors)?.decode(src_tokens, max_len, emission)
}

/// Controller checkpoint: embeds the team's identities and digests; loading
/// verifies them against the supplied agents.
#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct ControllerCheckpoint<F: Scalar> {
    format: String,
    dtype: String,
    k: usize,
    dims: ControllerDims,
    agent_styles: Vec<String>,
    agent_digests: Vec<String>,
    global_tokens: Vec<String>,
    src_vocab: Vocabulary,
    prev_vocab: Vocabulary,
    params: Vec<NamedTensor<F>>,
}

const CONTROLLER_FORMAT: &str = "mast.controller.v1";

pub fn save_controller<F: Scalar>(
    controller: &Controller<F>,
    agent: &AgentModel<F>,
    neighbors: &[AgentModel<F>],
    path: &std::path::Path,
) -> Result<()> {
    let team: Vec<&AgentModel<F>> = std::iter::once(agent).chain(neighbors.iter()).collect();
    let gv = build_global_vocab(&team.iter().map(|a| &a.target_vocab).collect::<Vec<_>>());
    let file = ControllerCheckpoint {
        format: CONTROLLER_FORMAT.to_string(),
        dtype: F::DTYPE.to_string(),
        k: controller.k,
        dims: controller.dims,
        agent_styles: team.iter().map(|a| a.target_style.name.clone()).collect(),
        agent_digests: team.iter().map(|a| a.digest()).collect(),
        global_tokens: gv.tokens.clone(),
        src_vocab: controller.src_vocab.clone(),
        prev_vocab: controller.prev_vocab.clone(),
        params: controller.named_tensors(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

/// Load a controller and verify the supplied team matches the checkpoint:
/// styles, parameter digests, and the global action space must all agree.
pub fn load_controller<F: Scalar>(
    path: &std::path::Path,
    agent: &AgentModel<F>,
    neighbors: &[AgentModel<F>],
) -> Result<Controller<F>> {
    let file: ControllerCheckpoint<F> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if file.format != CONTROLLER_FORMAT {
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
    let team: Vec<&AgentModel<F>> = std::iter::once(agent).chain(neighbors.iter()).collect();
    if team.len() != file.agent_digests.len() {
        return Err(Error::VocabMismatch(format!(
            "checkpoint lists {} agents, got {}",
            file.agent_digests.len(),
            team.len()
        )));
    }
    for (meta, (style, digest)) in team
        .iter()
        .zip(file.agent_styles.iter().zip(&file.agent_digests))
    {
        if &meta.target_style.name != style {
            return Err(Error::VocabMismatch(format!(
                "agent order mismatch: expected {style}, got {}",
                meta.target_style.name
            )));
        }
        let found = meta.digest();
        if &found != digest {
            return Err(Error::DigestMismatch {
                name: style.clone(),
                expected: digest.clone(),
                found,
            });
        }
    }
    let gv = build_global_vocab(&team.iter().map(|a| &a.target_vocab).collect::<Vec<_>>());
    if gv.tokens != file.global_tokens {
        return Err(Error::VocabMismatch(
            "global action space differs from checkpoint".into(),
        ));
    }
    Controller::from_parts(
        file.k,
        file.dims,
        file.src_vocab,
        file.prev_vocab,
        file.params,
    )
}

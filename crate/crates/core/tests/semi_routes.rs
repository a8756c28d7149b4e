//! Route-level contracts for the semi-supervised trainer: the degenerate
//! reduction to plain supervised training, gradient isolation per route, and
//! the back-translation guards.

mod common;

use mast_core::corpus::{
    build_vocabulary, make_synthetic_styles, numericalize, NoiseConfig, StyleId, TokenRewrite,
    Vocabulary, UNK,
};
use mast_core::numerics::Tape;
use mast_core::seeding;
use mast_core::semi::{
    route_backtranslation, route_dae, route_supervised, SemiModel, SemiPools,
};
use mast_core::seq2seq::{
    train_atts2s, AgentModel, Dropout, ModelDims, TaskData, TrainHyper, TrainSchedule,
};
use mast_core::{Tape64, Tensor64};

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

struct Fixture {
    semi: SemiModel<f64>,
    data: TaskData,
    pools: SemiPools,
}

fn fixture(seed: u64) -> Fixture {
    let seeds: Vec<Vec<String>> = [
        "a b c", "b c d", "c d a e", "d a b", "e a c", "a c d b", "b d e", "c e a",
        "d b a c", "e c b",
    ]
    .iter()
    .map(|s| toks(s))
    .collect();
    let rules: std::collections::BTreeMap<String, String> = [("a", "A"), ("b", "B"), ("c", "C")]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let corpus = make_synthetic_styles(&seeds, "src", &[("t".into(), TokenRewrite { rules })]).unwrap();
    let src_sents: Vec<&[String]> = (0..corpus.sentence_count())
        .map(|r| corpus.sentence(0, r))
        .collect();
    let tgt_sents: Vec<&[String]> = (0..corpus.sentence_count())
        .map(|r| corpus.sentence(1, r))
        .collect();
    let sv = build_vocabulary(src_sents.iter().copied(), 50, 1).unwrap();
    let tv = build_vocabulary(tgt_sents.iter().copied(), 50, 1).unwrap();
    let labeled: Vec<(Vec<usize>, Vec<usize>)> = (0..6)
        .map(|r| {
            (
                numericalize(corpus.sentence(0, r), &sv),
                numericalize(corpus.sentence(1, r), &tv),
            )
        })
        .collect();
    let data = TaskData {
        labeled,
        dev_src: (6..10)
            .map(|r| numericalize(corpus.sentence(0, r), &sv))
            .collect(),
        dev_refs: (6..10).map(|r| corpus.sentence(1, r).to_vec()).collect(),
    };
    let pools = SemiPools {
        unlabeled_src: (0..10)
            .map(|r| numericalize(corpus.sentence(0, r), &sv))
            .collect(),
        unlabeled_tgt_tokens: (0..10).map(|r| corpus.sentence(1, r).to_vec()).collect(),
    };
    let semi = SemiModel::init(
        StyleId {
            index: 0,
            name: "src".into(),
        },
        StyleId {
            index: 1,
            name: "t".into(),
        },
        sv,
        tv,
        ModelDims {
            hidden: 24,
            embed: 24,
            layers: 2,
        },
        [1.0, 0.0, 0.0],
        seed,
    );
    Fixture { semi, data, pools }
}

fn tiny_hyper(epochs: usize) -> TrainHyper {
    TrainHyper {
        dropout: 0.2,
        schedule: TrainSchedule {
            batch_size: 3,
            max_epochs: epochs,
            patience: None,
            min_epochs: 0,
            max_decode_len: 8,
            dev_bleu_smoothing: true,
        },
        ..TrainHyper::default()
    }
}

/// Route probabilities (1,0,0) reduce the semi trainer to plain supervised
/// training: identical dev traces and bit-identical parameter trajectories.
#[test]
fn supervised_only_semi_is_bit_identical_to_atts2s() {
    let fx = fixture(11);
    let noise = NoiseConfig::default();
    let hp = tiny_hyper(5);
    let (semi_trained, semi_trace) = mast_core::semi::train_semi(
        &fx.semi, &fx.data, &fx.pools, &noise, &hp, 11,
    )
    .unwrap();

    let atts2s_init: AgentModel<f64> = AgentModel::init(
        fx.semi.source_style.clone(),
        fx.semi.target_style.clone(),
        fx.semi.source_vocab.clone(),
        fx.semi.target_vocab.clone(),
        fx.semi.dims,
        11,
    );
    // Same seed, same named init streams: identical starting parameters.
    assert_eq!(
        atts2s_init.digest(),
        fx.semi.extract_agent().digest(),
        "initial shipped pair must match plain agent init"
    );
    let (agent_trained, agent_trace) = train_atts2s(&atts2s_init, &fx.data, &hp, 11).unwrap();
    assert_eq!(semi_trace, agent_trace, "dev traces must be identical");
    assert_eq!(
        semi_trained.extract_agent().digest(),
        agent_trained.digest(),
        "parameter trajectories must be bit-identical"
    );
}

fn grad_norms_by_prefix(tape: &Tape64, semi: &mast_core::semi::BoundSemi) -> [f64; 4] {
    let nets = [
        ("enc_src", &semi.forward.encoder),
        ("enc_tgt", &semi.reverse.encoder),
    ];
    let mut out = [0.0f64; 4];
    for (slot, (_, enc)) in nets.iter().enumerate() {
        let mut total = 0.0;
        enc.visit("enc", &mut |_, v: &mast_core::numerics::Var| {
            total += tape.grad_or_zeros(*v).sq_l2_norm();
        });
        out[slot] = total;
    }
    let decs = [
        ("dec_src", &semi.reverse.decoder),
        ("dec_tgt", &semi.forward.decoder),
    ];
    for (slot, (_, dec)) in decs.iter().enumerate() {
        let mut total = 0.0;
        dec.visit("dec", &mut |_, v: &mast_core::numerics::Var| {
            total += tape.grad_or_zeros(*v).sq_l2_norm();
        });
        out[2 + slot] = total;
    }
    out
}

/// Each route touches exactly its stated parameter subsets:
/// supervised -> (enc_src, dec_tgt); back-translation -> (enc_tgt, dec_src);
/// denoising -> (enc_tgt, dec_tgt).
#[test]
fn route_gradients_are_isolated() {
    let fx = fixture(13);
    let mut dropout_rng = seeding::stream(13, "dropout");
    let mut noise_rng = seeding::stream(13, "noise");
    let noise = NoiseConfig::default();

    // order: [enc_src, enc_tgt, dec_src, dec_tgt]
    let cases: [(&str, [bool; 4]); 3] = [
        ("supervised", [true, false, false, true]),
        ("backtranslation", [false, true, true, false]),
        ("dae", [false, true, false, true]),
    ];
    for (route, expected) in cases {
        let mut tape: Tape64 = Tape::new();
        let bound = fx.semi.bind(&mut tape, true);
        tape.mark_params_end();
        let mut ctx = Some(Dropout {
            rate: 0.2,
            rng: &mut dropout_rng,
        });
        let srcs: Vec<Vec<usize>> = fx.data.labeled.iter().map(|p| p.0.clone()).collect();
        let tgts: Vec<Vec<usize>> = fx.data.labeled.iter().map(|p| p.1.clone()).collect();
        let loss = match route {
            "supervised" => route_supervised(&mut tape, &bound, &srcs, &tgts, &mut ctx).unwrap(),
            "backtranslation" => {
                route_backtranslation(&mut tape, &bound, &fx.pools.unlabeled_src, 8, &mut ctx)
                    .unwrap()
            }
            _ => route_dae(
                &mut tape,
                &bound,
                &fx.pools.unlabeled_tgt_tokens,
                &fx.semi.target_vocab,
                &noise,
                &mut noise_rng,
                &mut ctx,
            )
            .unwrap(),
        };
        assert!(tape.value(loss).data()[0].is_finite());
        tape.backward(loss).unwrap();
        let norms = grad_norms_by_prefix(&tape, &bound);
        let names = ["enc_src", "enc_tgt", "dec_src", "dec_tgt"];
        for i in 0..4 {
            if expected[i] {
                assert!(norms[i] > 0.0, "{route}: {} should receive gradient", names[i]);
            } else {
                assert_eq!(norms[i], 0.0, "{route}: {} must stay untouched", names[i]);
            }
        }
    }
}

/// Stage-1 emptiness guard: an immediate-EOS forward decoder makes stage 2
/// condition on a single UNK and the loss stays finite.
#[test]
fn backtranslation_empty_generation_uses_unk() {
    let fx = fixture(17);
    let mut rigged = fx.semi.clone();
    // Bias the forward decoder's projection hard toward EOS so stage 1
    // produces empty sequences.
    let eos = mast_core::corpus::EOS;
    let cols = rigged.dec_tgt.proj.b.len();
    let mut bias = vec![0.0f64; cols];
    bias[eos] = 1000.0;
    rigged.dec_tgt.proj.b = Tensor64::vector(bias);
    rigged.dec_tgt.proj.w = Tensor64::zeros(rigged.dec_tgt.proj.w.shape());

    let mut tape: Tape64 = Tape::new();
    let bound = rigged.bind(&mut tape, true);
    tape.mark_params_end();
    // generation really is empty
    let generated = mast_core::seq2seq::greedy_decode_bound_batch(
        &mut tape,
        &bound.forward,
        &fx.pools.unlabeled_src,
        8,
    )
    .unwrap();
    assert!(generated.iter().all(Vec::is_empty));
    tape.truncate();
    let loss =
        route_backtranslation(&mut tape, &bound, &fx.pools.unlabeled_src, 8, &mut None).unwrap();
    assert!(tape.value(loss).data()[0].is_finite());
    // reconstruct the synthetic inputs stage 2 saw: all [UNK]
    let _ = UNK;
}

/// A rigged next-token autoencoder reproduces its one memorized sentence
/// exactly, so the denoising loss with zero noise is exactly zero; corrupting
/// the input breaks the chain and raises it.
#[test]
fn dae_zero_noise_on_memorized_autoencoder_is_zero() {
    let fx = fixture(19);
    let vocab = fx.semi.target_vocab.clone();
    // one memorized sentence whose tokens form a chain
    let sentence: Vec<String> = fx.pools.unlabeled_tgt_tokens[0].clone();
    let ids = mast_core::corpus::numericalize(&sentence, &vocab);
    let mut rigged = fx.semi.clone();
    common::rig_next_decoder(&mut rigged.dec_tgt, vocab.size(), &common::chain_next(&ids));

    let mut tape: Tape64 = Tape::new();
    let bound = rigged.bind(&mut tape, false);
    tape.mark_params_end();
    let no_noise = NoiseConfig::new(0.0, 0, 0).unwrap();
    let mut noise_rng = seeding::stream(3, "noise");
    let pool = vec![sentence.clone()];
    let loss = route_dae(
        &mut tape,
        &bound,
        &pool,
        &vocab,
        &no_noise,
        &mut noise_rng,
        &mut None,
    )
    .unwrap();
    assert_eq!(tape.value(loss).data()[0], 0.0);

}

/// Paired evaluation on a really trained (not rigged) autoencoder: corrupting
/// the input cannot lower the reconstruction loss.
#[test]
fn noise_does_not_help_converged_autoencoder() {
    let fx = fixture(29);
    let mut tape: Tape64 = Tape::new();
    let bound = fx.semi.bind(&mut tape, true);
    tape.mark_params_end();
    let mut params = bound.forward.param_vars();
    params.extend(bound.reverse.param_vars());
    let cfg = mast_core::numerics::SgdConfig {
        learning_rate: 2.0,
        clip_norm: Some(1.0),
    };
    let no_noise = NoiseConfig::new(0.0, 0, 0).unwrap();
    let mut noise_rng = seeding::stream(31, "noise");
    // converge the target-side autoencoder on clean copies
    for _ in 0..900 {
        tape.zero_all_grads();
        tape.truncate();
        let loss = route_dae(
            &mut tape,
            &bound,
            &fx.pools.unlabeled_tgt_tokens,
            &fx.semi.target_vocab,
            &no_noise,
            &mut noise_rng,
            &mut None,
        )
        .unwrap();
        tape.backward(loss).unwrap();
        mast_core::numerics::sgd_step(&mut tape, &params, &cfg).unwrap();
    }
    tape.truncate();
    let clean = {
        let loss = route_dae(
            &mut tape,
            &bound,
            &fx.pools.unlabeled_tgt_tokens,
            &fx.semi.target_vocab,
            &no_noise,
            &mut noise_rng,
            &mut None,
        )
        .unwrap();
        let v = tape.value(loss).data()[0];
        tape.truncate();
        v
    };
    assert!(clean < 0.05, "autoencoder failed to converge: loss {clean}");
    let noisy_cfg = NoiseConfig::new(0.3, 2, 0).unwrap();
    let mut noisy_total = 0.0;
    let draws = 8;
    for _ in 0..draws {
        let loss = route_dae(
            &mut tape,
            &bound,
            &fx.pools.unlabeled_tgt_tokens,
            &fx.semi.target_vocab,
            &noisy_cfg,
            &mut noise_rng,
            &mut None,
        )
        .unwrap();
        noisy_total += tape.value(loss).data()[0];
        tape.truncate();
    }
    let noisy = noisy_total / draws as f64;
    assert!(
        noisy >= clean,
        "corrupted reconstruction loss {noisy} below clean loss {clean}"
    );
}

/// The rig emits each chained next token with probability exactly 1, so the
/// teacher-forced loss on the memorized sentence is exactly 0 and strictly
/// below ln(vocab size).
#[test]
fn rigged_decoder_reaches_exact_zero_loss() {
    let fx = fixture(23);
    let vocab = fx.semi.target_vocab.clone();
    let sentence = fx.pools.unlabeled_tgt_tokens[0].clone();
    let ids = mast_core::corpus::numericalize(&sentence, &vocab);
    let mut rigged = fx.semi.clone();
    common::rig_next_decoder(&mut rigged.dec_tgt, vocab.size(), &common::chain_next(&ids));
    let mut tape: Tape64 = Tape::new();
    let bound = rigged.bind(&mut tape, false);
    let loss = mast_core::seq2seq::teacher_forced_loss(
        &mut tape,
        &bound.forward,
        &[ids.clone()],
        &[ids.clone()],
        &mut None,
    )
    .unwrap();
    assert_eq!(tape.value(loss).data()[0], 0.0);
    assert!(tape.value(loss).data()[0] < (vocab.size() as f64).ln());
}

// Temporary: loss-curve diagnostic.
use mast_core::corpus::*;
use mast_core::numerics::{sgd_step, SgdConfig};
use mast_core::seq2seq::*;
use mast_core::seeding;

#[test]
#[ignore]
fn probe_loss_curve() {
    let spec = SyntheticSpec::default();
    let corpus = spec.generate(1).unwrap();
    let split = make_splits(&corpus, SplitSizes { train: 500, dev: 150, test: 150, unlabeled: 2000 }, 1).unwrap();
    let src_sents: Vec<&[String]> = split.labeled_train.iter().map(|&i| corpus.sentence(0, i)).collect();
    let tgt_sents: Vec<&[String]> = split.labeled_train.iter().map(|&i| corpus.sentence(1, i)).collect();
    let src_vocab = build_vocabulary(src_sents.iter().copied(), 500, 1).unwrap();
    let tgt_vocab = build_vocabulary(tgt_sents.iter().copied(), 500, 1).unwrap();
    let labeled: Vec<(Vec<usize>, Vec<usize>)> = split.labeled_train.iter()
        .map(|&i| (numericalize(corpus.sentence(0, i), &src_vocab), numericalize(corpus.sentence(1, i), &tgt_vocab)))
        .collect();
    let agent: AgentModel<f32> = AgentModel::init(
        corpus.styles()[0].clone(), corpus.styles()[1].clone(),
        src_vocab.clone(), tgt_vocab.clone(), ModelDims::desk(), 7);
    let mut tape = mast_core::Tape32::new();
    let bound = agent.bind(&mut tape, true);
    tape.mark_params_end();
    let params = bound.param_vars();
    let mut rng = seeding::stream(7, "dropout");
    let mut cycler = BatchCycler::new(500, seeding::stream(7, "batches"));
    for cfg in [SgdConfig { learning_rate: 8.0, clip_norm: Some(0.5) }] {
        println!("=== lr {} clip {:?}", cfg.learning_rate, cfg.clip_norm);
        for epoch in 0..20 {
            let mut total = 0.0; let mut norms = 0.0;
            for _ in 0..16 {
                let idx = cycler.next_batch(32);
                let srcs: Vec<Vec<usize>> = idx.iter().map(|&i| labeled[i].0.clone()).collect();
                let tgts: Vec<Vec<usize>> = idx.iter().map(|&i| labeled[i].1.clone()).collect();
                tape.zero_all_grads();
                tape.truncate();
                let mut ctx = Some(Dropout { rate: 0.3, rng: &mut rng });
                let loss = teacher_forced_loss(&mut tape, &bound, &srcs, &tgts, &mut ctx).unwrap();
                total += tape.value(loss).data()[0] as f64;
                tape.backward(loss).unwrap();
                norms += sgd_step(&mut tape, &params, &cfg).unwrap();
            }
            tape.truncate();
            let sample = greedy_decode_bound(&mut tape, &bound, &labeled[0].0, 16).unwrap();
            let toks = denumericalize(&sample, &tgt_vocab).unwrap();
            println!("epoch {epoch}: loss {:.3} gradnorm {:.2} sample: {} || gold: {}",
                total/16.0, norms/16.0, toks.join(" "),
                denumericalize(&labeled[0].1, &tgt_vocab).unwrap().join(" "));
        }
    }
}

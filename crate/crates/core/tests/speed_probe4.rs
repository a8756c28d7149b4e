// Temporary: memorization sanity probe.
use mast_core::corpus::*;
use mast_core::numerics::{sgd_step, SgdConfig};
use mast_core::seq2seq::*;
use mast_core::seeding;

#[test]
#[ignore]
fn probe_memorize_10_pairs() {
    let mut rng = seeding::stream(3, "gen");
    let sents = generate_sentences(10, 15, 3, 3, 5, &mut rng);
    let rewrite = tag_rewrite_all();
    let tgts: Vec<Vec<String>> = sents.iter().map(|s| rewrite.apply(s)).collect();
    let refs_src: Vec<&[String]> = sents.iter().map(|v| v.as_slice()).collect();
    let refs_tgt: Vec<&[String]> = tgts.iter().map(|v| v.as_slice()).collect();
    let sv = build_vocabulary(refs_src.into_iter(), 100, 1).unwrap();
    let tv = build_vocabulary(refs_tgt.into_iter(), 100, 1).unwrap();
    let labeled: Vec<(Vec<usize>, Vec<usize>)> = sents.iter().zip(&tgts)
        .map(|(s, t)| (numericalize(s, &sv), numericalize(t, &tv))).collect();
    let agent: AgentModel<f64> = AgentModel::init(
        StyleId { index: 0, name: "s".into() }, StyleId { index: 1, name: "t".into() },
        sv, tv.clone(), ModelDims { hidden: 32, embed: 32, layers: 2 }, 5);
    let mut tape = mast_core::Tape64::new();
    let bound = agent.bind(&mut tape, true);
    tape.mark_params_end();
    let params = bound.param_vars();
    let cfg = SgdConfig { learning_rate: 2.0, clip_norm: Some(1.0) };
    let mut dr = seeding::stream(5, "dropout");
    for epoch in 0..2500 {
        tape.zero_all_grads();
        tape.truncate();
        let srcs: Vec<Vec<usize>> = labeled.iter().map(|p| p.0.clone()).collect();
        let tg: Vec<Vec<usize>> = labeled.iter().map(|p| p.1.clone()).collect();
        let mut ctx = Some(Dropout { rate: 0.0, rng: &mut dr });
        let loss = teacher_forced_loss(&mut tape, &bound, &srcs, &tg, &mut ctx).unwrap();
        tape.backward(loss).unwrap();
        sgd_step(&mut tape, &params, &cfg).unwrap();
        if epoch % 250 == 0 || epoch == 2499 {
            let l = tape.value(loss).data()[0];
            tape.truncate();
            let mut exact = 0;
            for (s, t) in &labeled {
                let out = greedy_decode_bound(&mut tape, &bound, s, 12).unwrap();
                if &out == t { exact += 1; }
                tape.truncate();
            }
            println!("epoch {epoch}: loss {l:.4} exact {exact}/10");
        }
    }
}

fn tag_rewrite_all() -> TokenRewrite {
    let toks: Vec<String> = (0..15).map(|i| format!("c{i:03}")).collect();
    mast_core::corpus::TokenRewrite { rules: toks.iter().map(|t| (t.clone(), format!("{t}~x"))).collect() }
}

// Temporary: DAE-route learning debug.
use mast_core::corpus::*;
use mast_core::numerics::{sgd_step, SgdConfig};
use mast_core::semi::*;
use mast_core::seq2seq::*;
use mast_core::seeding;

#[test]
#[ignore]
fn probe_dae_learning() {
    let sentences: Vec<Vec<String>> = [
        "A B C", "B C D", "C D A E", "D A B", "E A C", "A C D B", "B D E", "C E A", "D B A C", "E C B",
    ].iter().map(|s| s.split_whitespace().map(str::to_string).collect()).collect();
    let refs: Vec<&[String]> = sentences.iter().map(|v| v.as_slice()).collect();
    let tv = build_vocabulary(refs.into_iter(), 50, 1).unwrap();
    let semi: SemiModel<f64> = SemiModel::init(
        StyleId { index: 0, name: "s".into() }, StyleId { index: 1, name: "t".into() },
        tv.clone(), tv.clone(), ModelDims { hidden: 24, embed: 24, layers: 2 }, [0.0,0.0,1.0], 29);
    let mut tape = mast_core::Tape64::new();
    let bound = semi.bind(&mut tape, true);
    tape.mark_params_end();
    let mut params = bound.forward.param_vars();
    params.extend(bound.reverse.param_vars());
    let cfg = SgdConfig { learning_rate: 2.0, clip_norm: Some(1.0) };
    let no_noise = NoiseConfig::new(0.0, 0, 0).unwrap();
    let mut nr = seeding::stream(1, "noise");
    for step in 0..900 {
        tape.zero_all_grads();
        tape.truncate();
        let loss = route_dae(&mut tape, &bound, &sentences, &tv, &no_noise, &mut nr, &mut None).unwrap();
        let l = tape.value(loss).data()[0];
        tape.backward(loss).unwrap();
        let n = sgd_step(&mut tape, &params, &cfg).unwrap();
        if step % 100 == 0 { println!("step {step}: loss {l:.4} gradnorm {n:.3}"); }
    }
}

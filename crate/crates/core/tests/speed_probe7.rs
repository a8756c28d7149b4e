// Temporary: isolate matmul vs graph overhead.
use mast_core::Tensor64;
use mast_core::Tensor32;

#[test]
#[ignore]
fn probe_matmul_speed() {
    // decoder projection shape: [16x64] x [64x132]
    let a = Tensor32::full(&[16, 64], 0.5);
    let b = Tensor32::full(&[64, 132], 0.25);
    let t0 = std::time::Instant::now();
    let n = 20000;
    let mut acc = 0.0f32;
    for _ in 0..n {
        let c = a.matmul(&b, false, false).unwrap();
        acc += c.data()[0];
    }
    let el = t0.elapsed().as_secs_f64();
    let flops = (16 * 64 * 132 * 2) as f64 * n as f64;
    println!("f32 16x64x132: {:.1} us/op, {:.1} Gflop/s (acc {acc})", el / n as f64 * 1e6, flops / el / 1e9);

    let a = Tensor32::full(&[16, 64], 0.5);
    let b = Tensor32::full(&[64, 64], 0.25);
    let t0 = std::time::Instant::now();
    let mut acc = 0.0f32;
    for _ in 0..n {
        let c = a.matmul(&b, false, false).unwrap();
        acc += c.data()[0];
    }
    let el = t0.elapsed().as_secs_f64();
    let flops = (16 * 64 * 64 * 2) as f64 * n as f64;
    println!("f32 16x64x64: {:.1} us/op, {:.1} Gflop/s (acc {acc})", el / n as f64 * 1e6, flops / el / 1e9);

    let a64 = Tensor64::full(&[16, 64], 0.5);
    let b64 = Tensor64::full(&[64, 64], 0.25);
    let t0 = std::time::Instant::now();
    let mut acc = 0.0f64;
    for _ in 0..n {
        let c = a64.matmul(&b64, false, false).unwrap();
        acc += c.data()[0];
    }
    let el = t0.elapsed().as_secs_f64();
    let flops = (16 * 64 * 64 * 2) as f64 * n as f64;
    println!("f64 16x64x64: {:.1} us/op, {:.1} Gflop/s (acc {acc})", el / n as f64 * 1e6, flops / el / 1e9);
}

//! Shared test oracles: central finite differences, independent of the tape's
//! reverse pass, plus packing helpers for flattening model parameters.

use mast_core::numerics::NamedTensor;
use mast_core::Tensor64;

pub const FD_STEP: f64 = 1e-4;

/// Central finite differences of a scalar function.
pub fn finite_diff<Func>(mut f: Func, x: &[f64], h: f64) -> Vec<f64>
where
    Func: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Relative error with a small absolute floor so true-zero gradients compare
/// against finite-difference noise rather than blowing up.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-4)
}

pub fn max_rel_err(ad: &[f64], fd: &[f64]) -> f64 {
    assert_eq!(ad.len(), fd.len());
    ad.iter()
        .zip(fd)
        .map(|(&a, &b)| rel_err(a, b))
        .fold(0.0, f64::max)
}

/// Flatten named tensors (assumed sorted by name) into one parameter vector.
pub fn pack(params: &[NamedTensor<f64>]) -> Vec<f64> {
    params.iter().flat_map(|p| p.values.iter().copied()).collect()
}

/// Rebuild named tensors from a flat vector using a template for names/shapes.
pub fn unpack(template: &[NamedTensor<f64>], x: &[f64]) -> Vec<NamedTensor<f64>> {
    let mut out = Vec::with_capacity(template.len());
    let mut offset = 0;
    for t in template {
        let n: usize = t.shape.iter().product();
        out.push(NamedTensor {
            name: t.name.clone(),
            shape: t.shape.clone(),
            values: x[offset..offset + n].to_vec(),
        });
        offset += n;
    }
    assert_eq!(offset, x.len());
    out
}

/// Gradients of the named vars read off a tape, flattened in the same order.
pub fn collect_grads(
    tape: &mast_core::Tape64,
    named_vars: &[(String, mast_core::numerics::Var)],
) -> Vec<f64> {
    named_vars
        .iter()
        .flat_map(|(_, v)| tape.grad_or_zeros(*v).data().to_vec())
        .collect()
}

pub fn tensor_of(shape: &[usize], values: &[f64]) -> Tensor64 {
    Tensor64::from_vec(shape.to_vec(), values.to_vec()).unwrap()
}

/// Rig a decoder into a deterministic next-token machine: it ignores the
/// encoder and emits `next[prev]` with probability exactly 1 (saturated gates
/// relay the one-hot embedding of the previous token; the projection reads the
/// transition out of it). Requires `embed >= vocab` and `hidden >= vocab`.
pub fn rig_next_decoder(
    dec: &mut mast_core::seq2seq::DecoderParams<Tensor64>,
    vocab_size: usize,
    next: &std::collections::HashMap<usize, usize>,
) {
    let v = vocab_size;
    let h = dec.layers[0].b[0].len();
    let e = dec.embed.cols();
    assert!(h >= v && e >= v, "rig needs one-hot room");
    let big = 200.0;
    let mut embed = Tensor64::zeros(&[v, e]);
    for id in 0..v {
        embed.set2(id, id, big);
    }
    dec.embed = embed;
    for (l, layer) in dec.layers.iter_mut().enumerate() {
        let input_dim = if l == 0 { e } else { h };
        for gate in 0..4 {
            layer.wh[gate] = Tensor64::zeros(&[h, h]);
            layer.wx[gate] = Tensor64::zeros(&[input_dim, h]);
            layer.b[gate] = match gate {
                0 | 3 => Tensor64::full(&[h], big),
                1 => Tensor64::full(&[h], -big),
                _ => Tensor64::zeros(&[h]),
            };
        }
        let mut wxg = Tensor64::zeros(&[input_dim, h]);
        for d in 0..v {
            wxg.set2(d, d, big);
        }
        layer.wx[2] = wxg;
    }
    dec.attn = Tensor64::zeros(dec.attn.shape());
    let two_h = dec.attn.shape()[0];
    let mut combine_w = Tensor64::zeros(&[two_h + h, h]);
    for d in 0..v {
        combine_w.set2(two_h + d, d, big);
    }
    dec.combine.w = combine_w;
    dec.combine.b = Tensor64::zeros(&[h]);
    let out_v = dec.proj.b.len();
    let mut proj_w = Tensor64::zeros(&[h, out_v]);
    for (&from, &to) in next {
        proj_w.set2(from, to, big);
    }
    dec.proj.w = proj_w;
    dec.proj.b = Tensor64::zeros(&[out_v]);
}

/// Chain map for a token sequence: BOS -> ids[0] -> ids[1] -> ... -> EOS.
pub fn chain_next(ids: &[usize]) -> std::collections::HashMap<usize, usize> {
    let mut next = std::collections::HashMap::new();
    let mut prev = mast_core::corpus::BOS;
    for &id in ids {
        next.insert(prev, id);
        prev = id;
    }
    next.insert(prev, mast_core::corpus::EOS);
    next
}

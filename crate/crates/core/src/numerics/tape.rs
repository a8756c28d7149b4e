//! Reverse-mode autodiff tape.
//!
//! Operations evaluate eagerly and append a node; [`Tape::backward`] walks the
//! list in reverse, accumulating gradients into each node. Gradients persist
//! until [`Tape::zero_all_grads`], so calling `backward` twice without a reset
//! doubles them. Nodes whose inputs contain no trainable parameter are skipped
//! during the reverse pass, which keeps frozen subgraphs cheap.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Probabilities are floored at this value before `log` in NLL losses.
const NLL_FLOOR: f64 = 1e-12;
/// Additive pre-softmax mask for positions that must receive zero weight.
pub const MASK_NEG: f64 = -1e30;

enum Op<F: Scalar> {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Matmul { a: Var, b: Var, ta: bool, tb: bool },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: F },
    Tanh { a: Var },
    Sigmoid { a: Var },
    Softmax { a: Var },
    ConcatCols { parts: Vec<Var> },
    Embed { table: Var, ids: Vec<usize> },
    Dropout { a: Var, mask: Tensor<F> },
    Scatter { a: Var, mapping: Arc<Vec<usize>> },
    ScaleByEntry { v: Var, w: Var, index: usize },
    AttnScores { query: Var, keys: Vec<Var> },
    AttnContext { weights: Var, values: Vec<Var> },
    BroadcastRows { v: Var },
    NllRows { p: Var, targets: Vec<usize>, mask: Vec<bool> },
    Sum { a: Var },
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    grad: Option<Tensor<F>>,
    needs_grad: bool,
    op: Op<F>,
}

pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    params_end: usize,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params_end: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient flows into it.
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Trainable parameter; gradients accumulate into it.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Marks the end of the parameter region; [`Tape::truncate`] resets to here.
    pub fn mark_params_end(&mut self) {
        self.params_end = self.nodes.len();
    }

    pub fn params_end(&self) -> usize {
        self.params_end
    }

    /// Drops every node after the parameter region.
    pub fn truncate(&mut self) {
        self.nodes.truncate(self.params_end);
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn grad_or_zeros(&self, v: Var) -> Tensor<F> {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[v.0].value.shape()),
        }
    }

    /// Overwrite a leaf's value (parameter updates, checkpoint restore).
    pub fn set_value(&mut self, v: Var, value: Tensor<F>) {
        debug_assert_eq!(self.nodes[v.0].value.shape(), value.shape());
        self.nodes[v.0].value = value;
    }

    pub fn zero_all_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<F>, needs_grad: bool, op: Op<F>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<F>, parents: &[Var], op: Op<F>) -> Var {
        let needs = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(value, needs, op)
    }

    // ---- operations ------------------------------------------------------

    /// `x·w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = {
            let xv = self.value(x);
            let wv = self.value(w);
            let bv = self.value(b);
            if bv.shape().len() != 1 || bv.len() != wv.cols() {
                return Err(Error::ShapeMismatch {
                    op: "affine",
                    detail: format!("bias {:?} vs weight {:?}", bv.shape(), wv.shape()),
                });
            }
            let mut out = xv.matmul(wv, false, false)?;
            let cols = out.cols();
            for r in 0..out.rows() {
                let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
                for (o, &bias) in row.iter_mut().zip(bv.data()) {
                    *o = *o + bias;
                }
            }
            out
        };
        Ok(self.push_op(out, &[x, w, b], Op::Affine { x, w, b }))
    }

    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b), ta, tb)?;
        Ok(self.push_op(out, &[a, b], Op::Matmul { a, b, ta, tb }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push_op(out, &[a, b], Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push_op(out, &[a, b], Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push_op(out, &[a], Op::Scale { a, c })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        self.push_op(out, &[a], Op::Tanh { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = F::one();
        let out = self.value(a).map(|x| one / (one + (-x).exp()));
        self.push_op(out, &[a], Op::Sigmoid { a })
    }

    /// Max-shifted softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_tensor(self.value(a));
        self.push_op(out, &[a], Op::Softmax { a })
    }

    /// Concatenate rank-2 tensors with equal row counts along the columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let mut total_cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts differ: {} vs {}", rows, v.rows()),
                });
            }
            total_cols += v.cols();
        }
        let mut data = vec![F::zero(); rows * total_cols];
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            let c = v.cols();
            for r in 0..rows {
                data[r * total_cols + offset..r * total_cols + offset + c]
                    .copy_from_slice(v.row(r));
            }
            offset += c;
        }
        let out = Tensor::from_vec(vec![rows, total_cols], data)?;
        Ok(self.push_op(
            out,
            parts,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Row lookup: `out[r] = table[ids[r]]`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = {
            let t = self.value(table);
            (t.rows(), t.cols())
        };
        for &id in ids {
            if id >= rows {
                return Err(Error::InvalidId {
                    id,
                    vocab_size: rows,
                });
            }
        }
        let mut data = vec![F::zero(); ids.len() * cols];
        {
            let t = self.value(table);
            for (r, &id) in ids.iter().enumerate() {
                data[r * cols..(r + 1) * cols].copy_from_slice(t.row(id));
            }
        }
        let out = Tensor::from_vec(vec![ids.len(), cols], data)?;
        Ok(self.push_op(
            out,
            &[table],
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Inverted dropout: zero entries with probability `rate` and scale
    /// survivors by `1/(1-rate)`. Identity when not training or `rate == 0`.
    pub fn dropout<R: Rng>(&mut self, a: Var, rate: f64, training: bool, rng: &mut R) -> Var {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        if !training || rate == 0.0 {
            return a;
        }
        let keep_scale = F::of_f64(1.0 / (1.0 - rate));
        let mask = Tensor::from_vec(
            self.value(a).shape().to_vec(),
            (0..self.value(a).len())
                .map(|_| {
                    if rng.gen::<f64>() < rate {
                        F::zero()
                    } else {
                        keep_scale
                    }
                })
                .collect(),
        )
        .expect("mask shape matches");
        let out = self
            .value(a)
            .zip_map(&mask, "dropout", |x, m| x * m)
            .expect("same shape");
        self.push_op(out, &[a], Op::Dropout { a, mask })
    }

    /// Injective scatter of a single-row distribution into a wider space;
    /// positions not covered by `mapping` stay zero, so mass is preserved.
    pub fn scatter(&mut self, a: Var, mapping: Arc<Vec<usize>>, out_len: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != 1 || av.len() != mapping.len() {
            return Err(Error::ShapeMismatch {
                op: "scatter",
                detail: format!(
                    "input {:?} vs mapping of {} entries",
                    av.shape(),
                    mapping.len()
                ),
            });
        }
        let mut data = vec![F::zero(); out_len];
        for (i, &g) in mapping.iter().enumerate() {
            debug_assert!(g < out_len);
            data[g] = av.data()[i];
        }
        let out = Tensor::vector(data);
        Ok(self.push_op(out, &[a], Op::Scatter { a, mapping }))
    }

    /// `v * w[index]` where `w` is a single-row weight vector.
    pub fn scale_by_entry(&mut self, v: Var, w: Var, index: usize) -> Result<Var> {
        let wv = self.value(w);
        if wv.rows() != 1 || index >= wv.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: wv.len(),
            });
        }
        let c = wv.data()[index];
        let out = self.value(v).map(|x| x * c);
        Ok(self.push_op(out, &[v, w], Op::ScaleByEntry { v, w, index }))
    }

    /// Per-row dot products against a sequence: `out[b,t] = query[b]·keys[t][b]`.
    pub fn attn_scores(&mut self, query: Var, keys: &[Var]) -> Result<Var> {
        let qv = self.value(query);
        let (rows, dim) = (qv.rows(), qv.cols());
        for &k in keys {
            let kv = self.value(k);
            if kv.rows() != rows || kv.cols() != dim {
                return Err(Error::ShapeMismatch {
                    op: "attn_scores",
                    detail: format!("query {:?} vs key {:?}", qv.shape(), kv.shape()),
                });
            }
        }
        let t_len = keys.len();
        let mut data = vec![F::zero(); rows * t_len];
        for (t, &k) in keys.iter().enumerate() {
            let kv = self.value(k);
            let qv = self.value(query);
            for b in 0..rows {
                let mut acc = F::zero();
                for (&q, &kk) in qv.row(b).iter().zip(kv.row(b)) {
                    acc = acc + q * kk;
                }
                data[b * t_len + t] = acc;
            }
        }
        let out = Tensor::from_vec(vec![rows, t_len], data)?;
        let mut parents = vec![query];
        parents.extend_from_slice(keys);
        Ok(self.push_op(
            out,
            &parents,
            Op::AttnScores {
                query,
                keys: keys.to_vec(),
            },
        ))
    }

    /// Weighted sum over a sequence: `out[b] = Σ_t weights[b,t]·values[t][b]`.
    pub fn attn_context(&mut self, weights: Var, values: &[Var]) -> Result<Var> {
        let wv = self.value(weights);
        let rows = wv.rows();
        if wv.cols() != values.len() {
            return Err(Error::ShapeMismatch {
                op: "attn_context",
                detail: format!("{} weights vs {} values", wv.cols(), values.len()),
            });
        }
        let dim = self.value(values[0]).cols();
        let mut data = vec![F::zero(); rows * dim];
        for (t, &v) in values.iter().enumerate() {
            let vv = self.value(v);
            if vv.rows() != rows || vv.cols() != dim {
                return Err(Error::ShapeMismatch {
                    op: "attn_context",
                    detail: format!("value {:?} at step {}", vv.shape(), t),
                });
            }
            let wv = self.value(weights);
            for b in 0..rows {
                let w = wv.get2(b, t);
                let out_row = &mut data[b * dim..(b + 1) * dim];
                for (o, &x) in out_row.iter_mut().zip(vv.row(b)) {
                    *o = *o + w * x;
                }
            }
        }
        let out = Tensor::from_vec(vec![rows, dim], data)?;
        let mut parents = vec![weights];
        parents.extend_from_slice(values);
        Ok(self.push_op(
            out,
            &parents,
            Op::AttnContext {
                weights,
                values: values.to_vec(),
            },
        ))
    }

    /// Tile a single-row tensor to `rows` rows.
    pub fn broadcast_rows(&mut self, v: Var, rows: usize) -> Result<Var> {
        let vv = self.value(v);
        if vv.rows() != 1 {
            return Err(Error::ShapeMismatch {
                op: "broadcast_rows",
                detail: format!("expected a single row, got {:?}", vv.shape()),
            });
        }
        let cols = vv.cols();
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend_from_slice(vv.data());
        }
        let out = Tensor::from_vec(vec![rows, cols], data)?;
        Ok(self.push_op(out, &[v], Op::BroadcastRows { v }))
    }

    /// Per-row `-log(max(p[r, target_r], 1e-12))`, zero where masked out.
    pub fn nll_rows(&mut self, p: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let pv = self.value(p);
        let (rows, cols) = (pv.rows(), pv.cols());
        if targets.len() != rows || mask.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "nll_rows",
                detail: format!("{} rows vs {} targets", rows, targets.len()),
            });
        }
        for &t in targets {
            if t >= cols {
                return Err(Error::IndexOutOfRange { index: t, len: cols });
            }
        }
        let floor = F::of_f64(NLL_FLOOR);
        let mut data = vec![F::zero(); rows];
        for r in 0..rows {
            if mask[r] {
                let prob = pv.row(r)[targets[r]];
                data[r] = -(prob.max(floor)).ln();
            }
        }
        let out = Tensor::vector(data);
        Ok(self.push_op(
            out,
            &[p],
            Op::NllRows {
                p,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
        ))
    }

    /// `-log p[target]` for a single probability vector.
    pub fn cross_entropy(&mut self, p: Var, target: usize) -> Result<Var> {
        let cols = self.value(p).cols();
        if self.value(p).rows() != 1 {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("expected one row, got {:?}", self.value(p).shape()),
            });
        }
        if target >= cols {
            return Err(Error::IndexOutOfRange {
                index: target,
                len: cols,
            });
        }
        self.nll_rows(p, &[target], &[true])
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let total: F = self.value(a).data().iter().copied().sum();
        self.push_op(Tensor::scalar(total), &[a], Op::Sum { a })
    }

    // ---- reverse pass ----------------------------------------------------

    /// Accumulate `d loss / d node` into every node that needs gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        // Interior gradients are scratch space for this pass; only leaves
        // accumulate across calls (hence "backward twice doubles").
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.grad = None;
            }
        }
        add_into(&mut self.nodes[loss.0], Tensor::scalar(F::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let (head, tail) = self.nodes.split_at_mut(i);
            let node = &tail[0];
            let g = node.grad.as_ref().expect("checked above");
            match &node.op {
                Op::Leaf => {}
                Op::Affine { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    if head[x.0].needs_grad {
                        let dx = g.matmul(&head[w.0].value, false, true)?;
                        add_into(&mut head[x.0], dx);
                    }
                    if head[w.0].needs_grad {
                        let dw = head[x.0].value.matmul(g, true, false)?;
                        add_into(&mut head[w.0], dw);
                    }
                    if head[b.0].needs_grad {
                        let cols = g.cols();
                        let mut db = vec![F::zero(); cols];
                        for r in 0..g.rows() {
                            for (acc, &v) in db.iter_mut().zip(g.row(r)) {
                                *acc = *acc + v;
                            }
                        }
                        add_into(&mut head[b.0], Tensor::vector(db));
                    }
                }
                Op::Matmul { a, b, ta, tb } => {
                    let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                    if head[a.0].needs_grad {
                        let da = if !ta {
                            if !tb {
                                g.matmul(&head[b.0].value, false, true)?
                            } else {
                                g.matmul(&head[b.0].value, false, false)?
                            }
                        } else if !tb {
                            head[b.0].value.matmul(g, false, true)?
                        } else {
                            head[b.0].value.matmul(g, true, true)?
                        };
                        add_into(&mut head[a.0], da);
                    }
                    if head[b.0].needs_grad {
                        let db = if !tb {
                            if !ta {
                                head[a.0].value.matmul(g, true, false)?
                            } else {
                                head[a.0].value.matmul(g, false, false)?
                            }
                        } else if !ta {
                            g.matmul(&head[a.0].value, true, false)?
                        } else {
                            g.matmul(&head[a.0].value, true, true)?
                        };
                        add_into(&mut head[b.0], db);
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    if head[a.0].needs_grad {
                        add_into_ref(&mut head[a.0], g);
                    }
                    if head[b.0].needs_grad {
                        add_into_ref(&mut head[b.0], g);
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    if head[a.0].needs_grad {
                        let da = g.zip_map(&head[b.0].value, "mul-bwd", |gg, bb| gg * bb)?;
                        add_into(&mut head[a.0], da);
                    }
                    if head[b.0].needs_grad {
                        let db = g.zip_map(&head[a.0].value, "mul-bwd", |gg, aa| gg * aa)?;
                        add_into(&mut head[b.0], db);
                    }
                }
                Op::Scale { a, c } => {
                    let (a, c) = (*a, *c);
                    if head[a.0].needs_grad {
                        let da = g.map(|gg| gg * c);
                        add_into(&mut head[a.0], da);
                    }
                }
                Op::Tanh { a } => {
                    let a = *a;
                    if head[a.0].needs_grad {
                        let da = g.zip_map(&node.value, "tanh-bwd", |gg, y| gg * (F::one() - y * y))?;
                        add_into(&mut head[a.0], da);
                    }
                }
                Op::Sigmoid { a } => {
                    let a = *a;
                    if head[a.0].needs_grad {
                        let da =
                            g.zip_map(&node.value, "sig-bwd", |gg, y| gg * y * (F::one() - y))?;
                        add_into(&mut head[a.0], da);
                    }
                }
                Op::Softmax { a } => {
                    let a = *a;
                    if head[a.0].needs_grad {
                        let y = &node.value;
                        let cols = y.cols();
                        let mut da = Tensor::zeros(y.shape());
                        for r in 0..y.rows() {
                            let yr = y.row(r);
                            let gr = &g.data()[r * cols..(r + 1) * cols];
                            let mut dot = F::zero();
                            for (&yy, &gg) in yr.iter().zip(gr) {
                                dot = dot + yy * gg;
                            }
                            let dr = &mut da.data_mut()[r * cols..(r + 1) * cols];
                            for ((d, &yy), &gg) in dr.iter_mut().zip(yr).zip(gr) {
                                *d = yy * (gg - dot);
                            }
                        }
                        add_into(&mut head[a.0], da);
                    }
                }
                Op::ConcatCols { parts } => {
                    let mut offset = 0;
                    let total_cols = node.value.cols();
                    for &p in parts {
                        let c = head[p.0].value.cols();
                        if head[p.0].needs_grad {
                            let rows = head[p.0].value.rows();
                            let mut dp = Tensor::zeros(head[p.0].value.shape());
                            for r in 0..rows {
                                let src = &g.data()[r * total_cols + offset..r * total_cols + offset + c];
                                dp.row_mut(r).copy_from_slice(src);
                            }
                            add_into(&mut head[p.0], dp);
                        }
                        offset += c;
                    }
                }
                Op::Embed { table, ids } => {
                    let table = *table;
                    if head[table.0].needs_grad {
                        let node_t = &mut head[table.0];
                        let cols = node_t.value.cols();
                        let shape = node_t.value.shape().to_vec();
                        let grad = node_t.grad.get_or_insert_with(|| Tensor::zeros(&shape));
                        for (r, &id) in ids.iter().enumerate() {
                            let dst = &mut grad.data_mut()[id * cols..(id + 1) * cols];
                            for (d, &v) in dst.iter_mut().zip(g.row(r)) {
                                *d = *d + v;
                            }
                        }
                    }
                }
                Op::Dropout { a, mask } => {
                    let a = *a;
                    if head[a.0].needs_grad {
                        let da = g.zip_map(mask, "dropout-bwd", |gg, m| gg * m)?;
                        add_into(&mut head[a.0], da);
                    }
                }
                Op::Scatter { a, mapping } => {
                    let a = *a;
                    if head[a.0].needs_grad {
                        let mut da = Tensor::zeros(head[a.0].value.shape());
                        for (i, &gidx) in mapping.iter().enumerate() {
                            da.data_mut()[i] = g.data()[gidx];
                        }
                        add_into(&mut head[a.0], da);
                    }
                }
                Op::ScaleByEntry { v, w, index } => {
                    let (v, w, index) = (*v, *w, *index);
                    let weight = head[w.0].value.data()[index];
                    if head[v.0].needs_grad {
                        let dv = g.map(|gg| gg * weight);
                        add_into(&mut head[v.0], dv);
                    }
                    if head[w.0].needs_grad {
                        let mut dot = F::zero();
                        for (&gg, &vv) in g.data().iter().zip(head[v.0].value.data()) {
                            dot = dot + gg * vv;
                        }
                        let mut dw = Tensor::zeros(head[w.0].value.shape());
                        dw.data_mut()[index] = dot;
                        add_into(&mut head[w.0], dw);
                    }
                }
                Op::AttnScores { query, keys } => {
                    let query = *query;
                    let t_len = keys.len();
                    let rows = node.value.rows();
                    if head[query.0].needs_grad {
                        let dim = head[query.0].value.cols();
                        let mut dq = Tensor::zeros(head[query.0].value.shape());
                        for (t, &k) in keys.iter().enumerate() {
                            let kv = &head[k.0].value;
                            for b in 0..rows {
                                let gw = g.data()[b * t_len + t];
                                let dst = &mut dq.data_mut()[b * dim..(b + 1) * dim];
                                for (d, &kk) in dst.iter_mut().zip(kv.row(b)) {
                                    *d = *d + gw * kk;
                                }
                            }
                        }
                        add_into(&mut head[query.0], dq);
                    }
                    for (t, &k) in keys.iter().enumerate() {
                        if head[k.0].needs_grad {
                            let dim = head[k.0].value.cols();
                            let mut dk = Tensor::zeros(head[k.0].value.shape());
                            for b in 0..rows {
                                let gw = g.data()[b * t_len + t];
                                let qrow = head[query.0].value.row(b);
                                let dst = &mut dk.data_mut()[b * dim..(b + 1) * dim];
                                for (d, &qq) in dst.iter_mut().zip(qrow) {
                                    *d = *d + gw * qq;
                                }
                            }
                            add_into(&mut head[k.0], dk);
                        }
                    }
                }
                Op::AttnContext { weights, values } => {
                    let weights = *weights;
                    let t_len = values.len();
                    let rows = node.value.rows();
                    let dim = node.value.cols();
                    if head[weights.0].needs_grad {
                        let mut dw = Tensor::zeros(head[weights.0].value.shape());
                        for (t, &v) in values.iter().enumerate() {
                            let vv = &head[v.0].value;
                            for b in 0..rows {
                                let mut dot = F::zero();
                                for (&gg, &xx) in g.row(b).iter().zip(vv.row(b)) {
                                    dot = dot + gg * xx;
                                }
                                dw.data_mut()[b * t_len + t] = dot;
                            }
                        }
                        add_into(&mut head[weights.0], dw);
                    }
                    for (t, &v) in values.iter().enumerate() {
                        if head[v.0].needs_grad {
                            let mut dv = Tensor::zeros(head[v.0].value.shape());
                            for b in 0..rows {
                                let w = head[weights.0].value.get2(b, t);
                                let dst = &mut dv.data_mut()[b * dim..(b + 1) * dim];
                                for (d, &gg) in dst.iter_mut().zip(g.row(b)) {
                                    *d = *d + w * gg;
                                }
                            }
                            add_into(&mut head[v.0], dv);
                        }
                    }
                }
                Op::BroadcastRows { v } => {
                    let v = *v;
                    if head[v.0].needs_grad {
                        let cols = node.value.cols();
                        let mut dv = vec![F::zero(); cols];
                        for r in 0..node.value.rows() {
                            for (d, &gg) in dv.iter_mut().zip(g.row(r)) {
                                *d = *d + gg;
                            }
                        }
                        let shape = head[v.0].value.shape().to_vec();
                        add_into(&mut head[v.0], Tensor::from_vec(shape, dv)?);
                    }
                }
                Op::NllRows { p, targets, mask } => {
                    let p = *p;
                    if head[p.0].needs_grad {
                        let floor = F::of_f64(NLL_FLOOR);
                        let node_p = &mut head[p.0];
                        let cols = node_p.value.cols();
                        let shape = node_p.value.shape().to_vec();
                        let grad = node_p
                            .grad
                            .get_or_insert_with(|| Tensor::zeros(&shape));
                        for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                            if !m {
                                continue;
                            }
                            let prob = node_p.value.data()[r * cols + t];
                            if prob > floor {
                                let gr = g.data()[r];
                                let slot = &mut grad.data_mut()[r * cols + t];
                                *slot = *slot - gr / prob;
                            }
                        }
                    }
                }
                Op::Sum { a } => {
                    let a = *a;
                    if head[a.0].needs_grad {
                        let gg = g.data()[0];
                        let da = Tensor::full(head[a.0].value.shape(), gg);
                        add_into(&mut head[a.0], da);
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_into<F: Scalar>(node: &mut Node<F>, delta: Tensor<F>) {
    match &mut node.grad {
        Some(g) => g.add_assign(&delta),
        None => node.grad = Some(delta),
    }
}

fn add_into_ref<F: Scalar>(node: &mut Node<F>, delta: &Tensor<F>) {
    match &mut node.grad {
        Some(g) => g.add_assign(delta),
        None => node.grad = Some(delta.clone()),
    }
}

fn softmax_tensor<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let cols = x.cols();
    let mut out = Tensor::zeros(x.shape());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mut max = row[0];
        for &v in row {
            if v > max {
                max = v;
            }
        }
        let dst = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let mut total = F::zero();
        for (d, &v) in dst.iter_mut().zip(row) {
            let e = (v - max).exp();
            *d = e;
            total = total + e;
        }
        for d in dst.iter_mut() {
            *d = *d / total;
        }
    }
    out
}

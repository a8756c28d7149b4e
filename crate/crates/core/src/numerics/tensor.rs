//! Dense row-major tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Flat row-major array with an explicit shape. Rank is 1 or 2 everywhere in
/// this crate; scalars are shape `[1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} holds {} values, got {}", shape, expected, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// 1-D tensor from values.
    pub fn vector(data: Vec<F>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// Rows of a rank-2 tensor; a rank-1 tensor is a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            r => panic!("rows() on rank-{} tensor", r),
        }
    }

    /// Columns of a rank-2 tensor; the length of a rank-1 tensor.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            r => panic!("cols() on rank-{} tensor", r),
        }
    }

    pub fn row(&self, r: usize) -> &[F] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols() + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: F) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(F, F) -> F) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += scale * other`, shapes must match exactly.
    pub fn add_scaled(&mut self, other: &Self, scale: F) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + scale * b;
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn sq_l2_norm(&self) -> F {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Index of the largest value; ties break to the lowest index.
    pub fn argmax_row(&self, r: usize) -> usize {
        let row = self.row(r);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = i;
            }
        }
        best
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix product with optional transposes: `op(a) * op(b)` where
    /// `op(x) = x^T` when the flag is set. Both operands must be rank 2.
    pub fn matmul(&self, other: &Self, ta: bool, tb: bool) -> Result<Self> {
        let mismatch = |detail: String| Error::ShapeMismatch {
            op: "matmul",
            detail,
        };
        if self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(mismatch(format!(
                "need rank-2 operands, got {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, ka) = if ta {
            (self.shape[1], self.shape[0])
        } else {
            (self.shape[0], self.shape[1])
        };
        let (kb, n) = if tb {
            (other.shape[1], other.shape[0])
        } else {
            (other.shape[0], other.shape[1])
        };
        if ka != kb {
            return Err(mismatch(format!(
                "inner extents {} vs {} ({:?}{} x {:?}{})",
                ka,
                kb,
                self.shape,
                if ta { "^T" } else { "" },
                other.shape,
                if tb { "^T" } else { "" },
            )));
        }
        let k = ka;
        let mut out = vec![F::zero(); m * n];
        match (ta, tb) {
            (false, false) => {
                // Rows of A processed four at a time so each loaded row of B
                // feeds four accumulators.
                let mut i = 0;
                while i + 4 <= m {
                    let (r0, rest) = out[i * n..(i + 4) * n].split_at_mut(n);
                    let (r1, rest) = rest.split_at_mut(n);
                    let (r2, r3) = rest.split_at_mut(n);
                    for p in 0..k {
                        let a0 = self.data[i * k + p];
                        let a1 = self.data[(i + 1) * k + p];
                        let a2 = self.data[(i + 2) * k + p];
                        let a3 = self.data[(i + 3) * k + p];
                        let b_row = &other.data[p * n..(p + 1) * n];
                        for j in 0..n {
                            let b = b_row[j];
                            r0[j] = r0[j] + a0 * b;
                            r1[j] = r1[j] + a1 * b;
                            r2[j] = r2[j] + a2 * b;
                            r3[j] = r3[j] + a3 * b;
                        }
                    }
                    i += 4;
                }
                for i in i..m {
                    let a_row = &self.data[i * k..(i + 1) * k];
                    let out_row = &mut out[i * n..(i + 1) * n];
                    for (p, &a) in a_row.iter().enumerate() {
                        let b_row = &other.data[p * n..(p + 1) * n];
                        for (o, &b) in out_row.iter_mut().zip(b_row) {
                            *o = *o + a * b;
                        }
                    }
                }
            }
            (false, true) => {
                for i in 0..m {
                    let a_row = &self.data[i * k..(i + 1) * k];
                    let out_row = &mut out[i * n..(i + 1) * n];
                    let mut j = 0;
                    while j + 4 <= n {
                        let b0 = &other.data[j * k..(j + 1) * k];
                        let b1 = &other.data[(j + 1) * k..(j + 2) * k];
                        let b2 = &other.data[(j + 2) * k..(j + 3) * k];
                        let b3 = &other.data[(j + 3) * k..(j + 4) * k];
                        let mut acc0 = F::zero();
                        let mut acc1 = F::zero();
                        let mut acc2 = F::zero();
                        let mut acc3 = F::zero();
                        for (p, &a) in a_row.iter().enumerate() {
                            acc0 = acc0 + a * b0[p];
                            acc1 = acc1 + a * b1[p];
                            acc2 = acc2 + a * b2[p];
                            acc3 = acc3 + a * b3[p];
                        }
                        out_row[j] = acc0;
                        out_row[j + 1] = acc1;
                        out_row[j + 2] = acc2;
                        out_row[j + 3] = acc3;
                        j += 4;
                    }
                    for j in j..n {
                        let b_row = &other.data[j * k..(j + 1) * k];
                        let mut acc = F::zero();
                        for (&a, &b) in a_row.iter().zip(b_row) {
                            acc = acc + a * b;
                        }
                        out_row[j] = acc;
                    }
                }
            }
            (true, false) => {
                let mut p = 0;
                while p + 4 <= k {
                    let a0 = &self.data[p * m..(p + 1) * m];
                    let a1 = &self.data[(p + 1) * m..(p + 2) * m];
                    let a2 = &self.data[(p + 2) * m..(p + 3) * m];
                    let a3 = &self.data[(p + 3) * m..(p + 4) * m];
                    let b0 = &other.data[p * n..(p + 1) * n];
                    let b1 = &other.data[(p + 1) * n..(p + 2) * n];
                    let b2 = &other.data[(p + 2) * n..(p + 3) * n];
                    let b3 = &other.data[(p + 3) * n..(p + 4) * n];
                    for i in 0..m {
                        let (x0, x1, x2, x3) = (a0[i], a1[i], a2[i], a3[i]);
                        let out_row = &mut out[i * n..(i + 1) * n];
                        for j in 0..n {
                            out_row[j] =
                                out_row[j] + x0 * b0[j] + x1 * b1[j] + x2 * b2[j] + x3 * b3[j];
                        }
                    }
                    p += 4;
                }
                for p in p..k {
                    let a_row = &self.data[p * m..(p + 1) * m];
                    let b_row = &other.data[p * n..(p + 1) * n];
                    for (i, &a) in a_row.iter().enumerate() {
                        let out_row = &mut out[i * n..(i + 1) * n];
                        for (o, &b) in out_row.iter_mut().zip(b_row) {
                            *o = *o + a * b;
                        }
                    }
                }
            }
            (true, true) => {
                // Rare; materialize self^T then run the plain kernel.
                let mut at = vec![F::zero(); m * k];
                for p in 0..k {
                    for i in 0..m {
                        at[i * k + p] = self.data[p * m + i];
                    }
                }
                let at = Tensor {
                    shape: vec![m, k],
                    data: at,
                };
                return at.matmul(other, false, true);
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_plain() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[3, 2], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b, false, false).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_transposes_agree() {
        let a = t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 5.0, -6.0]);
        let b = t(&[2, 3], &[7.0, 8.0, -9.0, 1.0, 2.0, 3.0]);
        // a * b^T three other ways.
        let nt = a.matmul(&b, false, true).unwrap();
        let bt = t(&[3, 2], &[7.0, 1.0, 8.0, 2.0, -9.0, 3.0]);
        let nn = a.matmul(&bt, false, false).unwrap();
        assert_eq!(nt, nn);
        let at = t(&[3, 2], &[1.0, 0.5, -2.0, 5.0, 3.0, -6.0]);
        let tn = at.matmul(&bt, true, false).unwrap();
        assert_eq!(nt, tn);
        let tt = at.matmul(&b, true, true).unwrap();
        assert_eq!(nt.data(), tt.data());
    }

    #[test]
    fn matmul_rejects_bad_inner_extent() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        assert!(a.matmul(&b, false, false).is_err());
    }

    #[test]
    fn argmax_ties_break_low() {
        let v = t(&[4], &[0.5, 0.7, 0.7, 0.1]);
        assert_eq!(v.argmax_row(0), 1);
    }
}

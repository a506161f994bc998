//! Weighted canonical (CP) tensors in three modes.

use nalgebra::DMatrix;

use super::dense::Dense3;
use super::{check_index, col, TensorView};
use crate::error::{Error, Result};

/// `sum_k w_k u_k^(1) ⊗ u_k^(2) ⊗ u_k^(3)`, side matrices stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalTensor {
    dims: [usize; 3],
    weights: Vec<f64>,
    factors: [DMatrix<f64>; 3],
}

impl CanonicalTensor {
    pub fn new(weights: Vec<f64>, factors: [DMatrix<f64>; 3]) -> Result<Self> {
        let rank = weights.len();
        for (l, f) in factors.iter().enumerate() {
            if f.ncols() != rank {
                return Err(Error::Shape(format!(
                    "mode {l} side matrix has {} columns, expected rank {rank}",
                    f.ncols()
                )));
            }
        }
        let dims = [factors[0].nrows(), factors[1].nrows(), factors[2].nrows()];
        Ok(Self { dims, weights, factors })
    }

    /// Rank-0 tensor of the given shape.
    pub fn zero(dims: [usize; 3]) -> Self {
        Self {
            dims,
            weights: Vec::new(),
            factors: dims.map(|n| DMatrix::zeros(n, 0)),
        }
    }

    /// Builds from per-term column vectors.
    pub fn from_terms(dims: [usize; 3], terms: &[(f64, [&[f64]; 3])]) -> Result<Self> {
        let mut factors = dims.map(|n| DMatrix::zeros(n, terms.len()));
        let mut weights = Vec::with_capacity(terms.len());
        for (k, (w, vecs)) in terms.iter().enumerate() {
            for l in 0..3 {
                if vecs[l].len() != dims[l] {
                    return Err(Error::Shape(format!(
                        "term {k} mode {l} has length {}, expected {}",
                        vecs[l].len(),
                        dims[l]
                    )));
                }
                factors[l].column_mut(k).copy_from_slice(vecs[l]);
            }
            weights.push(*w);
        }
        Ok(Self { dims, weights, factors })
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn factor(&self, mode: usize) -> &DMatrix<f64> {
        &self.factors[mode]
    }

    pub fn factors(&self) -> &[DMatrix<f64>; 3] {
        &self.factors
    }

    /// Column `k` of side matrix `mode`.
    pub fn column(&self, mode: usize, k: usize) -> &[f64] {
        col(&self.factors[mode], k)
    }

    /// Unit-norm columns with the norms moved into the weights.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for k in 0..out.rank() {
            for l in 0..3 {
                let norm = out.factors[l].column(k).norm();
                if norm > 0.0 {
                    out.factors[l].column_mut(k).unscale_mut(norm);
                    out.weights[k] *= norm;
                } else {
                    out.weights[k] = 0.0;
                }
            }
        }
        out
    }

    /// Terms `range` as a new tensor.
    pub fn select(&self, range: std::ops::Range<usize>) -> Self {
        let len = range.len();
        Self {
            dims: self.dims,
            weights: self.weights[range.clone()].to_vec(),
            factors: std::array::from_fn(|l| self.factors[l].columns(range.start, len).into_owned()),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w *= s);
        out
    }

    /// Term-wise concatenation (tensor sum).
    pub fn concat(parts: &[&CanonicalTensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
        let dims = first.dims;
        if parts.iter().any(|p| p.dims != dims) {
            return Err(Error::Shape("concatenated tensors differ in shape".into()));
        }
        let rank: usize = parts.iter().map(|p| p.rank()).sum();
        let mut factors = dims.map(|n| DMatrix::zeros(n, rank));
        let mut weights = Vec::with_capacity(rank);
        let mut at = 0;
        for p in parts {
            for l in 0..3 {
                factors[l].columns_mut(at, p.rank()).copy_from(&p.factors[l]);
            }
            weights.extend_from_slice(&p.weights);
            at += p.rank();
        }
        Ok(Self { dims, weights, factors })
    }

    /// Frobenius inner product through mode-wise Gram matrices.
    pub fn inner(&self, other: &CanonicalTensor) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!("inner product of {:?} and {:?}", self.dims, other.dims)));
        }
        let grams: [DMatrix<f64>; 3] = std::array::from_fn(|l| self.factors[l].tr_mul(&other.factors[l]));
        let mut total = 0.0;
        for a in 0..self.rank() {
            let mut row = 0.0;
            for b in 0..other.rank() {
                row += other.weights[b] * grams[0][(a, b)] * grams[1][(a, b)] * grams[2][(a, b)];
            }
            total += self.weights[a] * row;
        }
        Ok(total)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).map(|s| s.max(0.0).sqrt()).unwrap_or(0.0)
    }
}

impl TensorView for CanonicalTensor {
    fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    fn entry(&self, i: [usize; 3]) -> f64 {
        let [f1, f2, f3] = &self.factors;
        self.weights
            .iter()
            .enumerate()
            .map(|(k, w)| w * f1[(i[0], k)] * f2[(i[1], k)] * f3[(i[2], k)])
            .sum()
    }

    fn to_dense(&self) -> Result<Dense3> {
        let mut out = Dense3::zeros(self.dims)?;
        let [n1, n2, n3] = self.dims;
        for k in 0..self.rank() {
            let (u1, u2, u3) = (self.column(0, k), self.column(1, k), self.column(2, k));
            let data = out.data_mut();
            for a in 0..n1 {
                let wa = self.weights[k] * u1[a];
                for b in 0..n2 {
                    let wab = wa * u2[b];
                    let row = &mut data[(a * n2 + b) * n3..(a * n2 + b + 1) * n3];
                    for (x, u) in row.iter_mut().zip(u3) {
                        *x += wab * u;
                    }
                }
            }
        }
        Ok(out)
    }
}

impl CanonicalTensor {
    /// Checked entry evaluation.
    pub fn eval(&self, i: [usize; 3]) -> Result<f64> {
        check_index(i, self.dims)?;
        Ok(self.entry(i))
    }
}

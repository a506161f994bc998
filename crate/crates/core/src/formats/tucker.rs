//! Orthogonal Tucker tensors.

use nalgebra::DMatrix;

use super::canonical::CanonicalTensor;
use super::dense::Dense3;
use super::{check_index, col, TensorView};
use crate::error::{Error, Result};

/// Tolerance on `V^T V = I` accepted by the constructor.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

/// `core ×1 V1 ×2 V2 ×3 V3`; the core is stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerTensor {
    ranks: [usize; 3],
    core: Vec<f64>,
    factors: [DMatrix<f64>; 3],
}

impl TuckerTensor {
    pub fn new(core: Vec<f64>, factors: [DMatrix<f64>; 3]) -> Result<Self> {
        let ranks = [factors[0].ncols(), factors[1].ncols(), factors[2].ncols()];
        if core.len() != ranks.iter().product::<usize>() {
            return Err(Error::Shape(format!("core of length {} for ranks {ranks:?}", core.len())));
        }
        for (l, f) in factors.iter().enumerate() {
            if f.ncols() > f.nrows() {
                return Err(Error::Shape(format!("mode {l} rank {} exceeds size {}", f.ncols(), f.nrows())));
            }
            let gram = f.tr_mul(f);
            let defect = (gram - DMatrix::identity(f.ncols(), f.ncols())).amax();
            if defect > ORTHONORMALITY_TOL {
                return Err(Error::Numerical(format!(
                    "mode {l} factor is not orthonormal (defect {defect:.3e})"
                )));
            }
        }
        Ok(Self { ranks, core, factors })
    }

    pub fn ranks(&self) -> [usize; 3] {
        self.ranks
    }

    pub fn core(&self) -> &[f64] {
        &self.core
    }

    pub fn factor(&self, mode: usize) -> &DMatrix<f64> {
        &self.factors[mode]
    }

    pub fn factors(&self) -> &[DMatrix<f64>; 3] {
        &self.factors
    }

    #[inline]
    pub fn core_at(&self, a: usize, b: usize, c: usize) -> f64 {
        self.core[(a * self.ranks[1] + b) * self.ranks[2] + c]
    }

    /// Frobenius norm, equal to the core norm.
    pub fn norm(&self) -> f64 {
        self.core.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn eval(&self, i: [usize; 3]) -> Result<f64> {
        check_index(i, self.dims())?;
        Ok(self.entry(i))
    }

    /// Inner product with a canonical tensor, in factored form.
    pub fn inner_canonical(&self, c: &CanonicalTensor) -> Result<f64> {
        if self.dims() != c.dims() {
            return Err(Error::Shape(format!("inner product of {:?} and {:?}", self.dims(), c.dims())));
        }
        let proj: [DMatrix<f64>; 3] = std::array::from_fn(|l| self.factors[l].tr_mul(c.factor(l)));
        let [r1, r2, r3] = self.ranks;
        let mut total = 0.0;
        for k in 0..c.rank() {
            let mut s = 0.0;
            for a in 0..r1 {
                let pa = proj[0][(a, k)];
                for b in 0..r2 {
                    let pab = pa * proj[1][(b, k)];
                    let base = (a * r2 + b) * r3;
                    for cc in 0..r3 {
                        s += self.core[base + cc] * pab * proj[2][(cc, k)];
                    }
                }
            }
            total += c.weights()[k] * s;
        }
        Ok(total)
    }
}

impl TensorView for TuckerTensor {
    fn dims(&self) -> [usize; 3] {
        [self.factors[0].nrows(), self.factors[1].nrows(), self.factors[2].nrows()]
    }

    fn entry(&self, i: [usize; 3]) -> f64 {
        let [r1, r2, r3] = self.ranks;
        let [f1, f2, f3] = &self.factors;
        let mut total = 0.0;
        for a in 0..r1 {
            let va = f1[(i[0], a)];
            if va == 0.0 {
                continue;
            }
            let mut sa = 0.0;
            for b in 0..r2 {
                let base = (a * r2 + b) * r3;
                let mut sb = 0.0;
                for c in 0..r3 {
                    sb += self.core[base + c] * f3[(i[2], c)];
                }
                sa += sb * f2[(i[1], b)];
            }
            total += sa * va;
        }
        total
    }

    fn to_dense(&self) -> Result<Dense3> {
        let dims = self.dims();
        let mut out = Dense3::zeros(dims)?;
        let [r1, r2, r3] = self.ranks;
        let [n1, n2, n3] = dims;
        // contract mode 3, then 2, then 1
        let mut t3 = vec![0.0; r1 * r2 * n3];
        for ab in 0..r1 * r2 {
            for c in 0..r3 {
                let g = self.core[ab * r3 + c];
                let v = col(&self.factors[2], c);
                for (x, vi) in t3[ab * n3..(ab + 1) * n3].iter_mut().zip(v) {
                    *x += g * vi;
                }
            }
        }
        let mut t2 = vec![0.0; r1 * n2 * n3];
        for a in 0..r1 {
            for b in 0..r2 {
                let src = &t3[(a * r2 + b) * n3..(a * r2 + b + 1) * n3];
                for j in 0..n2 {
                    let v = self.factors[1][(j, b)];
                    let dst = &mut t2[(a * n2 + j) * n3..(a * n2 + j + 1) * n3];
                    for (x, s) in dst.iter_mut().zip(src) {
                        *x += v * s;
                    }
                }
            }
        }
        let data = out.data_mut();
        for a in 0..r1 {
            let src = &t2[a * n2 * n3..(a + 1) * n2 * n3];
            for i in 0..n1 {
                let v = self.factors[0][(i, a)];
                for (x, s) in data[i * n2 * n3..(i + 1) * n2 * n3].iter_mut().zip(src) {
                    *x += v * s;
                }
            }
        }
        Ok(out)
    }
}

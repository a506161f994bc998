//! Canonical tensors given implicitly as charge-weighted windows of one
//! doubled-grid profile family.

use nalgebra::DMatrix;

use super::canonical::CanonicalTensor;
use super::{col, TensorView};
use crate::error::{Error, Result};

/// `sum_nu z_nu sum_k w_k ⊗_l p_k[i_l - j_nu,l + n]` on an `n^3` grid.
///
/// `profiles` holds unit-norm columns of length `2n` shared by all modes. The
/// explicit rank is `nodes.len() * profiles.ncols()`, but storage stays
/// `O(n R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedCanonical {
    n: usize,
    profiles: DMatrix<f64>,
    profile_weights: Vec<f64>,
    nodes: Vec<[usize; 3]>,
    charges: Vec<f64>,
}

impl WindowedCanonical {
    pub fn new(
        n: usize,
        profiles: DMatrix<f64>,
        profile_weights: Vec<f64>,
        nodes: Vec<[usize; 3]>,
        charges: Vec<f64>,
    ) -> Result<Self> {
        if profiles.nrows() != 2 * n {
            return Err(Error::Shape(format!("profiles have {} rows, expected {}", profiles.nrows(), 2 * n)));
        }
        if profiles.ncols() != profile_weights.len() || nodes.len() != charges.len() {
            return Err(Error::Shape("profile or particle lists differ in length".into()));
        }
        if let Some(j) = nodes.iter().find(|j| j.iter().any(|&x| x > n)) {
            return Err(Error::Shape(format!("node {j:?} outside the grid")));
        }
        Ok(Self { n, profiles, profile_weights, nodes, charges })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn profiles(&self) -> &DMatrix<f64> {
        &self.profiles
    }

    pub fn profile_weights(&self) -> &[f64] {
        &self.profile_weights
    }

    pub fn nodes(&self) -> &[[usize; 3]] {
        &self.nodes
    }

    pub fn charges(&self) -> &[f64] {
        &self.charges
    }

    pub fn terms_per_particle(&self) -> usize {
        self.profile_weights.len()
    }

    /// Explicit canonical rank.
    pub fn rank(&self) -> usize {
        self.nodes.len() * self.terms_per_particle()
    }

    /// Window of profile `k` seen from node coordinate `j`: `n` contiguous values.
    #[inline]
    pub fn slice(&self, k: usize, j: usize) -> &[f64] {
        &col(&self.profiles, k)[self.n - j..2 * self.n - j]
    }

    /// Value contributed at cell `i` by a unit charge at node `j`.
    #[inline]
    pub fn kernel_value(&self, j: [usize; 3], i: [usize; 3]) -> f64 {
        let off = [i[0] + self.n - j[0], i[1] + self.n - j[1], i[2] + self.n - j[2]];
        let p = &self.profiles;
        self.profile_weights
            .iter()
            .enumerate()
            .map(|(k, w)| w * p[(off[0], k)] * p[(off[1], k)] * p[(off[2], k)])
            .sum()
    }

    /// Explicit canonical form, unit columns, terms ordered particle-major.
    pub fn to_canonical(&self) -> CanonicalTensor {
        let r = self.terms_per_particle();
        let rank = self.rank();
        let mut factors: [DMatrix<f64>; 3] = std::array::from_fn(|_| DMatrix::zeros(self.n, rank));
        let mut weights = Vec::with_capacity(rank);
        for (nu, (j, z)) in self.nodes.iter().zip(&self.charges).enumerate() {
            for k in 0..r {
                let mut w = z * self.profile_weights[k];
                for l in 0..3 {
                    let s = self.slice(k, j[l]);
                    let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let mut column = factors[l].column_mut(nu * r + k);
                    if norm > 0.0 {
                        for (c, v) in column.iter_mut().zip(s) {
                            *c = v / norm;
                        }
                    }
                    w *= norm;
                }
                weights.push(w);
            }
        }
        CanonicalTensor::new(weights, factors).expect("consistent shapes")
    }
}

impl TensorView for WindowedCanonical {
    fn dims(&self) -> [usize; 3] {
        [self.n; 3]
    }

    fn entry(&self, i: [usize; 3]) -> f64 {
        self.nodes
            .iter()
            .zip(&self.charges)
            .map(|(j, z)| z * self.kernel_value(*j, i))
            .sum()
    }
}

//! Cumulated canonical tensors: weighted copies of one local tensor placed at
//! grid centres.

use std::collections::HashMap;

use super::canonical::CanonicalTensor;
use super::{col, TensorView};
use crate::error::{Error, Result};
use crate::particles::linf;

/// Default cap on overlapping windows under the soft policy.
pub const DEFAULT_OVERLAP_CAP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[derive(Default)]
pub enum OverlapPolicy {
    /// Windows must be pairwise disjoint.
    #[default]
    Strict,
    /// Windows may overlap; the number of centres within `2γ` of any centre
    /// (itself included) may not exceed `cap`. That count bounds `|L(i)|`.
    Soft { cap: usize },
}


/// `sum_nu c_nu U0(· - j_nu)` where `U0` lives on a `(2γ+1)^3` window.
#[derive(Debug, Clone)]
pub struct Cct {
    local: CanonicalTensor,
    gamma: usize,
    centers: Vec<[usize; 3]>,
    weights: Vec<f64>,
    grid_dims: [usize; 3],
    policy: OverlapPolicy,
    buckets: HashMap<[usize; 3], Vec<u32>>,
}

impl PartialEq for Cct {
    fn eq(&self, other: &Self) -> bool {
        self.local == other.local
            && self.gamma == other.gamma
            && self.centers == other.centers
            && self.weights == other.weights
            && self.grid_dims == other.grid_dims
            && self.policy == other.policy
    }
}

impl Cct {
    pub fn new(
        local: CanonicalTensor,
        gamma: usize,
        centers: Vec<[usize; 3]>,
        weights: Vec<f64>,
        grid_dims: [usize; 3],
        policy: OverlapPolicy,
    ) -> Result<Self> {
        let width = 2 * gamma + 1;
        if local.dims() != [width; 3] {
            return Err(Error::Shape(format!(
                "local tensor has shape {:?}, expected window {width}^3",
                local.dims()
            )));
        }
        if centers.len() != weights.len() {
            return Err(Error::Shape(format!("{} centres but {} weights", centers.len(), weights.len())));
        }
        if let Some(j) = centers.iter().find(|j| (0..3).any(|l| j[l] >= grid_dims[l])) {
            return Err(Error::Shape(format!("centre {j:?} outside grid {grid_dims:?}")));
        }
        let mut cct = Self {
            local,
            gamma,
            centers,
            weights,
            grid_dims,
            policy,
            buckets: HashMap::new(),
        };
        for (nu, j) in cct.centers.iter().enumerate() {
            cct.buckets.entry(j.map(|x| x / width)).or_default().push(nu as u32);
        }
        cct.check_policy()?;
        Ok(cct)
    }

    /// The empty CCT on a grid.
    pub fn empty(grid_dims: [usize; 3]) -> Self {
        Self {
            local: CanonicalTensor::zero([1; 3]),
            gamma: 0,
            centers: Vec::new(),
            weights: Vec::new(),
            grid_dims,
            policy: OverlapPolicy::Strict,
            buckets: HashMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty() || self.local.rank() == 0
    }

    pub fn local(&self) -> &CanonicalTensor {
        &self.local
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn centers(&self) -> &[[usize; 3]] {
        &self.centers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn policy(&self) -> OverlapPolicy {
        self.policy
    }

    fn width(&self) -> usize {
        2 * self.gamma + 1
    }

    /// Centres whose bucket may hold a point within `radius` of `i`.
    fn candidates(&self, i: [usize; 3], radius: usize) -> impl Iterator<Item = usize> + '_ {
        let w = self.width();
        let lo = i.map(|x| x.saturating_sub(radius) / w);
        let hi = i.map(|x| (x + radius) / w);
        (lo[0]..=hi[0])
            .flat_map(move |a| (lo[1]..=hi[1]).flat_map(move |b| (lo[2]..=hi[2]).map(move |c| [a, b, c])))
            .filter_map(|key| self.buckets.get(&key))
            .flat_map(|v| v.iter().map(|&nu| nu as usize))
    }

    /// Centres within `radius` (infinity norm) of `i`, ascending.
    pub fn centers_within(&self, i: [usize; 3], radius: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .candidates(i, radius)
            .filter(|&nu| linf(&self.centers[nu], &i) <= radius)
            .collect();
        out.sort_unstable();
        out
    }

    /// Copies whose window contains `i`.
    pub fn lookup(&self, i: [usize; 3]) -> Vec<usize> {
        if self.centers.is_empty() {
            return Vec::new();
        }
        self.centers_within(i, self.gamma)
    }

    fn check_policy(&self) -> Result<()> {
        if self.local.rank() == 0 {
            return Ok(());
        }
        for (nu, j) in self.centers.iter().enumerate() {
            let near = self.centers_within(*j, 2 * self.gamma);
            match self.policy {
                OverlapPolicy::Strict => {
                    if let Some(&mu) = near.iter().find(|&&mu| mu != nu) {
                        return Err(Error::Separation(format!(
                            "windows of centres {nu} and {mu} overlap (γ = {}); use the soft policy or a finer grid",
                            self.gamma
                        )));
                    }
                }
                OverlapPolicy::Soft { cap } => {
                    if near.len() > cap {
                        return Err(Error::Separation(format!(
                            "centre {nu} has {} overlapping windows, cap is {cap}",
                            near.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Value of copy `nu` at `i`, zero outside its window.
    pub fn copy_entry(&self, nu: usize, i: [usize; 3]) -> f64 {
        let j = self.centers[nu];
        let g = self.gamma;
        if (0..3).any(|l| i[l].abs_diff(j[l]) > g) {
            return 0.0;
        }
        let local = [0, 1, 2].map(|l| i[l] + g - j[l]);
        self.local.entry(local)
    }

    /// Grid index range `[lo, hi)` of copy `nu` along `mode`, clipped to the grid,
    /// and the matching first local index.
    pub fn window_range(&self, nu: usize, mode: usize) -> (usize, usize, usize) {
        let j = self.centers[nu][mode];
        let lo = j.saturating_sub(self.gamma);
        let hi = (j + self.gamma + 1).min(self.grid_dims[mode]);
        (lo, hi, lo + self.gamma - j)
    }

    /// Squared norm through overlap pairs.
    pub fn norm_sq(&self) -> f64 {
        let mut total = 0.0;
        for nu in 0..self.centers.len() {
            for mu in self.centers_within(self.centers[nu], 2 * self.gamma) {
                total += self.weights[nu] * self.weights[mu] * self.copy_inner(nu, self, mu);
            }
        }
        total
    }

    /// `<copy nu of self, copy mu of other>` restricted to the grid.
    pub fn copy_inner(&self, nu: usize, other: &Cct, mu: usize) -> f64 {
        let mut ranges = [(0, 0, 0); 3];
        for (l, r) in ranges.iter_mut().enumerate() {
            let (a_lo, a_hi, a_off) = self.window_range(nu, l);
            let (b_lo, b_hi, b_off) = other.window_range(mu, l);
            let lo = a_lo.max(b_lo);
            let hi = a_hi.min(b_hi);
            if lo >= hi {
                return 0.0;
            }
            *r = (lo - a_lo + a_off, lo - b_lo + b_off, hi - lo);
        }
        let mut total = 0.0;
        for p in 0..self.local.rank() {
            for q in 0..other.local.rank() {
                let mut prod = self.local.weights()[p] * other.local.weights()[q];
                for (l, &(sa, sb, len)) in ranges.iter().enumerate() {
                    let u = &col(self.local.factor(l), p)[sa..sa + len];
                    let v = &col(other.local.factor(l), q)[sb..sb + len];
                    prod *= u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
                }
                total += prod;
            }
        }
        total
    }
}

impl TensorView for Cct {
    fn dims(&self) -> [usize; 3] {
        self.grid_dims
    }

    fn entry(&self, i: [usize; 3]) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.lookup(i).into_iter().map(|nu| self.weights[nu] * self.copy_entry(nu, i)).sum()
    }
}

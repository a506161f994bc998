//! Interpolation matrices `A[i, j] = p(|x_i - x_j|)` on grid points as a
//! sum of Kronecker products of symmetric Toeplitz matrices (long part) plus
//! an exact near-field stencil (short part), and a CG solver on top.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::kernel::{QuadratureRule, RadialKernel};
use crate::particles::Grid3;

/// Largest near-field stencil, in entries.
pub const MAX_STENCIL: usize = 1 << 21;

/// Toeplitz matrix applied through a circulant of length `2n`.
struct CirculantToeplitz {
    weight: f64,
    generator: Vec<f64>,
    spectrum: Vec<Complex64>,
}

#[derive(Clone)]
struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

pub struct RSOperator {
    grid: Grid3,
    kernel: RadialKernel,
    long: Vec<CirculantToeplitz>,
    gamma: usize,
    /// Exact kernel minus long part, for offsets in `[-γ, γ]^3`.
    stencil: Vec<f64>,
    /// Diagonal taken from the expansion because the kernel is singular at 0.
    regularized_diagonal: bool,
    active: Option<Vec<[usize; 3]>>,
    fft: FftPair,
}

impl std::fmt::Debug for RSOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RSOperator")
            .field("n", &self.grid.n())
            .field("kernel", &self.kernel)
            .field("long_terms", &self.long.len())
            .field("gamma", &self.gamma)
            .field("active", &self.active.as_ref().map(Vec::len))
            .finish()
    }
}

/// Builds the operator from the first `long_terms` terms of `rule`, with
/// exact kernel values for all pairs within `gamma` cells (infinity norm).
/// `active` restricts the operator to a subset of grid points.
pub fn build_rs_operator(
    rule: &QuadratureRule,
    grid: Grid3,
    long_terms: usize,
    gamma: usize,
    active: Option<Vec<[usize; 3]>>,
) -> Result<RSOperator> {
    let n = grid.n();
    if long_terms > rule.len() {
        return Err(Error::Domain(format!("{long_terms} long terms requested, rule has {}", rule.len())));
    }
    let width = 2 * gamma + 1;
    if width.checked_pow(3).is_none_or(|w| w > MAX_STENCIL) || gamma >= n {
        return Err(Error::Capacity(format!("near-field radius {gamma} exceeds the stencil budget")));
    }
    if let Some(points) = &active {
        let mut seen = HashMap::with_capacity(points.len());
        for (a, p) in points.iter().enumerate() {
            if p.iter().any(|&x| x >= n) {
                return Err(Error::Domain(format!("active point {p:?} outside the grid")));
            }
            if let Some(b) = seen.insert(*p, a) {
                return Err(Error::Domain(format!("active points {b} and {a} coincide")));
            }
        }
    }
    let h = grid.step();
    let mut planner = FftPlanner::new();
    let fft = FftPair { forward: planner.plan_fft_forward(2 * n), inverse: planner.plan_fft_inverse(2 * n) };
    let generators: Vec<(f64, Vec<f64>)> = (0..long_terms)
        .map(|k| {
            let t = rule.nodes()[k];
            let g = (0..n).map(|d| (-(t * d as f64 * h).powi(2)).exp()).collect();
            (rule.weights()[k], g)
        })
        .collect();
    let long: Vec<CirculantToeplitz> = generators
        .into_iter()
        .map(|(w, g)| {
            let mut c: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); 2 * n];
            for d in 0..n {
                c[d].re = g[d];
            }
            for d in 1..n {
                c[2 * n - d].re = g[d];
            }
            fft.forward.process(&mut c);
            CirculantToeplitz { weight: w, generator: g, spectrum: c }
        })
        .collect();
    let kernel = rule.kernel();
    let regularized_diagonal = matches!(kernel, RadialKernel::Newton | RadialKernel::Yukawa { .. });
    if regularized_diagonal {
        log::warn!("kernel is singular at r = 0; the diagonal uses the expansion value");
    }
    let g = gamma as isize;
    let mut stencil = Vec::with_capacity(width * width * width);
    for a in -g..=g {
        for b in -g..=g {
            for c in -g..=g {
                let d = [a, b, c].map(|x| x.unsigned_abs());
                let long_value: f64 =
                    long.iter().map(|t: &CirculantToeplitz| t.weight * t.generator[d[0]] * t.generator[d[1]] * t.generator[d[2]]).sum();
                let r = h * ((a * a + b * b + c * c) as f64).sqrt();
                let exact = if r > 0.0 {
                    kernel.value(r)
                } else if regularized_diagonal {
                    rule.value(0.0)
                } else {
                    kernel.value(0.0)
                };
                stencil.push(exact - long_value);
            }
        }
    }
    Ok(RSOperator { grid, kernel, long, gamma, stencil, regularized_diagonal, active, fft })
}

impl RSOperator {
    pub fn grid(&self) -> Grid3 {
        self.grid
    }

    pub fn kernel(&self) -> RadialKernel {
        self.kernel
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn long_terms(&self) -> usize {
        self.long.len()
    }

    pub fn regularized_diagonal(&self) -> bool {
        self.regularized_diagonal
    }

    pub fn active(&self) -> Option<&[[usize; 3]]> {
        self.active.as_deref()
    }

    /// Length of the vectors the operator acts on.
    pub fn len(&self) -> usize {
        match &self.active {
            Some(p) => p.len(),
            None => self.grid.n().pow(3),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entry `A[a, b]` of the operator, computed directly.
    pub fn entry(&self, a: usize, b: usize) -> f64 {
        let (i, j) = match &self.active {
            Some(p) => (p[a], p[b]),
            None => (self.unflatten(a), self.unflatten(b)),
        };
        let d = [0, 1, 2].map(|l| i[l] as isize - j[l] as isize);
        let a = d.map(|x| x.unsigned_abs());
        let mut value: f64 =
            self.long.iter().map(|t| t.weight * t.generator[a[0]] * t.generator[a[1]] * t.generator[a[2]]).sum();
        let g = self.gamma as isize;
        if d.iter().all(|x| x.abs() <= g) {
            value += self.stencil[self.stencil_offset(d)];
        }
        value
    }

    fn stencil_offset(&self, d: [isize; 3]) -> usize {
        let w = 2 * self.gamma + 1;
        let g = self.gamma as isize;
        ((d[0] + g) as usize * w + (d[1] + g) as usize) * w + (d[2] + g) as usize
    }

    fn unflatten(&self, a: usize) -> [usize; 3] {
        let n = self.grid.n();
        [a / (n * n), (a / n) % n, a % n]
    }

    /// Toeplitz product along `mode` of a row-major `n^3` array.
    fn apply_mode(&self, term: &CirculantToeplitz, mode: usize, x: &[f64]) -> Vec<f64> {
        let n = self.grid.n();
        let stride = n.pow(2 - mode as u32);
        let mut out = vec![0.0; x.len()];
        // fibres indexed by (outer, inner) with the mode index in between
        let inner = stride;
        let outer = x.len() / (n * stride);
        let fibres: Vec<Vec<f64>> = (0..outer * inner)
            .into_par_iter()
            .map_init(
                || vec![Complex64::new(0.0, 0.0); 2 * n],
                |buf, f| {
                    let (o, i) = (f / inner, f % inner);
                    let base = o * n * stride + i;
                    for c in buf.iter_mut() {
                        *c = Complex64::new(0.0, 0.0);
                    }
                    for m in 0..n {
                        buf[m].re = x[base + m * stride];
                    }
                    self.fft.forward.process(buf);
                    for (c, s) in buf.iter_mut().zip(&term.spectrum) {
                        *c *= s;
                    }
                    self.fft.inverse.process(buf);
                    let scale = 1.0 / (2 * n) as f64;
                    (0..n).map(|m| buf[m].re * scale).collect()
                },
            )
            .collect();
        for (f, fibre) in fibres.into_iter().enumerate() {
            let (o, i) = (f / inner, f % inner);
            let base = o * n * stride + i;
            for (m, v) in fibre.into_iter().enumerate() {
                out[base + m * stride] = v;
            }
        }
        out
    }

    fn apply_grid(&self, x: &[f64]) -> Vec<f64> {
        let n = self.grid.n();
        let mut y = vec![0.0; x.len()];
        for term in &self.long {
            let t = self.apply_mode(term, 2, x);
            let t = self.apply_mode(term, 1, &t);
            let t = self.apply_mode(term, 0, &t);
            for (a, b) in y.iter_mut().zip(&t) {
                *a += term.weight * b;
            }
        }
        let g = self.gamma as isize;
        let ni = n as isize;
        y.par_chunks_mut(n).enumerate().for_each(|(row, out)| {
            let i0 = (row / n) as isize;
            let i1 = (row % n) as isize;
            for (i2, value) in out.iter_mut().enumerate() {
                let i2 = i2 as isize;
                let mut acc = 0.0;
                for a in -g..=g {
                    let j0 = i0 + a;
                    if j0 < 0 || j0 >= ni {
                        continue;
                    }
                    for b in -g..=g {
                        let j1 = i1 + b;
                        if j1 < 0 || j1 >= ni {
                            continue;
                        }
                        for c in -g..=g {
                            let j2 = i2 + c;
                            if j2 < 0 || j2 >= ni {
                                continue;
                            }
                            let s = self.stencil[self.stencil_offset([a, b, c])];
                            acc += s * x[((j0 * ni + j1) * ni + j2) as usize];
                        }
                    }
                }
                *value += acc;
            }
        });
        y
    }
}

/// `A x`. Full-grid operators take row-major `n^3` arrays; restricted
/// operators take one value per active point.
pub fn rs_matvec(op: &RSOperator, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != op.len() {
        return Err(Error::Shape(format!("vector of length {} for an operator of size {}", x.len(), op.len())));
    }
    let n = op.grid.n();
    match &op.active {
        None => Ok(op.apply_grid(x)),
        Some(points) => {
            let mut full = vec![0.0; n * n * n];
            let flat = |p: &[usize; 3]| (p[0] * n + p[1]) * n + p[2];
            for (p, v) in points.iter().zip(x) {
                full[flat(p)] = *v;
            }
            let y = op.apply_grid(&full);
            Ok(points.iter().map(|p| y[flat(p)]).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationProblem {
    pub samples: Vec<f64>,
    pub kernel: RadialKernel,
    pub tolerance: f64,
    pub max_iterations: usize,
}

/// `z = M^{-1} r`.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub coefficients: Vec<f64>,
    /// Relative residual norms, starting with the initial one.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn solve_interpolation(op: &RSOperator, prob: &InterpolationProblem) -> Result<CgOutcome> {
    solve_interpolation_with(op, prob, &IdentityPreconditioner)
}

/// Preconditioned conjugate gradients on `A c = f`.
pub fn solve_interpolation_with(
    op: &RSOperator,
    prob: &InterpolationProblem,
    precond: &dyn Preconditioner,
) -> Result<CgOutcome> {
    if prob.kernel != op.kernel {
        return Err(Error::Config("problem and operator use different kernels".into()));
    }
    if !matches!(op.kernel, RadialKernel::Gaussian { .. }) {
        return Err(Error::Capability(
            "interpolation is supported for the Gaussian kernel only; other kernels are not positive definite here".into(),
        ));
    }
    let f = &prob.samples;
    if f.len() != op.len() {
        return Err(Error::Shape(format!("{} samples for {} points", f.len(), op.len())));
    }
    let norm_f = dot(f, f).sqrt();
    let mut c = vec![0.0; f.len()];
    if norm_f == 0.0 {
        return Ok(CgOutcome { coefficients: c, residuals: vec![0.0], converged: true });
    }
    let mut r = f.clone();
    let mut z = vec![0.0; f.len()];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut residuals = vec![1.0];
    for _ in 0..prob.max_iterations {
        let ap = rs_matvec(op, &p)?;
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::Solver(format!(
                "non-positive curvature {curvature:.3e}: the {:?} kernel matrix is not positive definite on this point set",
                op.kernel
            )));
        }
        let alpha = rz / curvature;
        for i in 0..c.len() {
            c[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / norm_f;
        residuals.push(rel);
        if rel <= prob.tolerance {
            return Ok(CgOutcome { coefficients: c, residuals, converged: true });
        }
        precond.apply(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    log::warn!("CG stopped after {} iterations at relative residual {:.3e}", prob.max_iterations, residuals.last().unwrap());
    Ok(CgOutcome { coefficients: c, residuals, converged: false })
}

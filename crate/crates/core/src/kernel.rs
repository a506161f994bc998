//! Gaussian-sum expansions of radial kernels, their grid projection and the
//! short/long-range split.
//!
//! A kernel with Laplace–Gauss representation `p(r) = ∫_0^∞ a(t) e^{-t²r²} dt`
//! is discretised by the sinc rule on the substituted variable
//! `t = α sinh(u)`, `u_k = k h_M`, `h_M = C0 ln M / M`, folded onto `k = 0..=M`.
//! The scale `α = 4 / (a sinh(M h_M))` places the largest node where a Gaussian
//! of width `a` (the smallest resolved radius) has decayed.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::formats::{CanonicalTensor, TensorView};
use crate::particles::Grid3;
use crate::sum::compensated_sum;

const TWO_OVER_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;
const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Decay factor fixing the largest quadrature node relative to `1/a`.
pub const NODE_DECAY: f64 = 4.0;

/// Default sinc-step constant.
pub const DEFAULT_C0: f64 = 3.0;

/// Default relative accuracy when the expansion order is chosen from the grid.
pub const DEFAULT_EXPANSION_TOL: f64 = 1e-5;

/// Upper limit of the automatic order search.
pub const MAX_AUTO_ORDER: usize = 96;

/// Default splitting threshold.
pub const DEFAULT_DELTA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadialKernel {
    /// `1/r`
    Newton,
    /// `e^{-λr}/r`
    Yukawa { lambda: f64 },
    /// `e^{-λr}`
    Slater { lambda: f64 },
    /// `e^{-λr²}`
    Gaussian { lambda: f64 },
}

impl RadialKernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RadialKernel::Newton => Ok(()),
            RadialKernel::Yukawa { lambda } | RadialKernel::Slater { lambda } | RadialKernel::Gaussian { lambda } => {
                if lambda.is_finite() && lambda > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("kernel parameter must be positive, got {lambda}")))
                }
            }
        }
    }

    /// Exact kernel value at radius `r > 0`.
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            RadialKernel::Newton => 1.0 / r,
            RadialKernel::Yukawa { lambda } => (-lambda * r).exp() / r,
            RadialKernel::Slater { lambda } => (-lambda * r).exp(),
            RadialKernel::Gaussian { lambda } => (-lambda * r * r).exp(),
        }
    }

    /// Laplace–Gauss density `a(t)`; not defined for the Gaussian kernel.
    fn density(&self, t: f64) -> f64 {
        match *self {
            RadialKernel::Newton => TWO_OVER_SQRT_PI,
            RadialKernel::Yukawa { lambda } => {
                if t == 0.0 {
                    0.0
                } else {
                    TWO_OVER_SQRT_PI * (-lambda * lambda / (4.0 * t * t)).exp()
                }
            }
            RadialKernel::Slater { lambda } => {
                if t == 0.0 {
                    0.0
                } else {
                    lambda / SQRT_PI / (t * t) * (-lambda * lambda / (4.0 * t * t)).exp()
                }
            }
            RadialKernel::Gaussian { .. } => 0.0,
        }
    }

    pub fn code(&self) -> (u32, f64) {
        match *self {
            RadialKernel::Newton => (0, 0.0),
            RadialKernel::Yukawa { lambda } => (1, lambda),
            RadialKernel::Slater { lambda } => (2, lambda),
            RadialKernel::Gaussian { lambda } => (3, lambda),
        }
    }

    pub fn from_code(code: u32, lambda: f64) -> Result<Self> {
        let k = match code {
            0 => RadialKernel::Newton,
            1 => RadialKernel::Yukawa { lambda },
            2 => RadialKernel::Slater { lambda },
            3 => RadialKernel::Gaussian { lambda },
            other => return Err(Error::Format(format!("unknown kernel code {other}"))),
        };
        k.validate()?;
        Ok(k)
    }
}

impl std::str::FromStr for RadialKernel {
    type Err = Error;

    /// `newton`, `yukawa:<λ>`, `slater:<λ>` or `gaussian:<λ>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let lambda = || -> Result<f64> {
            param
                .ok_or_else(|| Error::Config(format!("kernel '{name}' needs a parameter, e.g. {name}:1.0")))?
                .parse()
                .map_err(|_| Error::Config(format!("bad kernel parameter in '{s}'")))
        };
        let k = match name {
            "newton" => RadialKernel::Newton,
            "yukawa" => RadialKernel::Yukawa { lambda: lambda()? },
            "slater" => RadialKernel::Slater { lambda: lambda()? },
            "gaussian" => RadialKernel::Gaussian { lambda: lambda()? },
            other => return Err(Error::Config(format!("unknown kernel '{other}'"))),
        };
        k.validate()?;
        Ok(k)
    }
}

/// Nodes and weights of a Gaussian-sum expansion `Σ_k a_k e^{-t_k² r²}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    kernel: RadialKernel,
    order: usize,
    c0: f64,
    min_radius: f64,
    step: f64,
    scale: f64,
    sinc_nodes: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn kernel(&self) -> RadialKernel {
        self.kernel
    }

    /// Sinc order `M`; zero for the single-term Gaussian rule.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn min_radius(&self) -> f64 {
        self.min_radius
    }

    /// Sinc step `h_M`.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Substitution scale `α`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Sinc abscissae `u_k` before substitution.
    pub fn sinc_nodes(&self) -> &[f64] {
        &self.sinc_nodes
    }

    /// Gaussian exponents `t_k`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of terms `R`.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Expansion value without the validity check; `r = 0` gives `Σ a_k`.
    pub fn value(&self, r: f64) -> f64 {
        compensated_sum(self.nodes.iter().zip(&self.weights).map(|(t, a)| a * (-(t * r) * (t * r)).exp()))
    }

    /// Sum of the terms in `range` at radius `r`.
    pub fn partial_value(&self, range: std::ops::Range<usize>, r: f64) -> f64 {
        compensated_sum(self.nodes[range.clone()].iter().zip(&self.weights[range]).map(|(t, a)| a * (-(t * r) * (t * r)).exp()))
    }
}

/// Sinc rule for `kernel` with `M + 1` folded terms, resolving radii down to
/// `min_radius`. The Gaussian kernel yields its exact single term.
pub fn build_quadrature(kernel: RadialKernel, order: usize, c0: f64, min_radius: f64) -> Result<QuadratureRule> {
    kernel.validate()?;
    if let RadialKernel::Gaussian { lambda } = kernel {
        return Ok(QuadratureRule {
            kernel,
            order: 0,
            c0,
            min_radius,
            step: 0.0,
            scale: 0.0,
            sinc_nodes: Vec::new(),
            nodes: vec![lambda.sqrt()],
            weights: vec![1.0],
        });
    }
    if order == 0 {
        return Err(Error::Domain("quadrature order M must be >= 1".into()));
    }
    if !(c0.is_finite() && c0 > 0.0) {
        return Err(Error::Domain(format!("C0 must be positive, got {c0}")));
    }
    if !(min_radius.is_finite() && min_radius > 0.0) {
        return Err(Error::Domain(format!("minimum radius must be positive, got {min_radius}")));
    }
    let step = c0 * (order.max(2) as f64).ln() / order as f64;
    let scale = NODE_DECAY / (min_radius * (order as f64 * step).sinh());
    let mut sinc_nodes = Vec::with_capacity(order + 1);
    let mut nodes = Vec::with_capacity(order + 1);
    let mut weights = Vec::with_capacity(order + 1);
    for k in 0..=order {
        let u = k as f64 * step;
        let t = scale * u.sinh();
        let mut a = kernel.density(t) * scale * u.cosh() * step;
        if k == 0 {
            a *= 0.5;
        }
        if a > 0.0 && a.is_finite() {
            sinc_nodes.push(u);
            nodes.push(t);
            weights.push(a);
        }
    }
    if nodes.is_empty() {
        return Err(Error::Numerical("all quadrature weights underflow".into()));
    }
    Ok(QuadratureRule { kernel, order, c0, min_radius, step, scale, sinc_nodes, nodes, weights })
}

/// Rule whose smallest resolved radius is one grid step.
pub fn grid_quadrature(kernel: RadialKernel, order: usize, c0: f64, grid: Grid3) -> Result<QuadratureRule> {
    build_quadrature(kernel, order, c0, grid.step())
}

/// `Σ_k a_k e^{-t_k² r²}` for `r > 0`.
pub fn eval_expansion(rule: &QuadratureRule, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("expansion is evaluated at r > 0, got {r}")));
    }
    Ok(rule.value(r))
}

/// Largest relative deviation of the rule from its kernel over `samples`
/// log-spaced radii in `[lo, hi]`.
pub fn max_relative_error(rule: &QuadratureRule, lo: f64, hi: f64, samples: usize) -> Result<f64> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::Domain(format!("radius range [{lo}, {hi}] must be positive and ordered")));
    }
    let samples = samples.max(2);
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..samples)
        .map(|i| {
            let r = (a + (b - a) * i as f64 / (samples - 1) as f64).exp();
            let exact = rule.kernel().value(r);
            ((rule.value(r) - exact) / exact).abs()
        })
        .fold(0.0, f64::max))
}

/// Smallest order `M <= max_order` whose rule (resolved down to `lo`) meets
/// `tol` relative accuracy on `[lo, hi]`.
pub fn order_for_range(kernel: RadialKernel, c0: f64, lo: f64, hi: f64, tol: f64, max_order: usize) -> Result<usize> {
    if let RadialKernel::Gaussian { .. } = kernel {
        return Ok(0);
    }
    for order in 1..=max_order {
        let rule = build_quadrature(kernel, order, c0, lo)?;
        if max_relative_error(&rule, lo, hi, 2000)? <= tol {
            return Ok(order);
        }
    }
    Err(Error::Numerical(format!("no order up to {max_order} reaches relative accuracy {tol:e} on [{lo}, {hi}]")))
}

/// Order for a grid rule: accurate to `tol` from one cell up to the box
/// diagonal, or up to the radius where the kernel falls below `tol` times its
/// value at one cell, whichever is smaller.
pub fn grid_order(kernel: RadialKernel, c0: f64, grid: Grid3, tol: f64) -> Result<usize> {
    kernel.validate()?;
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::Domain(format!("expansion tolerance must lie in (0, 1), got {tol}")));
    }
    let lo = grid.step();
    let diagonal = 2.0 * 3f64.sqrt() * grid.bbox().half_width();
    let floor = tol * kernel.value(lo);
    let hi = if kernel.value(diagonal) >= floor {
        diagonal
    } else {
        let (mut a, mut b) = (lo, diagonal);
        for _ in 0..60 {
            let mid = 0.5 * (a + b);
            if kernel.value(mid) >= floor {
                a = mid;
            } else {
                b = mid;
            }
        }
        a
    };
    order_for_range(kernel, c0, lo, hi, tol, MAX_AUTO_ORDER)
}

/// How grid entries of each Gaussian are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EntryRule {
    /// Cell average of the Gaussian, via erf differences.
    #[default]
    CellAverage,
    /// Gaussian at the cell centre.
    Collocation,
}

impl std::str::FromStr for EntryRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cell" | "erf" => Ok(EntryRule::CellAverage),
            "collocation" => Ok(EntryRule::Collocation),
            other => Err(Error::Config(format!("unknown entry rule '{other}'"))),
        }
    }
}

/// `∫_lo^hi e^{-t²x²} dx`, using erfc on one-signed cells to keep tails accurate.
fn gaussian_cell_integral(t: f64, lo: f64, hi: f64) -> f64 {
    if t == 0.0 {
        return hi - lo;
    }
    let c = SQRT_PI / (2.0 * t);
    if lo >= 0.0 {
        c * (libm::erfc(t * lo) - libm::erfc(t * hi))
    } else if hi <= 0.0 {
        c * (libm::erfc(-t * hi) - libm::erfc(-t * lo))
    } else {
        c * (libm::erf(t * hi) - libm::erf(t * lo))
    }
}

/// Raw grid vector of one Gaussian on `cells` cells of width `h`, cell `m`
/// spanning `[(m - cells/2) h, (m - cells/2 + 1) h]`. Values are cell averages
/// (or centre samples), so they carry kernel units.
pub fn gaussian_profile(t: f64, cells: usize, h: f64, rule: EntryRule) -> Vec<f64> {
    let half = (cells / 2) as i64;
    (0..cells as i64)
        .map(|m| {
            let lo = (m - half) as f64 * h;
            let hi = (m - half + 1) as f64 * h;
            match rule {
                EntryRule::CellAverage if t == 0.0 => 1.0,
                EntryRule::CellAverage => gaussian_cell_integral(t, lo, hi) / h,
                EntryRule::Collocation => {
                    let xc = (2 * (m - half) + 1) as f64 * h / 2.0;
                    (-(t * xc) * (t * xc)).exp()
                }
            }
        })
        .collect()
}

/// Grid projection of a quadrature rule, centred on the middle node.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceCanonical {
    tensor: CanonicalTensor,
    rule: QuadratureRule,
    grid: Grid3,
    doubled: bool,
    entry_rule: EntryRule,
    split: Option<usize>,
}

/// Projects `rule` onto `grid`, or onto the doubled `2n` grid over `[-2b, 2b]`.
pub fn project_kernel(rule: &QuadratureRule, grid: Grid3, doubled: bool, entry_rule: EntryRule) -> ReferenceCanonical {
    let cells = if doubled { 2 * grid.n() } else { grid.n() };
    let h = grid.step();
    let r = rule.len();
    let columns: Vec<(f64, Vec<f64>)> = {
        use rayon::prelude::*;
        rule.nodes()
            .par_iter()
            .map(|&t| {
                let mut v = gaussian_profile(t, cells, h, entry_rule);
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
                (norm, v)
            })
            .collect()
    };
    let mut side = DMatrix::zeros(cells, r);
    let mut weights = Vec::with_capacity(r);
    for (k, (norm, v)) in columns.iter().enumerate() {
        side.column_mut(k).copy_from_slice(v);
        weights.push(rule.weights()[k] * norm * norm * norm);
    }
    let tensor = CanonicalTensor::new(weights, [side.clone(), side.clone(), side]).expect("consistent shapes");
    ReferenceCanonical { tensor, rule: rule.clone(), grid, doubled, entry_rule, split: None }
}

impl ReferenceCanonical {
    /// Reassembles a reference from stored parts.
    pub fn from_parts(
        tensor: CanonicalTensor,
        rule: QuadratureRule,
        grid: Grid3,
        doubled: bool,
        entry_rule: EntryRule,
        split: Option<usize>,
    ) -> Result<Self> {
        let cells = if doubled { 2 * grid.n() } else { grid.n() };
        if tensor.dims() != [cells; 3] || tensor.rank() != rule.len() {
            return Err(Error::Shape("reference tensor does not match its grid or rule".into()));
        }
        Ok(Self { tensor, rule, grid, doubled, entry_rule, split })
    }

    pub fn tensor(&self) -> &CanonicalTensor {
        &self.tensor
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    /// The particle grid (not the doubled one).
    pub fn grid(&self) -> Grid3 {
        self.grid
    }

    pub fn is_doubled(&self) -> bool {
        self.doubled
    }

    pub fn entry_rule(&self) -> EntryRule {
        self.entry_rule
    }

    pub fn rank(&self) -> usize {
        self.tensor.rank()
    }

    /// Cells per axis of the stored tensor.
    pub fn cells(&self) -> usize {
        self.tensor.dims()[0]
    }

    /// Cell whose lower corner is the origin.
    pub fn center_cell(&self) -> usize {
        self.cells() / 2
    }

    pub fn split_index(&self) -> Option<usize> {
        self.split
    }

    pub fn with_split(mut self, long_terms: usize) -> Result<Self> {
        if long_terms > self.rank() {
            return Err(Error::Domain(format!("split index {long_terms} exceeds rank {}", self.rank())));
        }
        self.split = Some(long_terms);
        Ok(self)
    }

    /// Unit side vector of term `k` (identical in all modes).
    pub fn side(&self, k: usize) -> &[f64] {
        self.tensor.column(0, k)
    }

    /// Value of terms `range` at the cell touching the origin.
    pub fn center_value(&self, range: std::ops::Range<usize>) -> f64 {
        let c = self.center_cell();
        // same association and order as the windowed evaluation, so a lone
        // particle's self term cancels exactly
        range
            .map(|k| {
                let u = self.side(k)[c];
                self.tensor.weights()[k] * u * u * u
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitCriterion {
    /// `a_k e^{-t_k² σ²} ≤ δ`
    #[default]
    MaxNorm,
    /// `a_k ∫_σ^∞ e^{-t_k² x²} dx ≤ δ`
    L1Norm,
}

impl std::str::FromStr for SplitCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" | "max_norm" => Ok(SplitCriterion::MaxNorm),
            "l1" | "l1_norm" => Ok(SplitCriterion::L1Norm),
            other => Err(Error::Config(format!("unknown split criterion '{other}'"))),
        }
    }
}

/// Number of long-range terms: the index of the first term that is already
/// below `δ` at distance `σ`. Returns the full rank when no term qualifies.
pub fn split_rank(rule: &QuadratureRule, sigma: f64, delta: f64, criterion: SplitCriterion) -> Result<usize> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("split distance must be positive, got {sigma}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("split threshold must lie in (0, 1), got {delta}")));
    }
    let passes = |t: f64, a: f64| match criterion {
        SplitCriterion::MaxNorm => a * (-(t * sigma) * (t * sigma)).exp() <= delta,
        SplitCriterion::L1Norm => t > 0.0 && a * SQRT_PI * libm::erfc(t * sigma) / (2.0 * t) <= delta,
    };
    match rule.nodes().iter().zip(rule.weights()).position(|(&t, &a)| passes(t, a)) {
        Some(k) => Ok(k),
        None => {
            log::warn!("no quadrature term is below {delta} at distance {sigma}; treating all terms as long-range");
            Ok(rule.len())
        }
    }
}

/// `(short, long)` with long = terms `0..long_terms`, short = the rest.
pub fn split_tensor(reference: &ReferenceCanonical, long_terms: usize) -> Result<(CanonicalTensor, CanonicalTensor)> {
    let r = reference.rank();
    if long_terms > r {
        return Err(Error::Domain(format!("split index {long_terms} exceeds rank {r}")));
    }
    Ok((reference.tensor.select(long_terms..r), reference.tensor.select(0..long_terms)))
}

/// Smallest `γ` such that every term of a centred tensor is at most `δ` in
/// magnitude outside the cells `[c-γ, c+γ]^3`, `c = dims/2`.
pub fn effective_support(short: &CanonicalTensor, delta: f64) -> usize {
    if short.rank() == 0 {
        return 0;
    }
    let dims = short.dims();
    let centers = dims.map(|n| n / 2);
    let reach = (0..3).map(|l| centers[l].max(dims[l] - 1 - centers[l])).max().unwrap_or(0);
    let mut gamma = 0;
    for k in 0..short.rank() {
        let w = short.weights()[k].abs();
        // tails[l][g] = max |u| over offsets with |d| > g
        let mut maxes = [0.0f64; 3];
        let tails: [Vec<f64>; 3] = std::array::from_fn(|l| {
            let u = short.column(l, k);
            let c = centers[l];
            let mut tail = vec![0.0f64; reach + 2];
            for (i, x) in u.iter().enumerate() {
                let d = i.abs_diff(c);
                maxes[l] = maxes[l].max(x.abs());
                if d > 0 {
                    tail[d - 1] = tail[d - 1].max(x.abs());
                }
            }
            for g in (0..reach + 1).rev() {
                tail[g] = tail[g].max(tail[g + 1]);
            }
            tail
        });
        let outside = |g: usize| {
            (0..3)
                .map(|l| w * tails[l][g] * maxes[(l + 1) % 3] * maxes[(l + 2) % 3])
                .fold(0.0f64, f64::max)
        };
        while gamma < reach && outside(gamma) > delta {
            gamma += 1;
        }
    }
    gamma
}

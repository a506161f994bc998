//! Rank reduction: reduced HOSVD, canonical-to-Tucker ALS and
//! Tucker-to-canonical conversion.
//!
//! Side matrices are never formed explicitly. Each mode is reduced to a set
//! of distinct columns (identical columns merged exactly), compressed by a
//! streaming orthonormal basis `Q`, and represented by coefficients
//! `C = Q^T W`. All SVDs then act on `C`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DMatrixView};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats::{col, CanonicalTensor, TensorView, TuckerTensor, WindowedCanonical};

/// Relative tolerance of the side-matrix compression.
pub const COMPRESSION_TOL: f64 = 1e-13;

const BLOCK: usize = 64;

/// Where canonical weights go before the side-matrix SVD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightPlacement {
    /// `|ξ_k|` scales the first-mode columns; other modes stay unit.
    #[default]
    FirstMode,
    /// All modes use unit columns.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    Ranks([usize; 3]),
    Tolerance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionConfig {
    pub truncation: Truncation,
    /// ALS sweep cap.
    pub max_sweeps: usize,
    /// Relative core-norm improvement below which ALS stops.
    pub eps_c2t: f64,
    /// Truncation threshold of the Tucker-to-canonical step.
    pub eps_t2c: f64,
    pub placement: WeightPlacement,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            truncation: Truncation::Tolerance(1e-5),
            max_sweeps: 5,
            eps_c2t: 1e-5,
            eps_t2c: 1e-6,
            placement: WeightPlacement::FirstMode,
        }
    }
}

impl ReductionConfig {
    pub fn with_ranks(ranks: [usize; 3]) -> Self {
        Self { truncation: Truncation::Ranks(ranks), ..Self::default() }
    }

    pub fn with_tolerance(eps: f64) -> Self {
        Self { truncation: Truncation::Tolerance(eps), eps_c2t: eps, ..Self::default() }
    }
}

enum ColumnSource<'a> {
    Matrix(&'a DMatrix<f64>),
    /// (term, node) keys into shared profiles, with slice norms.
    Window { w: &'a WindowedCanonical, keys: Vec<(usize, usize)>, norms: Vec<f64> },
}

/// Side matrices of a canonical tensor, grouped into distinct columns.
pub struct SideSet<'a> {
    dims: [usize; 3],
    weights: Vec<f64>,
    groups: [Vec<u32>; 3],
    sources: [ColumnSource<'a>; 3],
}

impl<'a> SideSet<'a> {
    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn group_count(&self, mode: usize) -> usize {
        match &self.sources[mode] {
            ColumnSource::Matrix(m) => m.ncols(),
            ColumnSource::Window { keys, .. } => keys.len(),
        }
    }

    fn write_column(&self, mode: usize, g: usize, out: &mut [f64]) {
        match &self.sources[mode] {
            ColumnSource::Matrix(m) => out.copy_from_slice(col(m, g)),
            ColumnSource::Window { w, keys, norms } => {
                let (k, j) = keys[g];
                let s = w.slice(k, j);
                let inv = if norms[g] > 0.0 { 1.0 / norms[g] } else { 0.0 };
                for (o, x) in out.iter_mut().zip(s) {
                    *o = x * inv;
                }
            }
        }
    }
}

/// Anything whose canonical side matrices can be enumerated.
pub trait Reducible {
    fn side_set(&self) -> SideSet<'_>;
}

impl Reducible for CanonicalTensor {
    fn side_set(&self) -> SideSet<'_> {
        let r = self.rank();
        SideSet {
            dims: self.dims(),
            weights: self.weights().to_vec(),
            groups: std::array::from_fn(|_| (0..r as u32).collect()),
            sources: std::array::from_fn(|l| ColumnSource::Matrix(self.factor(l))),
        }
    }
}

impl Reducible for WindowedCanonical {
    fn side_set(&self) -> SideSet<'_> {
        let r = self.terms_per_particle();
        let mut weights = Vec::with_capacity(self.rank());
        let mut groups: [Vec<u32>; 3] = std::array::from_fn(|_| Vec::with_capacity(self.rank()));
        let mut keys: [Vec<(usize, usize)>; 3] = Default::default();
        let mut norms: [Vec<f64>; 3] = Default::default();
        let mut lookup: [HashMap<(usize, usize), u32>; 3] = Default::default();
        for (j, z) in self.nodes().iter().zip(self.charges()) {
            for k in 0..r {
                let mut w = z * self.profile_weights()[k];
                for l in 0..3 {
                    let key = (k, j[l]);
                    let id = *lookup[l].entry(key).or_insert_with(|| {
                        let s = self.slice(k, j[l]);
                        norms[l].push(s.iter().map(|x| x * x).sum::<f64>().sqrt());
                        keys[l].push(key);
                        (keys[l].len() - 1) as u32
                    });
                    w *= norms[l][id as usize];
                    groups[l].push(id);
                }
                weights.push(w);
            }
        }
        let mut keys = keys.into_iter();
        let mut norms = norms.into_iter();
        SideSet {
            dims: [self.n(); 3],
            weights,
            groups,
            sources: std::array::from_fn(|_| ColumnSource::Window {
                w: self,
                keys: keys.next().unwrap(),
                norms: norms.next().unwrap(),
            }),
        }
    }
}

/// Orthonormal basis `Q` (n x q) and coefficients `C = Q^T W` (q x G).
struct CompressedMode {
    basis: DMatrix<f64>,
    coeffs: DMatrix<f64>,
}

fn generate_block(set: &SideSet, mode: usize, start: usize, len: usize) -> DMatrix<f64> {
    let n = set.dims[mode];
    let mut w = DMatrix::zeros(n, len);
    for c in 0..len {
        let slice = &mut w.as_mut_slice()[c * n..(c + 1) * n];
        set.write_column(mode, start + c, slice);
    }
    w
}

fn compress_mode(set: &SideSet, mode: usize) -> CompressedMode {
    let n = set.dims[mode];
    let g_count = set.group_count(mode);
    let mut max_norm: f64 = 0.0;
    let mut buf = vec![0.0; n];
    for g in 0..g_count {
        set.write_column(mode, g, &mut buf);
        max_norm = max_norm.max(buf.iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    let tol = COMPRESSION_TOL * max_norm * (n as f64).sqrt();
    let mut q_data: Vec<f64> = Vec::new();
    let mut q = 0usize;
    let mut start = 0;
    while start < g_count && q < n {
        let len = BLOCK.min(g_count - start);
        let mut r = generate_block(set, mode, start, len);
        for _ in 0..2 {
            if q > 0 {
                let qm = DMatrixView::from_slice(&q_data, n, q);
                let c = qm.tr_mul(&r);
                r -= qm * c;
            }
        }
        let mut norms: Vec<f64> = (0..len).map(|c| r.column(c).norm()).collect();
        loop {
            let (p, &best) = norms
                .iter()
                .enumerate()
                .fold((0, &-1.0), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
            if best <= tol || q == n {
                break;
            }
            let mut v: Vec<f64> = r.column(p).iter().copied().collect();
            // one more orthogonalisation against everything accepted so far
            if q > 0 {
                let qm = DMatrixView::from_slice(&q_data, n, q);
                let vv = DMatrixView::from_slice(&v, n, 1);
                let c = qm.tr_mul(&vv);
                let corr = qm * c;
                for (x, y) in v.iter_mut().zip(corr.iter()) {
                    *x -= y;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= tol {
                norms[p] = 0.0;
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            for c in 0..len {
                if norms[c] <= 0.0 {
                    continue;
                }
                let mut column = r.column_mut(c);
                let d: f64 = column.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (x, y) in column.iter_mut().zip(&v) {
                    *x -= d * y;
                }
                norms[c] = column.norm();
            }
            norms[p] = 0.0;
            q_data.extend_from_slice(&v);
            q += 1;
        }
        start += len;
    }
    let basis = DMatrix::from_column_slice(n, q, &q_data);
    let mut coeffs = DMatrix::zeros(q, g_count);
    let mut start = 0;
    while start < g_count {
        let len = BLOCK.min(g_count - start);
        let w = generate_block(set, mode, start, len);
        coeffs.columns_mut(start, len).copy_from(&basis.tr_mul(&w));
        start += len;
    }
    CompressedMode { basis, coeffs }
}

struct Compressed<'a> {
    set: SideSet<'a>,
    modes: [CompressedMode; 3],
}

fn compress(set: SideSet<'_>) -> Compressed<'_> {
    let ((m0, m1), m2) = rayon::join(
        || rayon::join(|| compress_mode(&set, 0), || compress_mode(&set, 1)),
        || compress_mode(&set, 2),
    );
    Compressed { set, modes: [m0, m1, m2] }
}

/// Singular values (non-increasing) and left vectors of one side matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSpectrum {
    pub sigma: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvdSpectrum {
    pub modes: [ModeSpectrum; 3],
}

impl SvdSpectrum {
    /// `mode,k,sigma` rows, 1-based mode and index.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,k,sigma\n");
        for (l, m) in self.modes.iter().enumerate() {
            for (k, s) in m.sigma.iter().enumerate() {
                out.push_str(&format!("{},{},{:.16e}\n", l + 1, k + 1, s));
            }
        }
        out
    }
}

/// Thin SVD returning sorted singular values and sign-fixed left vectors.
fn left_svd(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok((Vec::new(), DMatrix::zeros(m.nrows(), 0)));
    }
    let svd = nalgebra::linalg::SVD::try_new(m.clone(), true, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD returned no left vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut vectors = DMatrix::zeros(m.nrows(), order.len());
    for (c, &i) in order.iter().enumerate() {
        vectors.column_mut(c).copy_from(&u.column(i));
    }
    fix_signs(&mut vectors);
    Ok((sigma, vectors))
}

/// Makes the largest-magnitude entry of each column positive.
fn fix_signs(m: &mut DMatrix<f64>) {
    for c in 0..m.ncols() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for x in m.column(c).iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            m.column_mut(c).neg_mut();
        }
    }
}

fn group_scales(set: &SideSet, mode: usize, placement: WeightPlacement) -> Vec<f64> {
    let mut sq = vec![0.0; set.group_count(mode)];
    for (k, &g) in set.groups[mode].iter().enumerate() {
        let s = match (placement, mode) {
            (WeightPlacement::FirstMode, 0) => set.weights[k] * set.weights[k],
            _ => 1.0,
        };
        sq[g as usize] += s;
    }
    sq.into_iter().map(f64::sqrt).collect()
}

fn spectrum_of(comp: &Compressed, placement: WeightPlacement) -> Result<SvdSpectrum> {
    let modes: Vec<Result<ModeSpectrum>> = (0..3)
        .into_par_iter()
        .map(|l| {
            let scales = group_scales(&comp.set, l, placement);
            let mut c = comp.modes[l].coeffs.clone();
            for (g, s) in scales.iter().enumerate() {
                c.column_mut(g).scale_mut(*s);
            }
            let (sigma, y) = left_svd(&c)?;
            let mut vectors = &comp.modes[l].basis * y;
            fix_signs(&mut vectors);
            Ok(ModeSpectrum { sigma, vectors })
        })
        .collect();
    let mut it = modes.into_iter();
    Ok(SvdSpectrum { modes: [it.next().unwrap()?, it.next().unwrap()?, it.next().unwrap()?] })
}

/// Mode-wise singular values and left vectors of the side matrices.
pub fn side_svd<T: Reducible + ?Sized>(c: &T, placement: WeightPlacement) -> Result<SvdSpectrum> {
    let comp = compress(c.side_set());
    if comp.set.rank() == 0 {
        return Err(Error::Domain("side SVD of a rank-0 tensor".into()));
    }
    spectrum_of(&comp, placement)
}

/// Smallest rank whose discarded tail has relative Frobenius weight `<= eps`.
pub fn tolerance_rank(sigma: &[f64], eps: f64) -> usize {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 1.min(sigma.len());
    }
    let limit = eps * eps * total;
    let mut tail = 0.0;
    let mut r = sigma.len();
    while r > 1 {
        let next = tail + sigma[r - 1] * sigma[r - 1];
        if next > limit {
            break;
        }
        tail = next;
        r -= 1;
    }
    r
}

/// `Σ_l sqrt(Σ_{k > r_l} σ_{l,k}²)`.
pub fn rhosvd_error_bound(spectrum: &SvdSpectrum, ranks: [usize; 3]) -> f64 {
    (0..3)
        .map(|l| {
            let s = &spectrum.modes[l].sigma;
            s.iter().skip(ranks[l]).map(|x| x * x).sum::<f64>().sqrt()
        })
        .sum()
}

/// Extends orthonormal columns to `target` columns with unit-vector fill-ins.
fn complete_basis(z: &DMatrix<f64>, target: usize) -> DMatrix<f64> {
    let n = z.nrows();
    let mut cols: Vec<Vec<f64>> = (0..z.ncols().min(target)).map(|c| z.column(c).iter().copied().collect()).collect();
    let mut i = 0;
    while cols.len() < target && i < n {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        for _ in 0..2 {
            for q in &cols {
                let d: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(q) {
                    *x -= d * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.5 {
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
        i += 1;
    }
    let flat: Vec<f64> = cols.concat();
    DMatrix::from_column_slice(n, cols.len(), &flat)
}

/// Projected groups `Z^T W` (r x G).
fn project(comp: &Compressed, mode: usize, z: &DMatrix<f64>) -> DMatrix<f64> {
    let m = &comp.modes[mode];
    (z.tr_mul(&m.basis)) * &m.coeffs
}

/// `K[g, (a,b)] = Σ_{k in g} ξ_k P_a[a,k] P_b[b,k]` over the groups of `mode`,
/// with `(a, b)` the other two modes in increasing order.
fn grouped_kernel(comp: &Compressed, mode: usize, proj: &[DMatrix<f64>; 3]) -> DMatrix<f64> {
    let (ma, mb) = match mode {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let (ra, rb) = (proj[ma].nrows(), proj[mb].nrows());
    let groups = &comp.set.groups;
    let mut k_mat = DMatrix::zeros(comp.set.group_count(mode), ra * rb);
    for k in 0..comp.set.rank() {
        let g = groups[mode][k] as usize;
        let pa = proj[ma].column(groups[ma][k] as usize);
        let pb = proj[mb].column(groups[mb][k] as usize);
        let w = comp.set.weights[k];
        for a in 0..ra {
            let wa = w * pa[a];
            if wa == 0.0 {
                continue;
            }
            for b in 0..rb {
                k_mat[(g, a * rb + b)] += wa * pb[b];
            }
        }
    }
    k_mat
}

/// Unfolding along `mode` of the tensor projected on the other two modes,
/// in compressed coordinates.
fn partial_unfolding(comp: &Compressed, mode: usize, proj: &[DMatrix<f64>; 3]) -> DMatrix<f64> {
    &comp.modes[mode].coeffs * grouped_kernel(comp, mode, proj)
}

/// Core `Σ_k ξ_k P1[:,k] ⊗ P2[:,k] ⊗ P3[:,k]`, row-major.
fn project_core(comp: &Compressed, proj: &[DMatrix<f64>; 3]) -> Vec<f64> {
    let core = &proj[0] * grouped_kernel(comp, 0, proj);
    let (r1, r23) = core.shape();
    let mut out = vec![0.0; r1 * r23];
    for a in 0..r1 {
        for bc in 0..r23 {
            out[a * r23 + bc] = core[(a, bc)];
        }
    }
    out
}

fn select_ranks(spectrum: &SvdSpectrum, cfg: &ReductionConfig, dims: [usize; 3], rank: usize) -> Result<[usize; 3]> {
    match cfg.truncation {
        Truncation::Ranks(r) => {
            for l in 0..3 {
                let cap = dims[l].min(rank);
                if r[l] > cap || r[l] == 0 {
                    return Err(Error::Domain(format!("mode {l} rank {} outside 1..={cap}", r[l])));
                }
            }
            Ok(r)
        }
        Truncation::Tolerance(eps) => Ok(std::array::from_fn(|l| tolerance_rank(&spectrum.modes[l].sigma, eps).max(1))),
    }
}

fn rhosvd_from(comp: &Compressed, cfg: &ReductionConfig) -> Result<(SvdSpectrum, [DMatrix<f64>; 3])> {
    if comp.set.rank() == 0 {
        return Err(Error::Domain("rank reduction of a rank-0 tensor".into()));
    }
    let spectrum = spectrum_of(comp, cfg.placement)?;
    let ranks = select_ranks(&spectrum, cfg, comp.set.dims, comp.set.rank())?;
    let z = std::array::from_fn(|l| {
        let v = &spectrum.modes[l].vectors;
        if ranks[l] <= v.ncols() {
            v.columns(0, ranks[l]).into_owned()
        } else {
            complete_basis(v, ranks[l])
        }
    });
    Ok((spectrum, z))
}

fn tucker_from(comp: &Compressed, z: [DMatrix<f64>; 3]) -> Result<TuckerTensor> {
    let proj: [DMatrix<f64>; 3] = std::array::from_fn(|l| project(comp, l, &z[l]));
    let core = project_core(comp, &proj);
    TuckerTensor::new(core, z)
}

/// Reduced HOSVD: factors from the side-matrix SVDs, core by projection.
pub fn rhosvd<T: Reducible + ?Sized>(c: &T, cfg: &ReductionConfig) -> Result<TuckerTensor> {
    let comp = compress(c.side_set());
    let (_, z) = rhosvd_from(&comp, cfg)?;
    tucker_from(&comp, z)
}

/// Result of the canonical-to-Tucker reduction.
#[derive(Debug, Clone)]
pub struct C2tOutcome {
    pub tucker: TuckerTensor,
    pub spectrum: SvdSpectrum,
    pub sweeps: usize,
    /// Core norm after RHOSVD, then after each sweep.
    pub core_norms: Vec<f64>,
    /// Norm of the input projected on modes 1 and 2 only.
    pub partial_norm: f64,
}

impl C2tOutcome {
    /// Relative loss of the last mode-3 truncation, `sqrt(1 - ||β||²/||U x1 Z1 x2 Z2||²)`.
    pub fn residual_estimate(&self) -> f64 {
        let core = *self.core_norms.last().unwrap_or(&0.0);
        if self.partial_norm == 0.0 {
            return 0.0;
        }
        (1.0 - (core / self.partial_norm).powi(2)).max(0.0).sqrt()
    }
}

/// Canonical-to-Tucker reduction: RHOSVD start, then ALS sweeps over modes
/// 1, 2, 3 until the core norm stops growing by more than `eps_c2t`.
pub fn c2t_als<T: Reducible + ?Sized>(c: &T, cfg: &ReductionConfig) -> Result<C2tOutcome> {
    let comp = compress(c.side_set());
    let (spectrum, mut z) = rhosvd_from(&comp, cfg)?;
    let mut proj: [DMatrix<f64>; 3] = std::array::from_fn(|l| project(&comp, l, &z[l]));
    let norm_of = |proj: &[DMatrix<f64>; 3]| project_core(&comp, proj).iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut core_norms = vec![norm_of(&proj)];
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        for l in 0..3 {
            let unfolding = partial_unfolding(&comp, l, &proj);
            let (sigma, y) = left_svd(&unfolding)?;
            let r = match cfg.truncation {
                Truncation::Ranks(r) => r[l],
                Truncation::Tolerance(eps) => tolerance_rank(&sigma, eps).max(1).min(comp.set.dims[l]),
            };
            let mut zl = &comp.modes[l].basis * y.columns(0, r.min(y.ncols()));
            if zl.ncols() < r {
                zl = complete_basis(&zl, r);
            }
            fix_signs(&mut zl);
            proj[l] = project(&comp, l, &zl);
            z[l] = zl;
        }
        sweeps += 1;
        let norm = norm_of(&proj);
        let prev = *core_norms.last().unwrap();
        core_norms.push(norm);
        if norm == 0.0 || (norm - prev).abs() <= cfg.eps_c2t * norm {
            break;
        }
    }
    let partial_norm = partial_unfolding(&comp, 2, &proj).norm();
    let core = project_core(&comp, &proj);
    let tucker = TuckerTensor::new(core, z)?;
    Ok(C2tOutcome { tucker, spectrum, sweeps, core_norms, partial_norm })
}

/// Canonical form of a Tucker tensor via SVDs of the core: the mode-1
/// unfolding first, then each right factor reshaped to `r2 x r3`. Terms are
/// dropped smallest-first while the discarded Frobenius weight stays within
/// `eps * ||T||`.
pub fn tucker_to_canonical(t: &TuckerTensor, eps: f64) -> Result<CanonicalTensor> {
    let [r1, r2, r3] = t.ranks();
    let unfolding = DMatrix::from_row_slice(r1, r2 * r3, t.core());
    let svd = nalgebra::linalg::SVD::try_new(unfolding, true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("core SVD did not converge".into()))?;
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    struct Term {
        weight: f64,
        x: Vec<f64>,
        v: Vec<f64>,
        w: Vec<f64>,
    }
    let mut terms: Vec<Term> = Vec::new();
    for i in 0..svd.singular_values.len() {
        let s = svd.singular_values[i];
        if s == 0.0 {
            continue;
        }
        let y = DMatrix::from_row_slice(r2, r3, vt.row(i).transpose().as_slice());
        let inner = nalgebra::linalg::SVD::try_new(y, true, true, f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerical("core SVD did not converge".into()))?;
        let (iu, ivt) = (inner.u.unwrap(), inner.v_t.unwrap());
        for j in 0..inner.singular_values.len() {
            let tau = inner.singular_values[j];
            if tau == 0.0 {
                continue;
            }
            terms.push(Term {
                weight: s * tau,
                x: u.column(i).iter().copied().collect(),
                v: iu.column(j).iter().copied().collect(),
                w: ivt.row(j).iter().copied().collect(),
            });
        }
    }
    let limit = (eps * t.norm()).powi(2);
    let mut order: Vec<usize> = (0..terms.len()).collect();
    order.sort_by(|&a, &b| terms[a].weight.total_cmp(&terms[b].weight));
    let mut dropped = vec![false; terms.len()];
    let mut tail = 0.0;
    for &i in &order {
        let next = tail + terms[i].weight * terms[i].weight;
        if next > limit {
            break;
        }
        tail = next;
        dropped[i] = true;
    }
    let kept: Vec<&Term> = terms.iter().zip(&dropped).filter(|(_, d)| !**d).map(|(t, _)| t).collect();
    let dims = t.dims();
    let mut factors: [DMatrix<f64>; 3] = std::array::from_fn(|l| DMatrix::zeros(dims[l], kept.len()));
    let mut weights = Vec::with_capacity(kept.len());
    for (k, term) in kept.iter().enumerate() {
        for (l, small) in [&term.x, &term.v, &term.w].into_iter().enumerate() {
            let s = DMatrixView::from_slice(small, small.len(), 1);
            factors[l].column_mut(k).copy_from(&(t.factor(l) * s).column(0));
        }
        weights.push(term.weight);
    }
    CanonicalTensor::new(weights, factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::testing::{random_canonical, random_orthonormal, random_tucker};
    use crate::formats::Dense3;

    fn unfold(d: &Dense3, mode: usize) -> DMatrix<f64> {
        let dims = d.dims();
        let (a, b) = match mode {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut m = DMatrix::zeros(dims[mode], dims[a] * dims[b]);
        for i in Dense3::indices(dims) {
            m[(i[mode], i[a] * dims[b] + i[b])] = d.get(i);
        }
        m
    }

    fn weighted_side(c: &CanonicalTensor, mode: usize) -> DMatrix<f64> {
        let mut m = c.factor(mode).clone();
        if mode == 0 {
            for k in 0..c.rank() {
                m.column_mut(k).scale_mut(c.weights()[k].abs());
            }
        }
        m
    }

    #[test]
    fn rank_one_has_one_singular_value() {
        let c = random_canonical([6, 7, 8], 1, 3);
        let s = side_svd(&c, WeightPlacement::FirstMode).unwrap();
        for l in 0..3 {
            assert_eq!(s.modes[l].sigma.len(), 1);
        }
        assert!((s.modes[0].sigma[0] - c.weights()[0].abs()).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_columns_give_their_norms() {
        let q = random_orthonormal(10, 3, 1);
        let c = CanonicalTensor::new(vec![3.0, 2.0, 1.0], [q.clone(), q.clone(), q]).unwrap();
        let s = side_svd(&c, WeightPlacement::FirstMode).unwrap();
        for (a, b) in s.modes[0].sigma.iter().zip([3.0, 2.0, 1.0]) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn spectrum_matches_dense_side_and_unfolding_subspace() {
        let c = random_canonical([64, 64, 64], 40, 5);
        let s = side_svd(&c, WeightPlacement::FirstMode).unwrap();
        let dense = c.to_dense().unwrap();
        for l in 0..3 {
            let side = weighted_side(&c, l);
            let mut oracle: Vec<f64> = side.svd(false, false).singular_values.iter().copied().collect();
            oracle.sort_by(|a, b| b.total_cmp(a));
            let mine = &s.modes[l].sigma;
            for k in 0..oracle.len() {
                let m = mine.get(k).copied().unwrap_or(0.0);
                assert!((m - oracle[k]).abs() < 1e-10, "mode {l} σ_{k}: {m} vs {}", oracle[k]);
            }
            // range of the side matrix equals the range of the unfolding
            let unf = unfold(&dense, l).svd(true, false);
            let mut idx: Vec<usize> = (0..unf.singular_values.len()).collect();
            idx.sort_by(|&a, &b| unf.singular_values[b].total_cmp(&unf.singular_values[a]));
            let u = unf.u.unwrap();
            let ud = DMatrix::from_fn(64, 40, |i, j| u[(i, idx[j])]);
            let zs = s.modes[l].vectors.columns(0, 40).into_owned();
            let p1 = &ud * ud.transpose();
            let p2 = &zs * zs.transpose();
            assert!((p1 - p2).amax() < 1e-10);
        }
    }

    #[test]
    fn sign_convention() {
        let c = random_canonical([12, 12, 12], 5, 8);
        let s = side_svd(&c, WeightPlacement::FirstMode).unwrap();
        for l in 0..3 {
            let v = &s.modes[l].vectors;
            for k in 0..v.ncols() {
                let col = v.column(k);
                let imax = col.iamax();
                assert!(col[imax] > 0.0);
            }
        }
    }

    #[test]
    fn duplicate_columns_merge_exactly() {
        let base = random_canonical([9, 9, 9], 3, 2);
        let doubled = CanonicalTensor::concat(&[&base, &base]).unwrap();
        let a = side_svd(&base, WeightPlacement::Unit).unwrap();
        let b = side_svd(&doubled, WeightPlacement::Unit).unwrap();
        for l in 0..3 {
            for (x, y) in a.modes[l].sigma.iter().zip(&b.modes[l].sigma) {
                assert!((x * 2f64.sqrt() - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn orthogonal_input_reproduced_exactly() {
        let q: [DMatrix<f64>; 3] = std::array::from_fn(|l| random_orthonormal(12, 3, l as u64 + 4));
        let c = CanonicalTensor::new(vec![3.0, 2.0, 0.5], q).unwrap();
        let t = rhosvd(&c, &ReductionConfig::with_ranks([3, 3, 3])).unwrap();
        assert!(t.to_dense().unwrap().max_abs_diff(&c.to_dense().unwrap()) < 1e-13);
    }

    #[test]
    fn rank_one_truncation_matches_dense_hosvd() {
        let c = random_canonical([16, 16, 16], 3, 21);
        let t = rhosvd(&c, &ReductionConfig::with_ranks([1, 1, 1])).unwrap();
        // dense oracle: leading left vector of each weighted side matrix
        for l in 0..3 {
            let side = weighted_side(&c, l);
            let svd = side.svd(true, false);
            let i = svd.singular_values.imax();
            let u = svd.u.unwrap().column(i).into_owned();
            let z = t.factor(l).column(0);
            assert!((u.dot(&z).abs() - 1.0).abs() < 1e-12);
        }
        let dense = c.to_dense().unwrap();
        let z: [DMatrix<f64>; 3] = std::array::from_fn(|l| t.factor(l).clone());
        let mut proj = 0.0;
        for i in Dense3::indices(dense.dims()) {
            proj += dense.get(i) * z[0][(i[0], 0)] * z[1][(i[1], 0)] * z[2][(i[2], 0)];
        }
        assert!((proj - t.core()[0]).abs() < 1e-12);
    }

    #[test]
    fn rank_request_too_large() {
        let c = random_canonical([8, 8, 8], 3, 1);
        assert!(rhosvd(&c, &ReductionConfig::with_ranks([4, 1, 1])).is_err());
    }

    #[test]
    fn rank_request_beyond_numerical_rank() {
        let v = vec![1.0; 6];
        let c = CanonicalTensor::from_terms([6; 3], &[(1.0, [&v, &v, &v]), (2.0, [&v, &v, &v])]).unwrap();
        let t = rhosvd(&c, &ReductionConfig::with_ranks([2, 2, 2])).unwrap();
        assert!(t.to_dense().unwrap().max_abs_diff(&c.to_dense().unwrap()) < 1e-12);
    }

    #[test]
    fn error_bound_edge_cases() {
        let c = random_canonical([8, 8, 8], 1, 1);
        let s = side_svd(&c, WeightPlacement::Unit).unwrap();
        assert_eq!(rhosvd_error_bound(&s, [1, 1, 1]), 0.0);
        let sum: f64 = (0..3).map(|l| s.modes[l].sigma[0]).sum();
        assert!((rhosvd_error_bound(&s, [0, 0, 0]) - sum).abs() < 1e-14);
    }

    fn fit(c: &CanonicalTensor, t: &TuckerTensor) -> f64 {
        let d = c.to_dense().unwrap();
        let e = t.to_dense().unwrap();
        let err: f64 = d.data().iter().zip(e.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        1.0 - err.sqrt() / d.norm()
    }

    #[test]
    fn als_improves_on_rhosvd() {
        let c = random_canonical([32, 32, 32], 60, 9);
        let mut cfg = ReductionConfig::with_ranks([8, 8, 8]);
        let start = rhosvd(&c, &cfg).unwrap();
        let mut prev = fit(&c, &start);
        for sweeps in 1..4 {
            cfg.max_sweeps = sweeps;
            cfg.eps_c2t = 0.0;
            let out = c2t_als(&c, &cfg).unwrap();
            let f = fit(&c, &out.tucker);
            assert!(f >= prev - 1e-12, "sweep {sweeps}: {f} < {prev}");
            prev = f;
            assert!(out.core_norms.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12)));
        }
    }

    #[test]
    fn als_on_tucker_optimal_input_stops_after_one_sweep() {
        let q: [DMatrix<f64>; 3] = std::array::from_fn(|l| random_orthonormal(10, 2, l as u64));
        let c = CanonicalTensor::new(vec![4.0, 1.0], q).unwrap();
        let out = c2t_als(&c, &ReductionConfig::with_ranks([2, 2, 2])).unwrap();
        assert_eq!(out.sweeps, 1);
        assert!((out.core_norms[0] - out.core_norms[1]).abs() < 1e-12);
    }

    #[test]
    fn t2c_of_diagonal_core() {
        let q: [DMatrix<f64>; 3] = std::array::from_fn(|l| random_orthonormal(7, 3, l as u64));
        let mut core = vec![0.0; 27];
        core[0] = 2.0;
        core[26] = -1.5;
        let t = TuckerTensor::new(core, q).unwrap();
        let c = tucker_to_canonical(&t, 1e-12).unwrap();
        assert_eq!(c.rank(), 2);
        assert!(c.to_dense().unwrap().max_abs_diff(&t.to_dense().unwrap()) < 1e-13);
    }

    #[test]
    fn t2c_random_small_core() {
        let t = random_tucker([9, 10, 11], [2, 2, 2], 6);
        let c = tucker_to_canonical(&t, 0.0).unwrap();
        assert!(c.rank() <= 4);
        assert!(c.to_dense().unwrap().max_abs_diff(&t.to_dense().unwrap()) < 1e-12);
        let t2 = random_tucker([9, 10, 11], [4, 3, 5], 7);
        let eps = 1e-2;
        let c2 = tucker_to_canonical(&t2, eps).unwrap();
        assert!(c2.rank() <= 12);
        let d = t2.to_dense().unwrap();
        let e = c2.to_dense().unwrap();
        let diff: f64 = d.data().iter().zip(e.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!(diff <= eps * t2.norm() * (1.0 + 1e-12));
    }

    #[test]
    fn windowed_and_explicit_sides_agree() {
        let n = 16;
        let mut p = DMatrix::zeros(2 * n, 2);
        for m in 0..2 * n {
            let x = m as f64 - n as f64 + 0.5;
            p[(m, 0)] = (-0.01 * x * x).exp();
            p[(m, 1)] = (-0.2 * x * x).exp();
        }
        for k in 0..2 {
            let norm = p.column(k).norm();
            p.column_mut(k).unscale_mut(norm);
        }
        let w = WindowedCanonical::new(n, p, vec![2.0, 1.0], vec![[4, 4, 5], [4, 9, 5], [12, 9, 3]], vec![1.0, -1.0, 0.5])
            .unwrap();
        let c = w.to_canonical();
        let a = side_svd(&w, WeightPlacement::FirstMode).unwrap();
        let b = side_svd(&c, WeightPlacement::FirstMode).unwrap();
        for l in 0..3 {
            for (x, y) in a.modes[l].sigma.iter().zip(&b.modes[l].sigma) {
                assert!((x - y).abs() < 1e-12 * b.modes[l].sigma[0]);
            }
        }
        let ta = c2t_als(&w, &ReductionConfig::with_ranks([4, 4, 4])).unwrap().tucker;
        let tb = c2t_als(&c, &ReductionConfig::with_ranks([4, 4, 4])).unwrap().tucker;
        assert!(ta.to_dense().unwrap().max_abs_diff(&tb.to_dense().unwrap()) < 1e-12);
    }
}

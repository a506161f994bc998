//! Assembly of the N-particle potential in range-separated form.
//!
//! Every particle sits on a grid node `j`. Its potential on the `n`-grid is
//! the window `[n - j, 2n - j)` of the doubled reference, so the long part is
//! a list of slices and the short part is one small tensor copied to every
//! node.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::formats::{
    storage_report, CanonicalTensor, Cct, LongPart, OverlapPolicy, RsMeta, RsTensor, StorageReport,
    WindowedCanonical, DEFAULT_OVERLAP_CAP,
};
use crate::kernel::{
    effective_support, grid_order, grid_quadrature, project_kernel, split_rank, EntryRule, RadialKernel, ReferenceCanonical,
    SplitCriterion, DEFAULT_C0, DEFAULT_DELTA, DEFAULT_EXPANSION_TOL,
};
use crate::particles::{separation_distance, snap_to_grid, Grid3, IndexedParticleSystem, ParticleSystem};
use crate::rankred::{c2t_als, tucker_to_canonical, ReductionConfig};

/// Explicit long-part rank above which reduction is always applied.
pub const DEFAULT_REDUCTION_THRESHOLD: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LongFormat {
    #[default]
    Tucker,
    Canonical,
}

impl std::str::FromStr for LongFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tucker" => Ok(LongFormat::Tucker),
            "canonical" => Ok(LongFormat::Canonical),
            other => Err(Error::Config(format!("unknown long format '{other}' (tucker|canonical)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyConfig {
    pub grid: Grid3,
    pub kernel: RadialKernel,
    /// Expansion order `M`; chosen by `grid_order` with `expansion_tol` when unset.
    pub order: Option<usize>,
    pub expansion_tol: f64,
    pub c0: f64,
    pub entry_rule: EntryRule,
    /// Split distance; the separation distance of the system when unset.
    pub sigma: Option<f64>,
    pub delta: f64,
    pub criterion: SplitCriterion,
    /// Fixed number of long-range terms, bypassing `split_rank`.
    pub long_terms: Option<usize>,
    /// Fixed short-part window radius in cells.
    pub gamma: Option<usize>,
    pub overlap: OverlapPolicy,
    /// Fall back to the soft policy when strict windows overlap.
    pub allow_soft: bool,
    pub reduction: ReductionConfig,
    pub long_format: LongFormat,
    /// Reduce even below the threshold.
    pub reduce: bool,
    pub reduction_threshold: usize,
}

impl AssemblyConfig {
    pub fn new(grid: Grid3) -> Self {
        Self {
            grid,
            kernel: RadialKernel::Newton,
            order: None,
            expansion_tol: DEFAULT_EXPANSION_TOL,
            c0: DEFAULT_C0,
            entry_rule: EntryRule::default(),
            sigma: None,
            delta: DEFAULT_DELTA,
            criterion: SplitCriterion::default(),
            long_terms: None,
            gamma: None,
            overlap: OverlapPolicy::Strict,
            allow_soft: true,
            reduction: ReductionConfig::default(),
            long_format: LongFormat::default(),
            reduce: true,
            reduction_threshold: DEFAULT_REDUCTION_THRESHOLD,
        }
    }
}

/// Slices of term `k` seen from node `j`, one per mode.
pub fn window_slice(ref2n: &ReferenceCanonical, j: [usize; 3], k: usize) -> [&[f64]; 3] {
    assert!(ref2n.is_doubled(), "window slicing needs the doubled reference");
    let n = ref2n.grid().n();
    assert!(j.iter().all(|&x| x <= n), "node {j:?} outside the grid");
    let side = ref2n.side(k);
    j.map(|x| &side[n - x..2 * n - x])
}

fn check_doubled(ref2n: &ReferenceCanonical, sys: &IndexedParticleSystem) -> Result<()> {
    if !ref2n.is_doubled() {
        return Err(Error::Shape("assembly needs the reference on the doubled grid".into()));
    }
    if ref2n.grid() != sys.grid() {
        return Err(Error::Shape("reference and particles live on different grids".into()));
    }
    Ok(())
}

/// `Σ_ν z_ν W_ν(P_long)` in implicit form, terms ν-major, k-minor.
pub fn assemble_long(
    ref2n: &ReferenceCanonical,
    sys: &IndexedParticleSystem,
    long_terms: usize,
) -> Result<WindowedCanonical> {
    check_doubled(ref2n, sys)?;
    if long_terms > ref2n.rank() {
        return Err(Error::Domain(format!("{long_terms} long terms requested, rank is {}", ref2n.rank())));
    }
    let cells = ref2n.cells();
    let mut profiles = DMatrix::zeros(cells, long_terms);
    for k in 0..long_terms {
        profiles.column_mut(k).copy_from_slice(ref2n.side(k));
    }
    let weights = ref2n.tensor().weights()[..long_terms].to_vec();
    WindowedCanonical::new(sys.grid().n(), profiles, weights, sys.nodes().to_vec(), sys.charges().to_vec())
}

/// Short-range terms restricted to the `(2γ+1)^3` window around the node.
pub fn short_local(ref2n: &ReferenceCanonical, long_terms: usize, gamma: usize) -> Result<CanonicalTensor> {
    let n = ref2n.grid().n();
    if gamma >= n {
        return Err(Error::Domain(format!("window radius {gamma} must be below n = {n}")));
    }
    let r = ref2n.rank();
    let width = 2 * gamma + 1;
    let mut side = DMatrix::zeros(width, r - long_terms);
    for k in long_terms..r {
        side.column_mut(k - long_terms).copy_from_slice(&ref2n.side(k)[n - gamma..=n + gamma]);
    }
    let weights = ref2n.tensor().weights()[long_terms..].to_vec();
    Ok(CanonicalTensor::new(weights, [side.clone(), side.clone(), side])?.normalized())
}

/// Default window radius: effective support of the short terms, capped at `n - 1`.
pub fn default_gamma(ref2n: &ReferenceCanonical, long_terms: usize, delta: f64) -> usize {
    let short = ref2n.tensor().select(long_terms..ref2n.rank());
    effective_support(&short, delta).min(ref2n.grid().n() - 1)
}

/// CCT of the short-range terms at all particle nodes.
pub fn assemble_short(
    ref2n: &ReferenceCanonical,
    sys: &IndexedParticleSystem,
    long_terms: usize,
    gamma: usize,
    policy: OverlapPolicy,
) -> Result<Cct> {
    check_doubled(ref2n, sys)?;
    let dims = [sys.grid().n(); 3];
    if long_terms >= ref2n.rank() {
        return Ok(Cct::empty(dims));
    }
    let local = short_local(ref2n, long_terms, gamma)?;
    Cct::new(local, gamma, sys.nodes().to_vec(), sys.charges().to_vec(), dims, policy)
}

/// Summary of one `build_rs` run.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport {
    pub particles: usize,
    pub order: usize,
    pub max_displacement: f64,
    pub sigma: f64,
    pub long_terms: usize,
    pub short_terms: usize,
    pub gamma: usize,
    pub policy: OverlapPolicy,
    /// Explicit canonical rank before reduction.
    pub unreduced_rank: usize,
    pub long_ranks: Vec<usize>,
    pub sweeps: usize,
    pub residual_estimate: Option<f64>,
    pub storage: StorageReport,
    pub timings: Vec<(&'static str, f64)>,
}

/// The assembled RS tensor together with the reference it came from.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub rs: RsTensor,
    pub reference: ReferenceCanonical,
    pub indexed: IndexedParticleSystem,
    pub report: BuildReport,
}

/// Full pipeline: snap, project the doubled reference, split, assemble both
/// parts and reduce the long part.
pub fn build_rs(sys: &ParticleSystem, cfg: &AssemblyConfig) -> Result<Assembly> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&'static str, f64)>| {
        timings.push((name, clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };
    let indexed = snap_to_grid(sys, cfg.grid)?;
    log::info!("snapped {} particles, max displacement {:.3e}", indexed.len(), indexed.max_displacement());
    let order = match cfg.order {
        Some(m) => m,
        None => grid_order(cfg.kernel, cfg.c0, cfg.grid, cfg.expansion_tol)?,
    };
    let rule = grid_quadrature(cfg.kernel, order, cfg.c0, cfg.grid)?;
    let sigma = match cfg.sigma {
        Some(s) => s,
        None if sys.len() > 1 => separation_distance(sys)?,
        None => 2.0 * cfg.grid.bbox().half_width(),
    };
    let long_terms = match cfg.long_terms {
        Some(r) if r > rule.len() => {
            return Err(Error::Config(format!("long_terms = {r} exceeds the expansion rank {}", rule.len())))
        }
        Some(r) => r,
        None => split_rank(&rule, sigma, cfg.delta, cfg.criterion)?,
    };
    let reference = project_kernel(&rule, cfg.grid, true, cfg.entry_rule).with_split(long_terms)?;
    lap("reference", &mut timings);

    let windowed = assemble_long(&reference, &indexed, long_terms)?;
    let unreduced_rank = windowed.rank();
    let mut sweeps = 0;
    let mut residual_estimate = None;
    let long = if long_terms > 0 && (cfg.reduce || unreduced_rank > cfg.reduction_threshold) {
        let out = c2t_als(&windowed, &cfg.reduction)?;
        sweeps = out.sweeps;
        residual_estimate = Some(out.residual_estimate());
        match cfg.long_format {
            LongFormat::Tucker => LongPart::Tucker(out.tucker),
            LongFormat::Canonical => LongPart::Canonical(tucker_to_canonical(&out.tucker, cfg.reduction.eps_t2c)?),
        }
    } else {
        LongPart::Windowed(windowed)
    };
    lap("long", &mut timings);

    let gamma = cfg.gamma.unwrap_or_else(|| default_gamma(&reference, long_terms, cfg.delta));
    let mut policy = cfg.overlap;
    let short = match assemble_short(&reference, &indexed, long_terms, gamma, policy) {
        Err(Error::Separation(msg)) if cfg.allow_soft && policy == OverlapPolicy::Strict => {
            log::warn!("{msg}; switching to overlapping windows");
            policy = OverlapPolicy::Soft { cap: DEFAULT_OVERLAP_CAP };
            assemble_short(&reference, &indexed, long_terms, gamma, policy)?
        }
        other => other?,
    };
    lap("short", &mut timings);

    let meta = RsMeta {
        long_terms,
        short_terms: reference.rank() - long_terms,
        self_value: reference.center_value(0..long_terms),
    };
    let rs = RsTensor::new(long, short, cfg.grid, meta)?;
    let report = BuildReport {
        particles: sys.len(),
        order,
        max_displacement: indexed.max_displacement(),
        sigma,
        long_terms,
        short_terms: meta.short_terms,
        gamma,
        policy,
        unreduced_rank,
        long_ranks: rs.long().ranks(),
        sweeps,
        residual_estimate,
        storage: storage_report(&rs),
        timings,
    };
    Ok(Assembly { rs, reference, indexed, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{Dense3, TensorView};
    use crate::kernel::QuadratureRule;
    use crate::particles::{generate_random_cluster, Box3, ChargeLaw};

    fn setup(n: usize, count: usize, seed: u64) -> (QuadratureRule, ReferenceCanonical, IndexedParticleSystem) {
        let bbox = Box3::new(4.0).unwrap();
        let grid = Grid3::new(n, bbox).unwrap();
        let rule = grid_quadrature(RadialKernel::Newton, 12, DEFAULT_C0, grid).unwrap();
        let reference = project_kernel(&rule, grid, true, EntryRule::CellAverage);
        let sys = generate_random_cluster(count, bbox, 0.5, ChargeLaw::RandomSign, seed).unwrap();
        (rule, reference, snap_to_grid(&sys, grid).unwrap())
    }

    /// Value at n-grid cell `i` of the reference terms `range` centred at node `j`.
    fn shifted(reference: &ReferenceCanonical, range: std::ops::Range<usize>, j: [usize; 3], i: [usize; 3]) -> f64 {
        let n = reference.grid().n();
        let m = [0, 1, 2].map(|l| n + i[l] - j[l]);
        range
            .map(|k| {
                let u = reference.side(k);
                reference.tensor().weights()[k] * u[m[0]] * u[m[1]] * u[m[2]]
            })
            .sum()
    }

    fn dense_sum(reference: &ReferenceCanonical, range: std::ops::Range<usize>, sys: &IndexedParticleSystem) -> Dense3 {
        let n = sys.grid().n();
        let mut d = Dense3::zeros([n; 3]).unwrap();
        for i in Dense3::indices([n; 3]) {
            *d.get_mut(i) = sys
                .nodes()
                .iter()
                .zip(sys.charges())
                .map(|(j, z)| z * shifted(reference, range.clone(), *j, i))
                .sum();
        }
        d
    }

    #[test]
    fn centred_window_reproduces_n_grid_reference() {
        let (rule, reference, _) = setup(16, 1, 1);
        let small = project_kernel(&rule, reference.grid(), false, EntryRule::CellAverage);
        let j = [8, 8, 8];
        for k in 0..rule.len() {
            let s = window_slice(&reference, j, k);
            let scale = reference.tensor().weights()[k] / small.tensor().weights()[k];
            let a: Vec<f64> = s[0].to_vec();
            let b = small.side(k);
            // same entries up to the per-term normalisation
            let ratio = scale.cbrt();
            for (x, y) in a.iter().zip(b) {
                assert!((x * ratio - y).abs() < 1e-13, "term {k}");
            }
        }
    }

    #[test]
    fn neighbouring_windows_shift_by_one() {
        let (_, reference, _) = setup(16, 1, 1);
        let a = window_slice(&reference, [5, 7, 9], 3);
        let b = window_slice(&reference, [6, 7, 9], 3);
        assert_eq!(&a[0][..15], &b[0][1..]);
        assert_eq!(a[1], b[1]);
        assert_eq!(a[2], b[2]);
    }

    #[test]
    fn window_matches_shifted_gaussian() {
        let bbox = Box3::new(4.0).unwrap();
        let grid = Grid3::new(64, bbox).unwrap();
        let rule = grid_quadrature(RadialKernel::Newton, 8, DEFAULT_C0, grid).unwrap();
        let reference = project_kernel(&rule, grid, true, EntryRule::Collocation);
        let h = grid.step();
        let j = [17, 40, 33];
        let k = 4;
        let s = window_slice(&reference, j, k);
        let t = rule.nodes()[k];
        let norm = {
            let v = crate::kernel::gaussian_profile(t, 128, h, EntryRule::Collocation);
            v.iter().map(|x| x * x).sum::<f64>().sqrt()
        };
        for l in 0..3 {
            for i in 0..64 {
                let x = (i as f64 - j[l] as f64 + 0.5) * h;
                let direct = (-(t * x) * (t * x)).exp() / norm;
                assert!((s[l][i] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn long_part_matches_dense_oracle() {
        let (_, reference, sys) = setup(32, 50, 3);
        let r_l = 6;
        let long = assemble_long(&reference, &sys, r_l).unwrap();
        assert_eq!(long.rank(), 50 * r_l);
        let oracle = dense_sum(&reference, 0..r_l, &sys);
        let mine = long.to_canonical().to_dense().unwrap();
        assert!(mine.max_abs_diff(&oracle) <= 1e-12 * oracle.max_abs());
    }

    #[test]
    fn single_central_particle_long_part() {
        let (rule, reference, _) = setup(16, 1, 1);
        let grid = reference.grid();
        let sys = ParticleSystem::new(vec![[0.0; 3]], vec![-2.0], grid.bbox()).unwrap();
        let sys = snap_to_grid(&sys, grid).unwrap();
        let long = assemble_long(&reference, &sys, 5).unwrap().to_dense().unwrap();
        let small = project_kernel(&rule, grid, false, EntryRule::CellAverage);
        let (_, small_long) = split_tensor_of(&small, 5);
        for i in Dense3::indices([16; 3]) {
            assert!((long.get(i) + 2.0 * small_long.get(i)).abs() < 1e-12 * small_long.max_abs());
        }
    }

    fn split_tensor_of(reference: &ReferenceCanonical, r_l: usize) -> (Dense3, Dense3) {
        let (s, l) = crate::kernel::split_tensor(reference, r_l).unwrap();
        (s.to_dense().unwrap(), l.to_dense().unwrap())
    }

    #[test]
    fn mirror_pair_is_odd() {
        let (_, reference, _) = setup(16, 1, 1);
        let grid = reference.grid();
        let h = grid.step();
        // nodes 5 and 11 along x mirror about node 8
        let pos = vec![[-3.0 * h, 0.0, 0.0], [3.0 * h, 0.0, 0.0]];
        let sys = ParticleSystem::new(pos, vec![1.0, -1.0], grid.bbox()).unwrap();
        let sys = snap_to_grid(&sys, grid).unwrap();
        assert_eq!(sys.nodes()[0][0] + sys.nodes()[1][0], 16);
        let d = assemble_long(&reference, &sys, 8).unwrap().to_dense().unwrap();
        // node-centred mirror: cell c covers [c-8, c-7]h, its mirror is cell 15-c
        for i in Dense3::indices([16; 3]) {
            let m = [15 - i[0], i[1], i[2]];
            assert!((d.get(i) + d.get(m)).abs() < 1e-13 * d.max_abs());
        }
    }

    #[test]
    fn exact_split_of_assembled_field() {
        let (_, reference, sys) = setup(16, 6, 2);
        let r_l = 5;
        let long = assemble_long(&reference, &sys, r_l).unwrap().to_dense().unwrap();
        let short = assemble_short(&reference, &sys, r_l, 15, OverlapPolicy::Soft { cap: usize::MAX })
            .unwrap()
            .to_dense()
            .unwrap();
        let mut total = long.clone();
        total.add_assign(&short);
        let oracle = dense_sum(&reference, 0..reference.rank(), &sys);
        assert!(total.max_abs_diff(&oracle) <= 1e-12 * oracle.max_abs());
    }

    #[test]
    fn empty_short_part_when_all_terms_long() {
        let (_, reference, sys) = setup(16, 3, 2);
        let r = reference.rank();
        let c = assemble_short(&reference, &sys, r, 2, OverlapPolicy::Strict).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn single_particle_short_centre() {
        let (_, reference, _) = setup(16, 1, 1);
        let grid = reference.grid();
        let sys = snap_to_grid(&ParticleSystem::new(vec![[0.0; 3]], vec![1.0], grid.bbox()).unwrap(), grid).unwrap();
        let r_l = 4;
        let c = assemble_short(&reference, &sys, r_l, 3, OverlapPolicy::Strict).unwrap();
        let expected = reference.center_value(r_l..reference.rank());
        assert!((c.entry([8, 8, 8]) - expected).abs() < 1e-13 * expected.abs());
    }

    #[test]
    fn short_part_within_delta_of_truncated_oracle() {
        let (_, reference, sys) = setup(32, 20, 5);
        let r_l = 6;
        let delta = 1e-4;
        let gamma = default_gamma(&reference, r_l, delta);
        let cct = assemble_short(&reference, &sys, r_l, gamma, OverlapPolicy::Soft { cap: 64 }).unwrap();
        let oracle = dense_sum(&reference, r_l..reference.rank(), &sys);
        let short_terms = (reference.rank() - r_l) as f64;
        for i in Dense3::indices([32; 3]).step_by(7) {
            let near = sys.nodes().iter().filter(|j| crate::particles::linf(j, &i) <= gamma + 1).count().max(1);
            let bound = delta * short_terms * near as f64 + 1e-12 * oracle.max_abs();
            assert!((cct.entry(i) - oracle.get(i)).abs() <= bound, "at {i:?}");
        }
    }

    #[test]
    fn strict_policy_rejects_close_pairs() {
        let (_, reference, _) = setup(16, 1, 1);
        let grid = reference.grid();
        let h = grid.step();
        let sys = ParticleSystem::new(vec![[0.0; 3], [2.0 * h, 0.0, 0.0]], vec![1.0, 1.0], grid.bbox()).unwrap();
        let sys = snap_to_grid(&sys, grid).unwrap();
        assert!(matches!(
            assemble_short(&reference, &sys, 2, 2, OverlapPolicy::Strict),
            Err(Error::Separation(_))
        ));
    }

    #[test]
    fn build_single_particle_keeps_rank() {
        let bbox = Box3::new(4.0).unwrap();
        let grid = Grid3::new(32, bbox).unwrap();
        let sys = ParticleSystem::new(vec![[0.3, -0.2, 0.1]], vec![1.0], bbox).unwrap();
        let mut cfg = AssemblyConfig::new(grid);
        cfg.order = Some(10);
        cfg.long_terms = Some(5);
        let a = build_rs(&sys, &cfg).unwrap();
        assert!(a.report.long_ranks.iter().all(|&r| r <= 5));
        assert_eq!(a.report.unreduced_rank, 5);
    }

    #[test]
    fn build_is_deterministic() {
        let bbox = Box3::new(4.0).unwrap();
        let grid = Grid3::new(32, bbox).unwrap();
        let sys = generate_random_cluster(30, bbox, 0.6, ChargeLaw::RandomSign, 4).unwrap();
        let mut cfg = AssemblyConfig::new(grid);
        cfg.order = Some(10);
        cfg.long_terms = Some(5);
        cfg.gamma = Some(1);
        let a = build_rs(&sys, &cfg).unwrap();
        let b = build_rs(&sys, &cfg).unwrap();
        assert_eq!(a.rs, b.rs);
    }
}

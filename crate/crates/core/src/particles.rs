//! Particle systems, the computational grid, generators and grid snapping.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Header tag of the particle text format.
pub const PARTICLE_HEADER: &str = "# rs-particles v1";

/// Fraction of the half-width filled by random clusters. The outer layer stays
/// empty so that snapped particles never land on the box faces.
pub const CLUSTER_FILL: f64 = 0.9;

/// The cube `[-b, b]^3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3 {
    half_width: f64,
}

impl Box3 {
    pub fn new(half_width: f64) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Domain(format!("box half-width must be positive, got {half_width}")));
        }
        Ok(Self { half_width })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn contains_strictly(&self, x: &[f64; 3]) -> bool {
        x.iter().all(|c| c.abs() < self.half_width)
    }
}

/// Uniform `n^3` grid over a box. `n` counts cells per axis; nodes are
/// numbered `0..=n` with node `n/2` at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid3 {
    n: usize,
    bbox: Box3,
}

impl Grid3 {
    pub fn new(n: usize, bbox: Box3) -> Result<Self> {
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::Domain(format!("grid size must be even and >= 2, got {n}")));
        }
        Ok(Self { n, bbox })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bbox(&self) -> Box3 {
        self.bbox
    }

    pub fn step(&self) -> f64 {
        2.0 * self.bbox.half_width / self.n as f64
    }

    /// Coordinate of node `j` along one axis.
    pub fn node_coord(&self, j: usize) -> f64 {
        (j as f64 - (self.n / 2) as f64) * self.step()
    }

    /// The same grid with twice as many cells and twice the box.
    pub fn doubled(&self) -> Grid3 {
        Grid3 {
            n: 2 * self.n,
            bbox: Box3 { half_width: 2.0 * self.bbox.half_width },
        }
    }
}

/// How charges are drawn by the generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChargeLaw {
    Unit,
    RandomSign,
    Uniform,
}

impl std::str::FromStr for ChargeLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(ChargeLaw::Unit),
            "random_sign" => Ok(ChargeLaw::RandomSign),
            "uniform" => Ok(ChargeLaw::Uniform),
            other => Err(Error::Config(format!("unknown charge law '{other}'"))),
        }
    }
}

/// Point charges in a box.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    positions: Vec<[f64; 3]>,
    charges: Vec<f64>,
    bbox: Box3,
}

impl ParticleSystem {
    pub fn new(positions: Vec<[f64; 3]>, charges: Vec<f64>, bbox: Box3) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Domain("a particle system needs at least one particle".into()));
        }
        if positions.len() != charges.len() {
            return Err(Error::Shape(format!(
                "{} positions but {} charges",
                positions.len(),
                charges.len()
            )));
        }
        for (nu, x) in positions.iter().enumerate() {
            if !bbox.contains_strictly(x) {
                return Err(Error::Domain(format!(
                    "particle {nu} at {x:?} is not strictly inside [-{b}, {b}]^3",
                    b = bbox.half_width
                )));
            }
        }
        if let Some(q) = charges.iter().find(|q| !q.is_finite()) {
            return Err(Error::Domain(format!("non-finite charge {q}")));
        }
        Ok(Self { positions, charges, bbox })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn charges(&self) -> &[f64] {
        &self.charges
    }

    pub fn bbox(&self) -> Box3 {
        self.bbox
    }
}

/// Parses the particle text format.
pub fn parse_particles(text: &str) -> Result<ParticleSystem> {
    let mut half_width = None;
    let mut positions = Vec::new();
    let mut charges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(PARTICLE_HEADER) {
            let value = rest
                .trim()
                .strip_prefix("b=")
                .ok_or_else(|| Error::Parse { line: line_no, msg: "header lacks b=<float>".into() })?;
            let b: f64 = value.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad box half-width '{value}'"),
            })?;
            half_width = Some(b);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if half_width.is_none() {
            return Err(Error::Parse { line: line_no, msg: "particle record before header".into() });
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 fields 'x y z q', found {}", fields.len()),
            });
        }
        let mut vals = [0.0; 4];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|_| Error::Parse { line: line_no, msg: format!("bad number '{f}'") })?;
        }
        positions.push([vals[0], vals[1], vals[2]]);
        charges.push(vals[3]);
    }
    let b = half_width.ok_or_else(|| Error::Parse { line: 1, msg: "missing header".into() })?;
    ParticleSystem::new(positions, charges, Box3::new(b)?)
}

pub fn load_particles(path: impl AsRef<Path>) -> Result<ParticleSystem> {
    let text = std::fs::read_to_string(path)?;
    parse_particles(&text)
}

/// Renders the particle text format with 17 significant digits.
pub fn format_particles(sys: &ParticleSystem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{PARTICLE_HEADER} b={:.16e}", sys.bbox.half_width);
    for (x, q) in sys.positions.iter().zip(&sys.charges) {
        let _ = writeln!(out, "{:.16e} {:.16e} {:.16e} {:.16e}", x[0], x[1], x[2], q);
    }
    out
}

pub fn save_particles(sys: &ParticleSystem, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_particles(sys))?;
    Ok(())
}

fn draw_charges(count: usize, law: ChargeLaw, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (0..count)
        .map(|_| match law {
            ChargeLaw::Unit => 1.0,
            ChargeLaw::RandomSign => {
                if rng.gen_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
            ChargeLaw::Uniform => rng.gen_range(-1.0..=1.0),
        })
        .collect()
}

/// Regular lattice centred at the origin. Charges are drawn from ChaCha8
/// stream 1 of `seed`, in x-major order.
pub fn generate_lattice(
    dims: [usize; 3],
    spacing: f64,
    law: ChargeLaw,
    seed: u64,
    bbox: Box3,
) -> Result<ParticleSystem> {
    if dims.contains(&0) {
        return Err(Error::Domain(format!("lattice dims must be >= 1, got {dims:?}")));
    }
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::Domain(format!("lattice spacing must be positive, got {spacing}")));
    }
    for &d in &dims {
        let extent = (d - 1) as f64 * spacing;
        if extent >= 2.0 * bbox.half_width() {
            return Err(Error::Domain(format!(
                "lattice extent {extent} does not fit in box of width {}",
                2.0 * bbox.half_width()
            )));
        }
    }
    let coord = |i: usize, d: usize| (i as f64 - (d - 1) as f64 / 2.0) * spacing;
    let mut positions = Vec::with_capacity(dims.iter().product());
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                positions.push([coord(i, dims[0]), coord(j, dims[1]), coord(k, dims[2])]);
            }
        }
    }
    let charges = draw_charges(positions.len(), law, seed);
    ParticleSystem::new(positions, charges, bbox)
}

/// Rejection-sampled cluster with pairwise distance at least `min_sep`.
///
/// Positions come from ChaCha8 stream 0 of `seed`, uniform in
/// `[-0.9 b, 0.9 b]^3`; charges from stream 1.
pub fn generate_random_cluster(
    count: usize,
    bbox: Box3,
    min_sep: f64,
    law: ChargeLaw,
    seed: u64,
) -> Result<ParticleSystem> {
    if count == 0 {
        return Err(Error::Domain("cluster needs at least one particle".into()));
    }
    if !(min_sep >= 0.0) {
        return Err(Error::Domain(format!("minimum separation must be >= 0, got {min_sep}")));
    }
    let extent = CLUSTER_FILL * bbox.half_width();
    let max_attempts = 1000 * count + 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: Vec<[f64; 3]> = Vec::with_capacity(count);
    let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let bucket_of = |x: &[f64; 3]| -> [i64; 3] {
        if min_sep > 0.0 {
            x.map(|c| (c / min_sep).floor() as i64)
        } else {
            [0; 3]
        }
    };
    let mut attempts = 0;
    while positions.len() < count {
        if attempts == max_attempts {
            return Err(Error::Packing(format!(
                "placed {} of {count} particles with separation {min_sep} after {max_attempts} attempts",
                positions.len()
            )));
        }
        attempts += 1;
        let x = [
            rng.gen_range(-extent..=extent),
            rng.gen_range(-extent..=extent),
            rng.gen_range(-extent..=extent),
        ];
        let cell = bucket_of(&x);
        let too_close = min_sep > 0.0
            && neighbour_cells(cell).any(|c| {
                buckets.get(&c).is_some_and(|members| {
                    members.iter().any(|&m| distance(&positions[m], &x) < min_sep)
                })
            });
        if too_close {
            continue;
        }
        buckets.entry(cell).or_default().push(positions.len());
        positions.push(x);
    }
    let charges = draw_charges(count, law, seed);
    ParticleSystem::new(positions, charges, bbox)
}

fn neighbour_cells(c: [i64; 3]) -> impl Iterator<Item = [i64; 3]> {
    (-1..=1).flat_map(move |a| {
        (-1..=1).flat_map(move |b| (-1..=1).map(move |d| [c[0] + a, c[1] + b, c[2] + d]))
    })
}

pub(crate) fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Minimum pairwise Euclidean distance.
pub fn separation_distance(sys: &ParticleSystem) -> Result<f64> {
    if sys.len() < 2 {
        return Err(Error::Domain("separation distance needs at least two particles".into()));
    }
    let pos = sys.positions();
    let mut best = f64::INFINITY;
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            best = best.min(distance(&pos[i], &pos[j]));
        }
    }
    Ok(best)
}

/// A particle system whose positions are grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedParticleSystem {
    base: ParticleSystem,
    grid: Grid3,
    nodes: Vec<[usize; 3]>,
    max_displacement: f64,
}

impl IndexedParticleSystem {
    pub fn base(&self) -> &ParticleSystem {
        &self.base
    }

    pub fn grid(&self) -> Grid3 {
        self.grid
    }

    /// Node index of each particle; values lie in `1..n`.
    pub fn nodes(&self) -> &[[usize; 3]] {
        &self.nodes
    }

    pub fn charges(&self) -> &[f64] {
        self.base.charges()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_displacement(&self) -> f64 {
        self.max_displacement
    }

    /// Minimum pairwise infinity-distance between nodes, in cells.
    pub fn min_node_separation(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (a, ja) in self.nodes.iter().enumerate() {
            for jb in &self.nodes[a + 1..] {
                let d = linf(ja, jb);
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
        best
    }

    /// Replaces the node of particle `idx`; used by finite-difference probes.
    pub fn with_node(&self, idx: usize, node: [usize; 3]) -> Result<Self> {
        let n = self.grid.n();
        if node.iter().any(|&j| j == 0 || j >= n) {
            return Err(Error::Domain(format!("node {node:?} is not interior to the grid")));
        }
        if self.nodes.iter().enumerate().any(|(m, j)| m != idx && *j == node) {
            return Err(Error::Resolution(format!("node {node:?} is already occupied")));
        }
        let mut nodes = self.nodes.clone();
        nodes[idx] = node;
        let mut positions = self.base.positions.clone();
        positions[idx] = node.map(|j| self.grid.node_coord(j));
        Ok(Self {
            base: ParticleSystem { positions, charges: self.base.charges.clone(), bbox: self.base.bbox },
            grid: self.grid,
            nodes,
            max_displacement: self.max_displacement,
        })
    }
}

pub(crate) fn linf(a: &[usize; 3], b: &[usize; 3]) -> usize {
    (0..3).map(|l| a[l].abs_diff(b[l])).max().unwrap_or(0)
}

/// Moves every particle to its nearest grid node (ties go to the lower index).
pub fn snap_to_grid(sys: &ParticleSystem, grid: Grid3) -> Result<IndexedParticleSystem> {
    if grid.bbox() != sys.bbox() {
        return Err(Error::Shape(format!(
            "grid box half-width {} differs from system box {}",
            grid.bbox().half_width(),
            sys.bbox().half_width()
        )));
    }
    let n = grid.n();
    let h = grid.step();
    let half = (n / 2) as f64;
    let mut nodes = Vec::with_capacity(sys.len());
    let mut positions = Vec::with_capacity(sys.len());
    let mut max_disp: f64 = 0.0;
    let mut seen: HashMap<[usize; 3], usize> = HashMap::new();
    for (nu, x) in sys.positions().iter().enumerate() {
        let mut node = [0usize; 3];
        for l in 0..3 {
            let f = x[l] / h + half;
            let j = (f - 0.5).ceil();
            if j < 1.0 || j > (n - 1) as f64 {
                return Err(Error::Resolution(format!(
                    "particle {nu} snaps onto the box boundary (node {j}); enlarge the box"
                )));
            }
            node[l] = j as usize;
        }
        if let Some(prev) = seen.insert(node, nu) {
            return Err(Error::Resolution(format!(
                "particles {prev} and {nu} snap to the same node {node:?}; increase n"
            )));
        }
        let snapped = node.map(|j| grid.node_coord(j));
        max_disp = max_disp.max(distance(x, &snapped));
        nodes.push(node);
        positions.push(snapped);
    }
    let base = ParticleSystem::new(positions, sys.charges().to_vec(), sys.bbox())?;
    Ok(IndexedParticleSystem { base, grid, nodes, max_displacement: max_disp })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(b: f64) -> Box3 {
        Box3::new(b).unwrap()
    }

    #[test]
    fn single_record_file() {
        let sys = parse_particles("# rs-particles v1 b=1\n0 0 0 1.0\n").unwrap();
        assert_eq!(sys.len(), 1);
        assert_eq!(sys.charges(), &[1.0]);
    }

    #[test]
    fn duplicates_are_accepted_by_loader() {
        let sys = parse_particles("# rs-particles v1 b=2\n0 0 0 1\n# note\n0 0 0 -1\n").unwrap();
        assert_eq!(sys.len(), 2);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_particles("# rs-particles v1 b=2\n0 0 0 1\n1 2 x 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = parse_particles("# rs-particles v1 b=2\n0 0 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn outside_box_is_domain_error() {
        let err = parse_particles("# rs-particles v1 b=1\n1.0 0 0 1\n").unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn two_particle_lattice() {
        let sys = generate_lattice([2, 1, 1], 1.0, ChargeLaw::Unit, 0, unit_box(5.0)).unwrap();
        assert_eq!(sys.len(), 2);
        assert_eq!(distance(&sys.positions()[0], &sys.positions()[1]), 1.0);
        assert_eq!(sys.charges(), &[1.0, 1.0]);
    }

    #[test]
    fn lattice_counts_and_spacing() {
        let sys = generate_lattice([8, 8, 8], 1.5, ChargeLaw::RandomSign, 3, unit_box(20.0)).unwrap();
        assert_eq!(sys.len(), 512);
        assert_eq!(separation_distance(&sys).unwrap(), 1.5);
        assert!(sys.charges().iter().all(|q| q.abs() == 1.0));
    }

    #[test]
    fn lattice_too_wide() {
        let err = generate_lattice([3, 1, 1], 1.0, ChargeLaw::Unit, 0, unit_box(1.0)).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn lattice_is_reproducible() {
        let a = generate_lattice([12, 12, 12], 1.0, ChargeLaw::Uniform, 9, unit_box(20.0)).unwrap();
        let b = generate_lattice([12, 12, 12], 1.0, ChargeLaw::Uniform, 9, unit_box(20.0)).unwrap();
        assert_eq!(a.len(), 1728);
        let bits = |s: &ParticleSystem| s.charges().iter().map(|q| q.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn cluster_respects_separation() {
        let sys = generate_random_cluster(200, unit_box(20.0), 0.8, ChargeLaw::Unit, 1).unwrap();
        assert!(separation_distance(&sys).unwrap() >= 0.8);
        let one = generate_random_cluster(1, unit_box(1.0), 100.0, ChargeLaw::Unit, 1).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn infeasible_packing() {
        let err = generate_random_cluster(2, unit_box(1.0), 10.0, ChargeLaw::Unit, 1).unwrap_err();
        assert!(matches!(err, Error::Packing(_)));
    }

    #[test]
    fn separation_needs_two() {
        let sys = ParticleSystem::new(vec![[0.0; 3]], vec![1.0], unit_box(1.0)).unwrap();
        assert!(matches!(separation_distance(&sys), Err(Error::Domain(_))));
    }

    #[test]
    fn snapping_on_and_off_nodes() {
        let grid = Grid3::new(16, unit_box(4.0)).unwrap();
        let h = grid.step();
        let sys = ParticleSystem::new(
            vec![[0.0, 0.0, 0.0], [h + h / 4.0, 2.0 * h, -h]],
            vec![1.0, 1.0],
            unit_box(4.0),
        )
        .unwrap();
        let snapped = snap_to_grid(&sys, grid).unwrap();
        assert_eq!(snapped.nodes()[0], [8, 8, 8]);
        assert_eq!(snapped.nodes()[1], [9, 10, 7]);
        assert!((snapped.max_displacement() - h / 4.0).abs() < 1e-15);
    }

    #[test]
    fn tie_goes_to_lower_node() {
        let grid = Grid3::new(16, unit_box(4.0)).unwrap();
        let h = grid.step();
        let sys = ParticleSystem::new(vec![[h / 2.0, 0.0, 0.0]], vec![1.0], unit_box(4.0)).unwrap();
        assert_eq!(snap_to_grid(&sys, grid).unwrap().nodes()[0], [8, 8, 8]);
    }

    #[test]
    fn collision_is_resolution_error() {
        let grid = Grid3::new(8, unit_box(4.0)).unwrap();
        let sys =
            ParticleSystem::new(vec![[0.0; 3], [0.1, 0.0, 0.0]], vec![1.0, 1.0], unit_box(4.0)).unwrap();
        assert!(matches!(snap_to_grid(&sys, grid), Err(Error::Resolution(_))));
    }

    #[test]
    fn cluster_snap_displacement_bound() {
        let b = unit_box(20.0);
        let sys = generate_random_cluster(400, b, 0.8, ChargeLaw::Unit, 5).unwrap();
        let grid = Grid3::new(1024, b).unwrap();
        let snapped = snap_to_grid(&sys, grid).unwrap();
        assert!(snapped.max_displacement() <= grid.step() * 3f64.sqrt() / 2.0);
        assert!(snapped.max_displacement() <= 0.034);
    }
}

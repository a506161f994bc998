//! Interaction energy, gradients and forces, with direct-summation oracles.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats::{CanonicalTensor, Cct, LongPart, RsTensor, TensorView, WindowedCanonical};
use crate::particles::{distance, IndexedParticleSystem, ParticleSystem};
use crate::sum::{compensated_sum, Accumulator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub energy: f64,
    pub exact: Option<f64>,
    pub abs_err: Option<f64>,
    pub rel_err: Option<f64>,
    /// The short window cuts off a non-negligible part of the short kernel,
    /// so near-field contributions beyond it are missing.
    pub flagged: bool,
    pub seconds: f64,
}

impl EnergyReport {
    pub fn with_exact(mut self, exact: f64) -> Self {
        let abs = (self.energy - exact).abs();
        self.exact = Some(exact);
        self.abs_err = Some(abs);
        self.rel_err = Some(abs / exact.abs());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceVector {
    pub index: usize,
    pub force: [f64; 3],
}

impl ForceVector {
    pub fn norm(&self) -> f64 {
        self.force.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

fn pair_distance(sys: &ParticleSystem, a: usize, b: usize) -> Result<f64> {
    let r = distance(&sys.positions()[a], &sys.positions()[b]);
    if r == 0.0 {
        return Err(Error::Domain(format!("particles {a} and {b} coincide")));
    }
    Ok(r)
}

/// `½ Σ_j Σ_{k≠j} z_j z_k / |x_j - x_k|` by direct summation.
pub fn direct_energy(sys: &ParticleSystem) -> Result<f64> {
    let z = sys.charges();
    let rows: Vec<f64> = (0..sys.len())
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let mut acc = Accumulator::new();
            for k in (0..sys.len()).filter(|&k| k != j) {
                acc.add(z[k] / pair_distance(sys, j, k)?);
            }
            Ok(z[j] * acc.value())
        })
        .collect::<Result<_>>()?;
    Ok(0.5 * compensated_sum(rows))
}

/// Truncation level of the short window, relative to its centre value,
/// above which the near-field energy counts as incomplete.
pub const SHORT_EDGE_TOLERANCE: f64 = 1e-4;

/// `½ Σ_j z_j (P(j) - z_j P(0))` with `P = P_l + P_s`. The long part is
/// evaluated at every particle; the short part only contributes through the
/// windows of other particles containing `j`, so for well separated systems
/// this reduces to the long-part formula with the self value stored in the
/// RS tensor.
pub fn rs_energy(rs: &RsTensor, sys: &IndexedParticleSystem) -> Result<EnergyReport> {
    let start = Instant::now();
    if rs.grid() != sys.grid() {
        return Err(Error::Shape("RS tensor and particles live on different grids".into()));
    }
    let self_value = rs.meta().self_value;
    let long = rs.long();
    let short = rs.short();
    if !short.is_empty() && short.centers() != sys.nodes() {
        return Err(Error::Shape("short part was not assembled from these particles".into()));
    }
    if sys.len() < 2 {
        // no pairs; a reduced long part would leave its truncation error at the node
        return Ok(EnergyReport {
            energy: 0.0,
            exact: None,
            abs_err: None,
            rel_err: None,
            flagged: false,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let terms: Vec<f64> = sys
        .nodes()
        .par_iter()
        .zip(sys.charges().par_iter())
        .enumerate()
        .map(|(j, (node, &z))| {
            let near = if short.is_empty() {
                0.0
            } else {
                compensated_sum(
                    short
                        .lookup(*node)
                        .into_iter()
                        .filter(|&nu| nu != j)
                        .map(|nu| short.weights()[nu] * short.copy_entry(nu, *node)),
                )
            };
            z * (long.entry(*node) - z * self_value + near)
        })
        .collect();
    let energy = 0.5 * compensated_sum(terms);
    let flagged = !short.is_empty() && short_edge_ratio(short) > SHORT_EDGE_TOLERANCE;
    if flagged {
        log::warn!(
            "short-range window radius {} truncates the short kernel; near-field energy may be incomplete",
            short.gamma()
        );
    }
    Ok(EnergyReport {
        energy,
        exact: None,
        abs_err: None,
        rel_err: None,
        flagged,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// `|U0(edge)| / |U0(centre)|` along the first axis of the short window.
fn short_edge_ratio(short: &Cct) -> f64 {
    let g = short.gamma();
    let local = short.local();
    let centre = local.entry([g; 3]);
    if centre == 0.0 {
        return 0.0;
    }
    (local.entry([0, g, g]) / centre).abs()
}

/// Central differences divided by `h`, one-sided at both ends.
fn difference(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| match i {
            0 => (v[1] - v[0]) / h,
            _ if i == n - 1 => (v[n - 1] - v[n - 2]) / h,
            _ => (v[i + 1] - v[i - 1]) / (2.0 * h),
        })
        .collect()
}

/// Discrete gradient of a canonical tensor: component `l` differentiates the
/// mode-`l` vectors.
pub fn grad_canonical(c: &CanonicalTensor, h: f64) -> [CanonicalTensor; 3] {
    std::array::from_fn(|l| {
        let f = c.factor(l);
        let mut d = DMatrix::zeros(f.nrows(), f.ncols());
        for k in 0..f.ncols() {
            d.column_mut(k).copy_from_slice(&difference(c.column(l, k), h));
        }
        let mut factors = c.factors().clone();
        factors[l] = d;
        CanonicalTensor::new(c.weights().to_vec(), factors).expect("same shapes")
    })
}

/// Gradient of the long part of `rs`.
pub fn grad_long(rs: &RsTensor) -> Result<[CanonicalTensor; 3]> {
    match rs.long() {
        LongPart::Tucker(_) => Err(Error::Capability(
            "gradient of a Tucker long part; build with the canonical long format".into(),
        )),
        long => Ok(grad_canonical(long.as_canonical()?.as_ref(), rs.grid().step())),
    }
}

/// `F_j = z_j Σ_{k≠j} z_k (x_j - x_k) / |x_j - x_k|^3`.
pub fn direct_force(sys: &ParticleSystem, j: usize) -> Result<ForceVector> {
    if j >= sys.len() {
        return Err(Error::Domain(format!("particle {j} out of range")));
    }
    let x = sys.positions();
    let z = sys.charges();
    let mut acc = [Accumulator::new(), Accumulator::new(), Accumulator::new()];
    for k in (0..sys.len()).filter(|&k| k != j) {
        let r = pair_distance(sys, j, k)?;
        let s = z[k] / (r * r * r);
        for l in 0..3 {
            acc[l].add(s * (x[j][l] - x[k][l]));
        }
    }
    Ok(ForceVector { index: j, force: acc.map(|a| z[j] * a.value()) })
}

pub fn direct_forces(sys: &ParticleSystem) -> Result<Vec<ForceVector>> {
    (0..sys.len()).into_par_iter().map(|j| direct_force(sys, j)).collect()
}

/// Backward-difference force on particle `j` from the long-range field.
///
/// Only the terms involving `j` change when it moves one cell down an axis:
/// `ΔÊ = ½ z_j Σ_{ν≠j} z_ν [φ(j,ν) - φ(j',ν) + φ(ν,j) - φ(ν,j')]`, where
/// `φ(a, b)` is the field at node `a` of a unit charge at node `b`. The
/// returned component is `-ΔÊ / h`.
pub fn force_fd(field: &WindowedCanonical, sys: &IndexedParticleSystem, j: usize) -> Result<ForceVector> {
    if field.nodes() != sys.nodes() || field.charges() != sys.charges() {
        return Err(Error::Shape("field was not assembled from this particle system".into()));
    }
    if j >= sys.len() {
        return Err(Error::Domain(format!("particle {j} out of range")));
    }
    let h = sys.grid().step();
    let nodes = sys.nodes();
    let z = sys.charges();
    let here = nodes[j];
    let mut force = [0.0; 3];
    for (l, f) in force.iter_mut().enumerate() {
        let mut moved = here;
        moved[l] = moved[l]
            .checked_sub(1)
            .ok_or_else(|| Error::Domain(format!("particle {j} cannot move below node 0")))?;
        // rejects boundary nodes and occupied targets
        sys.with_node(j, moved).map_err(|e| match e {
            Error::Resolution(msg) => Error::Separation(msg),
            other => other,
        })?;
        let mut acc = Accumulator::new();
        for nu in (0..nodes.len()).filter(|&nu| nu != j) {
            let other = nodes[nu];
            let d = field.kernel_value(other, here) - field.kernel_value(other, moved) + field.kernel_value(here, other)
                - field.kernel_value(moved, other);
            acc.add(z[nu] * d);
        }
        *f = -0.5 * z[j] * acc.value() / h;
    }
    Ok(ForceVector { index: j, force })
}

pub fn forces_fd(field: &WindowedCanonical, sys: &IndexedParticleSystem) -> Result<Vec<ForceVector>> {
    (0..sys.len()).into_par_iter().map(|j| force_fd(field, sys, j)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::Dense3;
    use crate::formats::testing::random_canonical;
    use crate::particles::{generate_lattice, generate_random_cluster, Box3, ChargeLaw};

    fn system(pos: Vec<[f64; 3]>, z: Vec<f64>) -> ParticleSystem {
        ParticleSystem::new(pos, z, Box3::new(10.0).unwrap()).unwrap()
    }

    #[test]
    fn two_charge_energies() {
        let s = system(vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![1.0, 1.0]);
        assert_eq!(direct_energy(&s).unwrap(), 1.0);
        let s = system(vec![[0.0; 3], [0.0, 2.0, 0.0]], vec![1.0, -1.0]);
        assert_eq!(direct_energy(&s).unwrap(), -0.5);
    }

    #[test]
    fn coincident_particles_rejected() {
        let s = system(vec![[1.0; 3], [1.0; 3]], vec![1.0, 1.0]);
        assert!(direct_energy(&s).is_err());
        assert!(direct_force(&s, 0).is_err());
    }

    #[test]
    fn lattice_energy_matches_pair_loop() {
        let sys = generate_lattice([8; 3], 1.0, ChargeLaw::RandomSign, 3, Box3::new(10.0).unwrap()).unwrap();
        let mut pairs = 0.0;
        let (x, z) = (sys.positions(), sys.charges());
        for a in 0..sys.len() {
            for b in a + 1..sys.len() {
                pairs += z[a] * z[b] / distance(&x[a], &x[b]);
            }
        }
        let e = direct_energy(&sys).unwrap();
        assert!((e - pairs).abs() < 1e-12 * pairs.abs().max(1.0));
    }

    #[test]
    fn direct_forces_obey_third_law() {
        let s = system(vec![[0.0; 3], [2.0, 0.0, 0.0]], vec![1.0, 1.0]);
        let f0 = direct_force(&s, 0).unwrap().force;
        let f1 = direct_force(&s, 1).unwrap().force;
        assert!(f0[0] < 0.0 && f1[0] > 0.0);
        assert!((f0[0] + f1[0]).abs() < 1e-15);
        assert!((f1[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn symmetric_triangle_centre_force_vanishes() {
        let r = 2.0;
        let mut pos = vec![[0.0; 3]];
        for k in 0..3 {
            let a = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
            pos.push([r * a.cos(), r * a.sin(), 0.0]);
        }
        let s = system(pos, vec![1.0, 1.0, 1.0, 1.0]);
        let f = direct_force(&s, 0).unwrap();
        assert!(f.norm() < 1e-14);
    }

    #[test]
    fn total_force_vanishes() {
        let sys = generate_random_cluster(50, Box3::new(5.0).unwrap(), 0.5, ChargeLaw::Uniform, 8).unwrap();
        let forces = direct_forces(&sys).unwrap();
        for l in 0..3 {
            let total = compensated_sum(forces.iter().map(|f| f.force[l]));
            assert!(total.abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_of_constant_and_linear() {
        let n = 8;
        let ones = vec![1.0; n];
        let c = CanonicalTensor::from_terms([n; 3], &[(2.0, [&ones, &ones, &ones])]).unwrap();
        for g in grad_canonical(&c, 0.5) {
            assert_eq!(g.to_dense().unwrap().max_abs(), 0.0);
        }
        let line: Vec<f64> = (0..n).map(|i| 3.0 * i as f64).collect();
        let c = CanonicalTensor::from_terms([n; 3], &[(1.0, [&line, &ones, &ones])]).unwrap();
        let g = grad_canonical(&c, 0.5)[0].to_dense().unwrap();
        for i in Dense3::indices([n; 3]) {
            assert!((g.get(i) - 6.0).abs() < 1e-13);
        }
    }

    #[test]
    fn gradient_is_the_dense_stencil() {
        let n = 24;
        let h = 0.3;
        let c = random_canonical([n; 3], 5, 11);
        let d = c.to_dense().unwrap();
        let grads = grad_canonical(&c, h);
        for (l, g) in grads.iter().enumerate() {
            let g = g.to_dense().unwrap();
            for i in Dense3::indices([n; 3]) {
                let step = |delta: isize| {
                    let mut m = i;
                    m[l] = (m[l] as isize + delta) as usize;
                    d.get(m)
                };
                let fd = match i[l] {
                    0 => (step(1) - step(0)) / h,
                    x if x == n - 1 => (step(0) - step(-1)) / h,
                    _ => (step(1) - step(-1)) / (2.0 * h),
                };
                assert!((g.get(i) - fd).abs() <= 1e-13 * d.max_abs() / h);
            }
        }
    }
}

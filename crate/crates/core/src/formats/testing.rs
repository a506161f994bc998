//! Random tensors for unit tests.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CanonicalTensor, TuckerTensor};

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_canonical(dims: [usize; 3], rank: usize, seed: u64) -> CanonicalTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let weights = (0..rank).map(|_| rng.gen_range(0.5..2.0)).collect();
    let factors = std::array::from_fn(|l| random_matrix(dims[l], rank, seed * 7 + l as u64));
    CanonicalTensor::new(weights, factors).unwrap().normalized()
}

pub fn random_positive_canonical(dims: [usize; 3], rank: usize, seed: u64) -> CanonicalTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = (0..rank).map(|_| rng.gen_range(0.5..2.0)).collect();
    let factors = std::array::from_fn(|l| DMatrix::from_fn(dims[l], rank, |_, _| rng.gen_range(0.1..1.0)));
    CanonicalTensor::new(weights, factors).unwrap().normalized()
}

pub fn random_orthonormal(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let m = random_matrix(rows, cols, seed);
    m.qr().q().columns(0, cols).into_owned()
}

pub fn random_tucker(dims: [usize; 3], ranks: [usize; 3], seed: u64) -> TuckerTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let core = (0..ranks.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let factors = std::array::from_fn(|l| random_orthonormal(dims[l], ranks[l], seed * 3 + l as u64));
    TuckerTensor::new(core, factors).unwrap()
}

//! Small dense 3-tensors used for materialisation in tests and diagnostics.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};

/// Largest mode size a dense tensor may have.
pub const DENSE_LIMIT: usize = 128;

static ALLOCATIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of dense tensors allocated so far in this process.
pub fn dense_allocations() -> usize {
    ALLOCATIONS.load(Ordering::Relaxed)
}

/// Row-major `n1 x n2 x n3` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Dense3 {
    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d > DENSE_LIMIT) {
            return Err(Error::Capacity(format!(
                "refusing to materialise a {dims:?} tensor (mode limit {DENSE_LIMIT})"
            )));
        }
        ALLOCATIONS.fetch_add(1, Ordering::Relaxed);
        Ok(Self { dims, data: vec![0.0; dims[0] * dims[1] * dims[2]] })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn offset(&self, i: [usize; 3]) -> usize {
        (i[0] * self.dims[1] + i[1]) * self.dims[2] + i[2]
    }

    #[inline]
    pub fn get(&self, i: [usize; 3]) -> f64 {
        self.data[self.offset(i)]
    }

    #[inline]
    pub fn get_mut(&mut self, i: [usize; 3]) -> &mut f64 {
        let o = self.offset(i);
        &mut self.data[o]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Dense3) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Dense3) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn add_assign(&mut self, other: &Dense3) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// All multi-indices in row-major order.
    pub fn indices(dims: [usize; 3]) -> impl Iterator<Item = [usize; 3]> {
        (0..dims[0]).flat_map(move |a| (0..dims[1]).flat_map(move |b| (0..dims[2]).map(move |c| [a, b, c])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_refuses_large_modes() {
        assert!(matches!(Dense3::zeros([129, 1, 1]), Err(Error::Capacity(_))));
        let before = dense_allocations();
        let t = Dense3::zeros([2, 3, 4]).unwrap();
        assert!(dense_allocations() > before);
        assert_eq!(t.offset([1, 2, 3]), 23);
    }
}

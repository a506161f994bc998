//! Tensor formats: canonical, Tucker, windowed canonical, CCT and RS.

pub mod canonical;
pub mod cct;
pub mod dense;
pub mod rs;
pub mod tucker;
pub mod windowed;

#[cfg(test)]
pub(crate) mod testing;

pub use canonical::CanonicalTensor;
pub use cct::{Cct, OverlapPolicy, DEFAULT_OVERLAP_CAP};
pub use dense::{dense_allocations, Dense3, DENSE_LIMIT};
pub use rs::{scalar_product_rs, storage_report, LongPart, RsMeta, RsTensor, StorageReport};
pub use tucker::TuckerTensor;
pub use windowed::WindowedCanonical;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Read access shared by all 3-tensor formats.
pub trait TensorView {
    fn dims(&self) -> [usize; 3];

    /// Entry at `i`; callers guarantee `i` is in range.
    fn entry(&self, i: [usize; 3]) -> f64;

    /// Dense copy, subject to the materialisation guard.
    fn to_dense(&self) -> Result<Dense3> {
        let dims = self.dims();
        let mut out = Dense3::zeros(dims)?;
        for i in Dense3::indices(dims) {
            *out.get_mut(i) = self.entry(i);
        }
        Ok(out)
    }
}

pub(crate) fn check_index(i: [usize; 3], shape: [usize; 3]) -> Result<()> {
    if (0..3).any(|l| i[l] >= shape[l]) {
        return Err(Error::IndexOutOfRange { index: i, shape });
    }
    Ok(())
}

/// Column `k` of a column-major matrix as a slice.
#[inline]
pub(crate) fn col(m: &DMatrix<f64>, k: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[k * n..(k + 1) * n]
}

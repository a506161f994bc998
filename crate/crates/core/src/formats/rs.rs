//! Range-separated tensors: a global low-rank long part plus a CCT short part.

use super::canonical::CanonicalTensor;
use super::cct::Cct;
use super::tucker::TuckerTensor;
use super::windowed::WindowedCanonical;
use super::{check_index, col, TensorView};
use crate::error::{Error, Result};
use crate::particles::Grid3;

/// Long-range component of an RS tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum LongPart {
    Canonical(CanonicalTensor),
    Tucker(TuckerTensor),
    /// Unreduced shift-and-window sum.
    Windowed(WindowedCanonical),
}

impl LongPart {
    pub fn kind(&self) -> &'static str {
        match self {
            LongPart::Canonical(_) => "canonical",
            LongPart::Tucker(_) => "tucker",
            LongPart::Windowed(_) => "windowed",
        }
    }

    /// Explicit canonical form; Tucker parts are not convertible here.
    pub fn as_canonical(&self) -> Result<std::borrow::Cow<'_, CanonicalTensor>> {
        match self {
            LongPart::Canonical(c) => Ok(std::borrow::Cow::Borrowed(c)),
            LongPart::Windowed(w) => Ok(std::borrow::Cow::Owned(w.to_canonical())),
            LongPart::Tucker(_) => Err(Error::Capability(
                "operation needs a canonical long part; convert the Tucker part first".into(),
            )),
        }
    }

    /// Separation ranks: canonical rank, or Tucker ranks.
    pub fn ranks(&self) -> Vec<usize> {
        match self {
            LongPart::Canonical(c) => vec![c.rank()],
            LongPart::Tucker(t) => t.ranks().to_vec(),
            LongPart::Windowed(w) => vec![w.rank()],
        }
    }
}

impl TensorView for LongPart {
    fn dims(&self) -> [usize; 3] {
        match self {
            LongPart::Canonical(c) => c.dims(),
            LongPart::Tucker(t) => t.dims(),
            LongPart::Windowed(w) => w.dims(),
        }
    }

    fn entry(&self, i: [usize; 3]) -> f64 {
        match self {
            LongPart::Canonical(c) => c.entry(i),
            LongPart::Tucker(t) => t.entry(i),
            LongPart::Windowed(w) => w.entry(i),
        }
    }

    fn to_dense(&self) -> Result<super::Dense3> {
        match self {
            LongPart::Canonical(c) => c.to_dense(),
            LongPart::Tucker(t) => t.to_dense(),
            LongPart::Windowed(w) => w.to_dense(),
        }
    }
}

/// Provenance carried with an RS tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsMeta {
    /// Number of quadrature terms in the long part.
    pub long_terms: usize,
    /// Number of quadrature terms in the short part.
    pub short_terms: usize,
    /// Long-range reference value at the origin (energy self-term).
    pub self_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsTensor {
    long: LongPart,
    short: Cct,
    grid: Grid3,
    meta: RsMeta,
}

impl RsTensor {
    pub fn new(long: LongPart, short: Cct, grid: Grid3, meta: RsMeta) -> Result<Self> {
        let dims = [grid.n(); 3];
        if long.dims() != dims || short.dims() != dims {
            return Err(Error::Shape(format!(
                "parts of shape {:?} and {:?} on a grid of size {}",
                long.dims(),
                short.dims(),
                grid.n()
            )));
        }
        Ok(Self { long, short, grid, meta })
    }

    pub fn long(&self) -> &LongPart {
        &self.long
    }

    pub fn short(&self) -> &Cct {
        &self.short
    }

    pub fn grid(&self) -> Grid3 {
        self.grid
    }

    pub fn meta(&self) -> RsMeta {
        self.meta
    }

    pub fn with_long(self, long: LongPart) -> Result<Self> {
        RsTensor::new(long, self.short, self.grid, self.meta)
    }

    pub fn eval(&self, i: [usize; 3]) -> Result<f64> {
        check_index(i, self.dims())?;
        Ok(self.entry(i))
    }
}

impl TensorView for RsTensor {
    fn dims(&self) -> [usize; 3] {
        [self.grid.n(); 3]
    }

    fn entry(&self, i: [usize; 3]) -> f64 {
        self.long.entry(i) + self.short.entry(i)
    }
}

/// `<long, copy nu of short>` with the long part canonical.
fn long_copy_inner(long: &CanonicalTensor, short: &Cct, nu: usize) -> f64 {
    let ranges: [(usize, usize, usize); 3] = std::array::from_fn(|l| short.window_range(nu, l));
    let local = short.local();
    let mut total = 0.0;
    for k in 0..long.rank() {
        for m in 0..local.rank() {
            let mut prod = long.weights()[k] * local.weights()[m];
            for (l, &(lo, hi, off)) in ranges.iter().enumerate() {
                let u = &long.column(l, k)[lo..hi];
                let v = &col(local.factor(l), m)[off..off + (hi - lo)];
                prod *= u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
            }
            total += prod;
        }
    }
    total
}

fn long_short_inner(long: &CanonicalTensor, short: &Cct) -> f64 {
    (0..short.centers().len())
        .map(|nu| short.weights()[nu] * long_copy_inner(long, short, nu))
        .sum()
}

/// Frobenius inner product of two RS tensors on the same grid and centres.
pub fn scalar_product_rs(a: &RsTensor, b: &RsTensor) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::Shape("RS tensors live on different grids".into()));
    }
    if a.short.centers() != b.short.centers() {
        return Err(Error::Shape("RS tensors have different centre sets".into()));
    }
    let la = a.long.as_canonical()?;
    let lb = b.long.as_canonical()?;
    let long_long = la.inner(&lb)?;
    let long_short = long_short_inner(&la, &b.short);
    let short_long = long_short_inner(&lb, &a.short);
    let reach = a.short.gamma() + b.short.gamma();
    let mut short_short = 0.0;
    if !a.short.is_empty() && !b.short.is_empty() {
        for nu in 0..a.short.centers().len() {
            for mu in b.short.centers_within(a.short.centers()[nu], reach) {
                short_short +=
                    a.short.weights()[nu] * b.short.weights()[mu] * a.short.copy_inner(nu, &b.short, mu);
            }
        }
    }
    Ok(long_long + long_short + short_long + short_short)
}

/// Float counts of an RS tensor.
///
/// `count` is the parametrisation size with weights folded into vectors,
/// which is what the storage bounds measure; `stored` additionally includes
/// the explicit weight arrays. The short-part bound uses windows of
/// `2γ + 1` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageReport {
    pub long_floats: usize,
    pub short_floats: usize,
    pub weight_floats: usize,
    pub count: usize,
    pub stored: usize,
    pub bound: usize,
}

pub fn storage_report(rs: &RsTensor) -> StorageReport {
    let n_max = rs.grid.n();
    let (long_floats, long_weights, long_bound) = match &rs.long {
        LongPart::Canonical(c) => {
            let r = c.rank();
            (c.dims().iter().map(|n| n * r).sum::<usize>(), r, 3 * r * n_max)
        }
        LongPart::Tucker(t) => {
            let [r1, r2, r3] = t.ranks();
            let dims = t.dims();
            let r = r1.max(r2).max(r3);
            (
                r1 * r2 * r3 + dims[0] * r1 + dims[1] * r2 + dims[2] * r3,
                0,
                r * r * r + 3 * r * n_max,
            )
        }
        LongPart::Windowed(w) => {
            let r = w.terms_per_particle();
            (w.profiles().len(), r, 3 * w.rank() * n_max)
        }
    };
    let short = &rs.short;
    let n_centres = short.centers().len();
    let (short_floats, short_weights, short_bound) = if short.is_empty() {
        (0, 0, 0)
    } else {
        let r0 = short.local().rank();
        let width = 2 * short.gamma() + 1;
        (3 * width * r0 + 4 * n_centres, r0, 4 * n_centres + 3 * r0 * width)
    };
    let count = long_floats + short_floats;
    StorageReport {
        long_floats,
        short_floats,
        weight_floats: long_weights + short_weights,
        count,
        stored: count + long_weights + short_weights,
        bound: long_bound + short_bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::cct::OverlapPolicy;
    use crate::formats::testing::{random_canonical, random_positive_canonical};
    use crate::particles::Box3;

    fn grid(n: usize) -> Grid3 {
        Grid3::new(n, Box3::new(1.0).unwrap()).unwrap()
    }

    fn meta() -> RsMeta {
        RsMeta { long_terms: 0, short_terms: 0, self_value: 0.0 }
    }

    fn random_rs(seed: u64, centers: &[[usize; 3]]) -> RsTensor {
        let long = random_canonical([32; 3], 3, seed);
        let local = random_positive_canonical([7; 3], 2, seed + 100);
        let weights = (0..centers.len()).map(|k| (k as f64 - 1.3) * (seed as f64 + 1.0)).collect();
        let short = Cct::new(local, 3, centers.to_vec(), weights, [32; 3], OverlapPolicy::Soft { cap: 8 }).unwrap();
        RsTensor::new(LongPart::Canonical(long), short, grid(32), meta()).unwrap()
    }

    #[test]
    fn single_rank_one_norm() {
        let v = vec![0.5; 4];
        let c = CanonicalTensor::from_terms([4; 3], &[(1.0, [&v, &v, &v])]).unwrap();
        let rs = RsTensor::new(LongPart::Canonical(c), Cct::empty([4; 3]), grid(4), meta()).unwrap();
        let s = scalar_product_rs(&rs, &rs).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_dense_inner_product() {
        let centers = [[3, 3, 3], [6, 4, 3], [20, 25, 30], [31, 0, 16]];
        let a = random_rs(1, &centers);
        let b = random_rs(2, &centers);
        let dense = a.to_dense().unwrap().dot(&b.to_dense().unwrap());
        let fast = scalar_product_rs(&a, &b).unwrap();
        assert!((dense - fast).abs() < 1e-12 * dense.abs().max(1.0), "{dense} vs {fast}");
        let sym = scalar_product_rs(&b, &a).unwrap();
        assert!((fast - sym).abs() < 1e-12 * fast.abs().max(1.0));
    }

    #[test]
    fn rejects_other_centres() {
        let a = random_rs(1, &[[3, 3, 3]]);
        let b = random_rs(1, &[[4, 3, 3]]);
        assert!(scalar_product_rs(&a, &b).is_err());
    }

    #[test]
    fn eval_sums_parts() {
        let a = random_rs(3, &[[3, 3, 3], [20, 20, 20]]);
        let i = [4, 2, 3];
        assert!((a.eval(i).unwrap() - a.long().entry(i) - a.short().entry(i)).abs() < 1e-15);
        let far = [12, 12, 12];
        assert_eq!(a.short().entry(far), 0.0);
        assert_eq!(a.eval(far).unwrap(), a.long().entry(far));
    }

    #[test]
    fn empty_storage() {
        let rs = RsTensor::new(
            LongPart::Canonical(CanonicalTensor::zero([4; 3])),
            Cct::empty([4; 3]),
            grid(4),
            meta(),
        )
        .unwrap();
        let rep = storage_report(&rs);
        assert_eq!(rep.count, 0);
        assert_eq!(rep.stored, 0);
    }
}

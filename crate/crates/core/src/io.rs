//! Little-endian binary container for reference and RS tensors.
//!
//! Layout: 8-byte magic, `u32` version, `u32` payload tag, then the payload.
//! Matrices are stored as `u64` rows, `u64` columns and column-major `f64`s.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::formats::{CanonicalTensor, Cct, LongPart, OverlapPolicy, RsMeta, RsTensor, TuckerTensor, WindowedCanonical};
use crate::kernel::{build_quadrature, EntryRule, RadialKernel, ReferenceCanonical};
use crate::particles::{Box3, Grid3};

pub const MAGIC: &[u8; 8] = b"RSTENSOR";
pub const VERSION: u32 = 1;

const TAG_REFERENCE: u32 = 1;
const TAG_RS: u32 = 2;

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }

    fn u64(&mut self, v: usize) -> Result<()> {
        Ok(self.inner.write_all(&(v as u64).to_le_bytes())?)
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.inner.write_all(&v.to_le_bytes())?)
    }

    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        self.u64(v.len())?;
        v.iter().try_for_each(|x| self.f64(*x))
    }

    fn matrix(&mut self, m: &DMatrix<f64>) -> Result<()> {
        self.u64(m.nrows())?;
        self.u64(m.ncols())?;
        m.as_slice().iter().try_for_each(|x| self.f64(*x))
    }

    fn nodes(&mut self, v: &[[usize; 3]]) -> Result<()> {
        self.u64(v.len())?;
        v.iter().flatten().try_for_each(|x| self.u64(*x))
    }

    fn grid(&mut self, g: Grid3) -> Result<()> {
        self.u64(g.n())?;
        self.f64(g.bbox().half_width())
    }

    fn canonical(&mut self, c: &CanonicalTensor) -> Result<()> {
        self.f64s(c.weights())?;
        c.factors().iter().try_for_each(|f| self.matrix(f))
    }
}

struct Reader<R: Read> {
    inner: R,
}

/// Upper bound on any stored length, to reject corrupt headers early.
const MAX_LEN: u64 = 1 << 34;

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("truncated container".into()),
            _ => Error::Io(e),
        })?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.bytes()?);
        if v > MAX_LEN {
            return Err(Error::Format(format!("implausible length {v}")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let len = self.u64()?;
        (0..len).map(|_| self.f64()).collect()
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let rows = self.u64()?;
        let cols = self.u64()?;
        let data = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_vec(rows, cols, data))
    }

    fn nodes(&mut self) -> Result<Vec<[usize; 3]>> {
        let len = self.u64()?;
        (0..len).map(|_| Ok([self.u64()?, self.u64()?, self.u64()?])).collect()
    }

    fn grid(&mut self) -> Result<Grid3> {
        let n = self.u64()?;
        let b = self.f64()?;
        Grid3::new(n, Box3::new(b)?)
    }

    fn canonical(&mut self) -> Result<CanonicalTensor> {
        let weights = self.f64s()?;
        let factors = [self.matrix()?, self.matrix()?, self.matrix()?];
        CanonicalTensor::new(weights, factors)
    }
}

fn header<W: Write>(w: &mut Writer<W>, tag: u32) -> Result<()> {
    w.inner.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(tag)
}

fn check_header<R: Read>(r: &mut Reader<R>, tag: u32) -> Result<()> {
    let magic: [u8; 8] = r.bytes()?;
    if &magic != MAGIC {
        return Err(Error::Format("not an RS tensor container".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("container version {version}, expected {VERSION}")));
    }
    let found = r.u32()?;
    if found != tag {
        return Err(Error::Format(format!("container holds payload {found}, expected {tag}")));
    }
    Ok(())
}

pub fn write_reference<W: Write>(out: W, reference: &ReferenceCanonical) -> Result<()> {
    let mut w = Writer { inner: out };
    header(&mut w, TAG_REFERENCE)?;
    let rule = reference.rule();
    let (code, lambda) = rule.kernel().code();
    w.u32(code)?;
    w.f64(lambda)?;
    w.u64(rule.order())?;
    w.f64(rule.c0())?;
    w.f64(rule.min_radius())?;
    w.grid(reference.grid())?;
    w.u32(reference.is_doubled() as u32)?;
    w.u32(match reference.entry_rule() {
        EntryRule::CellAverage => 0,
        EntryRule::Collocation => 1,
    })?;
    match reference.split_index() {
        Some(s) => {
            w.u32(1)?;
            w.u64(s)?;
        }
        None => {
            w.u32(0)?;
            w.u64(0)?;
        }
    }
    w.canonical(reference.tensor())?;
    Ok(w.inner.flush()?)
}

pub fn read_reference<R: Read>(input: R) -> Result<ReferenceCanonical> {
    let mut r = Reader { inner: input };
    check_header(&mut r, TAG_REFERENCE)?;
    let code = r.u32()?;
    let lambda = r.f64()?;
    let kernel = RadialKernel::from_code(code, lambda)?;
    let order = r.u64()?;
    let c0 = r.f64()?;
    let min_radius = r.f64()?;
    let grid = r.grid()?;
    let doubled = r.u32()? != 0;
    let entry_rule = match r.u32()? {
        0 => EntryRule::CellAverage,
        1 => EntryRule::Collocation,
        other => return Err(Error::Format(format!("unknown entry rule {other}"))),
    };
    let has_split = r.u32()? != 0;
    let split = r.u64()?;
    let tensor = r.canonical()?;
    let rule = build_quadrature(kernel, order, c0, min_radius)?;
    ReferenceCanonical::from_parts(tensor, rule, grid, doubled, entry_rule, has_split.then_some(split))
}

pub fn write_rs<W: Write>(out: W, rs: &RsTensor) -> Result<()> {
    let mut w = Writer { inner: out };
    header(&mut w, TAG_RS)?;
    w.grid(rs.grid())?;
    let meta = rs.meta();
    w.u64(meta.long_terms)?;
    w.u64(meta.short_terms)?;
    w.f64(meta.self_value)?;
    match rs.long() {
        LongPart::Canonical(c) => {
            w.u32(0)?;
            w.canonical(c)?;
        }
        LongPart::Tucker(t) => {
            w.u32(1)?;
            for r in t.ranks() {
                w.u64(r)?;
            }
            w.f64s(t.core())?;
            t.factors().iter().try_for_each(|f| w.matrix(f))?;
        }
        LongPart::Windowed(v) => {
            w.u32(2)?;
            w.u64(v.n())?;
            w.matrix(v.profiles())?;
            w.f64s(v.profile_weights())?;
            w.nodes(v.nodes())?;
            w.f64s(v.charges())?;
        }
    }
    let short = rs.short();
    match short.policy() {
        OverlapPolicy::Strict => {
            w.u32(0)?;
            w.u64(0)?;
        }
        OverlapPolicy::Soft { cap } => {
            w.u32(1)?;
            w.u64(cap)?;
        }
    }
    w.u64(short.gamma())?;
    w.canonical(short.local())?;
    w.nodes(short.centers())?;
    w.f64s(short.weights())?;
    Ok(w.inner.flush()?)
}

pub fn read_rs<R: Read>(input: R) -> Result<RsTensor> {
    let mut r = Reader { inner: input };
    check_header(&mut r, TAG_RS)?;
    let grid = r.grid()?;
    let meta = RsMeta { long_terms: r.u64()?, short_terms: r.u64()?, self_value: r.f64()? };
    let long = match r.u32()? {
        0 => LongPart::Canonical(r.canonical()?),
        1 => {
            let _ranks = [r.u64()?, r.u64()?, r.u64()?];
            let core = r.f64s()?;
            let factors = [r.matrix()?, r.matrix()?, r.matrix()?];
            LongPart::Tucker(TuckerTensor::new(core, factors)?)
        }
        2 => {
            let n = r.u64()?;
            let profiles = r.matrix()?;
            let weights = r.f64s()?;
            let nodes = r.nodes()?;
            let charges = r.f64s()?;
            LongPart::Windowed(WindowedCanonical::new(n, profiles, weights, nodes, charges)?)
        }
        other => return Err(Error::Format(format!("unknown long-part kind {other}"))),
    };
    let policy = match (r.u32()?, r.u64()?) {
        (0, _) => OverlapPolicy::Strict,
        (1, cap) => OverlapPolicy::Soft { cap },
        (other, _) => return Err(Error::Format(format!("unknown overlap policy {other}"))),
    };
    let gamma = r.u64()?;
    let local = r.canonical()?;
    let centers = r.nodes()?;
    let weights = r.f64s()?;
    let dims = [grid.n(); 3];
    let short = if centers.is_empty() || local.rank() == 0 {
        Cct::empty(dims)
    } else {
        Cct::new(local, gamma, centers, weights, dims, policy)?
    };
    RsTensor::new(long, short, grid, meta)
}

pub fn save_rs(path: impl AsRef<Path>, rs: &RsTensor) -> Result<()> {
    write_rs(std::io::BufWriter::new(std::fs::File::create(path)?), rs)
}

pub fn load_rs(path: impl AsRef<Path>) -> Result<RsTensor> {
    read_rs(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn save_reference(path: impl AsRef<Path>, reference: &ReferenceCanonical) -> Result<()> {
    write_reference(std::io::BufWriter::new(std::fs::File::create(path)?), reference)
}

pub fn load_reference(path: impl AsRef<Path>) -> Result<ReferenceCanonical> {
    read_reference(std::io::BufReader::new(std::fs::File::open(path)?))
}

//! `key = value` settings: config file first, command-line flags on top.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rs_tensor::assembly::{AssemblyConfig, LongFormat};
use rs_tensor::formats::{OverlapPolicy, DEFAULT_OVERLAP_CAP};
use rs_tensor::kernel::{EntryRule, RadialKernel, SplitCriterion};
use rs_tensor::particles::{
    generate_lattice, generate_random_cluster, load_particles, Box3, ChargeLaw, Grid3, ParticleSystem,
};
use rs_tensor::rankred::{ReductionConfig, Truncation};
use rs_tensor::{Error, Result};

/// Every key accepted in a config file; each has a flag of the same name.
pub const KEYS: &[&str] = &[
    "n", "b", "M", "C0", "kernel", "entry", "sigma", "delta", "criterion", "Rl", "gamma", "overlap", "eps", "ranks",
    "sweeps", "eps_c2t", "eps_t2c", "format", "reduce", "threshold", "expansion_tol", "particles", "lattice", "spacing",
    "N", "min_sep", "charges", "seed", "probes", "r_min", "r_max", "samples", "tol", "max_iter",
];

pub const DEFAULT_N: usize = 1024;
pub const DEFAULT_B: f64 = 20.0;
pub const DEFAULT_SPACING: f64 = 4.0;
pub const DEFAULT_MIN_SEP: f64 = 0.8;

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse_file(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", idx + 1)))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key `{key}`", idx + 1)));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse_file(&text)
            }
            None => Ok(Self::default()),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        debug_assert!(KEYS.contains(&key));
        self.values.insert(key.to_string(), value.into());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("invalid value '{v}' for `{key}`: {e}"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<T>()
                            .map_err(|e| Error::Config(format!("invalid entry '{x}' in `{key}`: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "yes" | "1" | "on") => Ok(true),
            Some("false" | "no" | "0" | "off") => Ok(false),
            Some(v) => Err(Error::Config(format!("invalid value '{v}' for `{key}`: expected true or false"))),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.get_or("seed", 1)
    }

    pub fn bbox(&self) -> Result<Box3> {
        Box3::new(self.get_or("b", DEFAULT_B)?)
    }

    pub fn kernel(&self, default: RadialKernel) -> Result<RadialKernel> {
        self.get_or("kernel", default)
    }

    /// `None` means the order is chosen from the grid.
    pub fn order(&self) -> Result<Option<usize>> {
        match self.raw("M") {
            None | Some("auto") => Ok(None),
            Some(_) => self.get("M"),
        }
    }

    pub fn overlap(&self) -> Result<OverlapPolicy> {
        match self.raw("overlap") {
            None | Some("strict") => Ok(OverlapPolicy::Strict),
            Some("soft") => Ok(OverlapPolicy::Soft { cap: DEFAULT_OVERLAP_CAP }),
            Some(v) => match v.strip_prefix("soft:").map(str::parse::<usize>) {
                Some(Ok(cap)) if cap > 0 => Ok(OverlapPolicy::Soft { cap }),
                _ => Err(Error::Config(format!("invalid value '{v}' for `overlap`: expected strict, soft or soft:<cap>"))),
            },
        }
    }

    pub fn reduction(&self) -> Result<ReductionConfig> {
        let mut cfg = match (self.list::<usize>("ranks")?, self.get::<f64>("eps")?) {
            (Some(_), Some(_)) => return Err(Error::Config("set only one of `ranks` and `eps`".into())),
            (Some(r), None) => {
                let ranks: [usize; 3] = r
                    .try_into()
                    .map_err(|_| Error::Config("`ranks` needs three comma-separated values".into()))?;
                ReductionConfig::with_ranks(ranks)
            }
            (None, Some(eps)) => ReductionConfig::with_tolerance(eps),
            (None, None) => ReductionConfig::default(),
        };
        cfg.max_sweeps = self.get_or("sweeps", cfg.max_sweeps)?;
        cfg.eps_c2t = self.get_or("eps_c2t", cfg.eps_c2t)?;
        cfg.eps_t2c = self.get_or("eps_t2c", cfg.eps_t2c)?;
        if let Truncation::Tolerance(eps) = cfg.truncation {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::Config(format!("`eps` must lie in (0, 1), got {eps}")));
            }
        }
        Ok(cfg)
    }

    pub fn assembly(&self, grid: Grid3) -> Result<AssemblyConfig> {
        let mut cfg = AssemblyConfig::new(grid);
        cfg.kernel = self.kernel(RadialKernel::Newton)?;
        cfg.order = self.order()?;
        cfg.c0 = self.get_or("C0", cfg.c0)?;
        cfg.expansion_tol = self.get_or("expansion_tol", cfg.expansion_tol)?;
        cfg.entry_rule = self.get_or::<EntryRule>("entry", cfg.entry_rule)?;
        cfg.sigma = self.get("sigma")?;
        cfg.delta = self.get_or("delta", cfg.delta)?;
        cfg.criterion = self.get_or::<SplitCriterion>("criterion", cfg.criterion)?;
        cfg.long_terms = self.get("Rl")?;
        cfg.gamma = self.get("gamma")?;
        cfg.overlap = self.overlap()?;
        cfg.reduction = self.reduction()?;
        cfg.long_format = self.get_or::<LongFormat>("format", cfg.long_format)?;
        cfg.reduce = self.bool_or("reduce", cfg.reduce)?;
        cfg.reduction_threshold = self.get_or("threshold", cfg.reduction_threshold)?;
        if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
            return Err(Error::Config(format!("`delta` must lie in (0, 1), got {}", cfg.delta)));
        }
        Ok(cfg)
    }

    /// The particle system: a file, a lattice or a random cluster.
    pub fn system(&self) -> Result<ParticleSystem> {
        let sources = ["particles", "lattice", "N"].iter().filter(|k| self.raw(k).is_some()).count();
        if sources > 1 {
            return Err(Error::Config("set only one of `particles`, `lattice` and `N`".into()));
        }
        if let Some(path) = self.raw("particles") {
            return load_particles(path).map_err(|e| match e {
                Error::Io(io) => Error::Config(format!("cannot read particles {path}: {io}")),
                other => other,
            });
        }
        let law: ChargeLaw = self.get_or("charges", ChargeLaw::RandomSign)?;
        let seed = self.seed()?;
        let bbox = self.bbox()?;
        if let Some(spec) = self.raw("lattice") {
            let dims = parse_dims(spec)?;
            return generate_lattice(dims, self.get_or("spacing", DEFAULT_SPACING)?, law, seed, bbox);
        }
        if self.raw("N").is_some() {
            let count: usize = self.get_or("N", 0)?;
            return generate_random_cluster(count, bbox, self.get_or("min_sep", DEFAULT_MIN_SEP)?, law, seed);
        }
        Err(Error::Config("no particle system: set `particles`, `lattice` or `N`".into()))
    }

    pub fn grid_for(&self, bbox: Box3) -> Result<Grid3> {
        Grid3::new(self.get_or("n", DEFAULT_N)?, bbox)
    }
}

/// `8` or `8x6x4`.
fn parse_dims(spec: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = spec.split('x').collect();
    let parse = |s: &str| {
        s.trim().parse::<usize>().map_err(|_| Error::Config(format!("invalid value '{spec}' for `lattice`")))
    };
    match parts.as_slice() {
        [k] => Ok([parse(k)?; 3]),
        [a, b, c] => Ok([parse(a)?, parse(b)?, parse(c)?]),
        _ => Err(Error::Config(format!("invalid value '{spec}' for `lattice`: expected k or kxkxk"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_parsing() {
        let s = Settings::parse_file("# comment\nn = 64\n\nb=4 # trailing\nM = auto\n").unwrap();
        assert_eq!(s.get::<usize>("n").unwrap(), Some(64));
        assert_eq!(s.get::<f64>("b").unwrap(), Some(4.0));
        assert_eq!(s.order().unwrap(), None);
        assert!(Settings::parse_file("bogus = 1").is_err());
        assert!(Settings::parse_file("n 64").is_err());
    }

    #[test]
    fn typed_errors_name_the_key() {
        let s = Settings::parse_file("n = lots").unwrap();
        let err = s.get::<usize>("n").unwrap_err().to_string();
        assert!(err.contains("`n`"), "{err}");
    }

    #[test]
    fn overlap_and_dims() {
        let mut s = Settings::default();
        assert_eq!(s.overlap().unwrap(), OverlapPolicy::Strict);
        s.set("overlap", "soft:12");
        assert_eq!(s.overlap().unwrap(), OverlapPolicy::Soft { cap: 12 });
        s.set("overlap", "loose");
        assert!(s.overlap().is_err());
        assert_eq!(parse_dims("3x4x5").unwrap(), [3, 4, 5]);
        assert_eq!(parse_dims("8").unwrap(), [8; 3]);
        assert!(parse_dims("3x4").is_err());
    }

    #[test]
    fn ranks_and_eps_exclusive() {
        let mut s = Settings::default();
        s.set("ranks", "3,4,5");
        assert_eq!(s.reduction().unwrap().truncation, Truncation::Ranks([3, 4, 5]));
        s.set("eps", "1e-4");
        assert!(s.reduction().is_err());
    }
}

//! Deterministic JSON and CSV rendering with 17 significant digits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rs_tensor::{Error, Result};

/// Float with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone)]
pub enum Json {
    Num(f64),
    Int(i64),
    Str(String),
    Bool(bool),
    Arr(Vec<Json>),
    Obj(Obj),
    Null,
}

impl From<f64> for Json {
    fn from(x: f64) -> Self {
        Json::Num(x)
    }
}

impl From<usize> for Json {
    fn from(x: usize) -> Self {
        Json::Int(x as i64)
    }
}

impl From<bool> for Json {
    fn from(x: bool) -> Self {
        Json::Bool(x)
    }
}

impl From<&str> for Json {
    fn from(x: &str) -> Self {
        Json::Str(x.to_string())
    }
}

impl From<String> for Json {
    fn from(x: String) -> Self {
        Json::Str(x)
    }
}

impl<T: Into<Json>> From<Option<T>> for Json {
    fn from(x: Option<T>) -> Self {
        x.map_or(Json::Null, Into::into)
    }
}

impl<T: Into<Json>> From<Vec<T>> for Json {
    fn from(x: Vec<T>) -> Self {
        Json::Arr(x.into_iter().map(Into::into).collect())
    }
}

impl From<Obj> for Json {
    fn from(x: Obj) -> Self {
        Json::Obj(x)
    }
}

/// Object with keys kept in insertion order.
#[derive(Debug, Clone, Default)]
pub struct Obj(Vec<(String, Json)>);

impl Obj {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl Into<Json>) -> Self {
        self.0.push((key.to_string(), value.into()));
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        write_obj(&mut out, self, 0);
        out.push('\n');
        out
    }

    /// Single-line rendering for the run log.
    pub fn line(&self) -> String {
        let mut out = String::new();
        write_flat(&mut out, &Json::Obj(self.clone()));
        out.push('\n');
        out
    }
}

fn write_flat(out: &mut String, v: &Json) {
    match v {
        Json::Arr(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_flat(out, item);
            }
            out.push(']');
        }
        Json::Obj(o) => {
            out.push('{');
            for (i, (k, v)) in o.0.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&escape(k));
                out.push(':');
                write_flat(out, v);
            }
            out.push('}');
        }
        scalar => write_value(out, scalar, 0),
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn write_value(out: &mut String, v: &Json, depth: usize) {
    match v {
        Json::Num(x) if x.is_finite() => out.push_str(&num(*x)),
        Json::Num(_) | Json::Null => out.push_str("null"),
        Json::Int(i) => out.push_str(&i.to_string()),
        Json::Str(s) => out.push_str(&escape(s)),
        Json::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Json::Arr(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(out, item, depth + 1);
            }
            out.push(']');
        }
        Json::Obj(o) => write_obj(out, o, depth),
    }
}

fn write_obj(out: &mut String, o: &Obj, depth: usize) {
    if o.0.is_empty() {
        out.push_str("{}");
        return;
    }
    let pad = "  ".repeat(depth + 1);
    out.push_str("{\n");
    for (i, (k, v)) in o.0.iter().enumerate() {
        out.push_str(&pad);
        out.push_str(&escape(k));
        out.push_str(": ");
        write_value(out, v, depth + 1);
        if i + 1 < o.0.len() {
            out.push(',');
        }
        out.push('\n');
    }
    out.push_str(&"  ".repeat(depth));
    out.push('}');
}

/// Output directory plus the JSON-lines run log. The log carries timings,
/// so it is the one file that differs between identical runs.
pub struct Sink {
    dir: PathBuf,
    log: String,
}

impl Sink {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), log: String::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, content: &str) -> Result<()> {
        std::fs::write(self.path(name), content)?;
        log::info!("wrote {}", self.path(name).display());
        Ok(())
    }

    pub fn record(&mut self, event: &str, fields: Obj) {
        let mut line = Obj::new().with("event", event);
        line.0.extend(fields.0);
        self.log.push_str(&line.line());
    }

    pub fn time(&mut self, stage: &str, seconds: f64) {
        self.record("timing", Obj::new().with("stage", stage).with("seconds", seconds));
    }

    pub fn finish(self) -> Result<()> {
        self.write("run.jsonl", &self.log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_nested_objects() {
        let o = Obj::new()
            .with("a", 1.5)
            .with("b", vec![1usize, 2])
            .with("c", Obj::new().with("d", "x\"y"))
            .with("e", f64::NAN)
            .with("f", None::<f64>);
        let s = o.render();
        assert!(s.contains("\"a\": 1.5000000000000000e0"));
        assert!(s.contains("\"b\": [1, 2]"));
        assert!(s.contains("\"d\": \"x\\\"y\""));
        assert!(s.contains("\"e\": null"));
        assert!(s.contains("\"f\": null"));
    }

    #[test]
    fn log_lines_are_flat() {
        let line = Obj::new().with("a", vec![1usize]).with("b", Obj::new().with("c", true)).line();
        assert_eq!(line, "{\"a\":[1],\"b\":{\"c\":true}}\n");
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(0.1).parse::<f64>().unwrap(), 0.1);
    }
}

//! Artifact files and run reports. Every file carries the config hash and
//! the seed it belongs to (`all` for cross-seed aggregates).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ipslab::render::RenderMeta;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl Stamp {
    pub fn seed_label(&self) -> String {
        self.seed.map_or_else(|| "all".to_string(), |s| s.to_string())
    }

    pub fn csv_preamble(&self) -> String {
        format!("# config_hash={}\n# seed={}\n", self.config_hash, self.seed_label())
    }

    pub fn render_meta(&self, title: impl Into<String>) -> RenderMeta {
        RenderMeta { title: title.into(), config_hash: self.config_hash.clone(), seed: self.seed }
    }
}

/// Writes under one directory and remembers what it wrote.
#[derive(Debug)]
pub struct Output {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Output {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.written
    }

    fn put(&mut self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// `body` is the CSV proper, header line first.
    pub fn csv(&mut self, name: &str, stamp: &Stamp, body: &str) -> Result<PathBuf> {
        self.put(name, &format!("{}{body}", stamp.csv_preamble()))
    }

    /// Objects get `config_hash` and `seed` keys; anything else is wrapped.
    pub fn json<T: Serialize>(&mut self, name: &str, stamp: &Stamp, value: &T) -> Result<PathBuf> {
        let mut v = serde_json::to_value(value)?;
        if !v.is_object() {
            v = serde_json::json!({ "value": v });
        }
        let map = v.as_object_mut().expect("object");
        map.insert("config_hash".into(), Value::String(stamp.config_hash.clone()));
        map.insert("seed".into(), stamp.seed.map_or(Value::String("all".into()), Value::from));
        self.put(name, &format!("{}\n", serde_json::to_string_pretty(&v)?))
    }

    /// SVG text produced by `ipslab::render`, which stamps its own header.
    pub fn svg(&mut self, name: &str, svg: &str) -> Result<PathBuf> {
        self.put(name, svg)
    }
}

/// Builds a CSV body from a header and rows.
pub fn csv_body<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// Shortest round-trip formatting for floats in artifacts.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    pub fn line(&self) -> String {
        format!("[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub experiment: String,
    pub config_hash: String,
    pub dry_run: bool,
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

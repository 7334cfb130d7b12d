//! Results directory: stamped CSV/JSON/SVG files and the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of the configuration text.
pub fn config_hash(text: &str) -> String {
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

/// Shortest round-trip decimal; non-finite values become empty cells.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

pub struct OutDir {
    pub dir: PathBuf,
    pub hash: String,
    files: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path, hash: &str) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), hash: hash.to_string(), files: Vec::new() })
    }

    fn stamp_line(&self) -> String {
        format!("mrsle {VERSION} config {}", self.hash)
    }

    fn write(&mut self, name: &str, body: &[u8]) -> Result<(), CliError> {
        let p = self.dir.join(name);
        fs::write(&p, body).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// CSV with a `#` comment line carrying version and config hash.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
        for r in rows {
            w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
        }
        let body = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        let mut out = format!("# {}\n", self.stamp_line()).into_bytes();
        out.extend_from_slice(&body);
        self.write(name, &out)
    }

    /// JSON object with `tool_version` and `config_hash` added.
    pub fn json(&mut self, name: &str, value: Value) -> Result<(), CliError> {
        let v = self.stamped(value);
        let mut s = serde_json::to_string_pretty(&v).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn svg(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let s = body.replacen("<svg ", &format!("<!-- {} -->\n<svg ", self.stamp_line()), 1);
        self.write(name, s.as_bytes())
    }

    fn stamped(&self, value: Value) -> Value {
        let mut m = Map::new();
        m.insert("tool_version".into(), json!(VERSION));
        m.insert("config_hash".into(), json!(self.hash));
        match value {
            Value::Object(o) => m.extend(o),
            other => {
                m.insert("data".into(), other);
            }
        }
        Value::Object(m)
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(mut self, experiment: &str, seed: u64, summary: Value, failures: &[String]) -> Result<PathBuf, CliError> {
        let files = self.files.clone();
        let v = json!({
            "experiment": experiment,
            "seed": seed,
            "files": files,
            "passed": failures.is_empty(),
            "failures": failures,
            "summary": summary,
        });
        self.json("manifest.json", v)?;
        Ok(self.dir.join("manifest.json"))
    }

    /// Dump written before a numerical abort.
    pub fn diagnostic(&mut self, experiment: &str, message: &str) -> PathBuf {
        let v = json!({ "experiment": experiment, "error": message });
        let _ = self.json("diagnostic.json", v);
        self.dir.join("diagnostic.json")
    }
}

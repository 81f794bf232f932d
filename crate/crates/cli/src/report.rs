use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// A float with 17 significant digits; `inf`, `-inf`, `nan` spelled out.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Writes a header and rows as CSV.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn file_digest(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Per-run record of what was run and what it produced.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_digest: String,
    pub config: serde_json::Value,
    pub summary: BTreeMap<String, serde_json::Value>,
    /// Output file name to SHA-256.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config_digest: String, config: serde_json::Value) -> Self {
        Manifest {
            command: command.into(),
            seed,
            config_digest,
            config,
            summary: BTreeMap::new(),
            files: BTreeMap::new(),
        }
    }

    pub fn note<T: Serialize>(&mut self, key: &str, value: T) {
        self.summary
            .insert(key.into(), serde_json::to_value(value).expect("summary value serializes"));
    }

    pub fn add_file(&mut self, dir: &Path, name: &str) -> anyhow::Result<()> {
        self.files.insert(name.into(), file_digest(&dir.join(name))?);
        Ok(())
    }

    pub fn write(&self, dir: &Path, name: &str) -> anyhow::Result<()> {
        write_json(&dir.join(name), self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_opt(None), "");
    }
}

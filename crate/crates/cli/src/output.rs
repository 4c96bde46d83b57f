//! CSV and JSON emission.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Seventeen significant digits: enough to round-trip any `f64`.
pub fn float(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.16e}")
    }
}

pub fn opt_float(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

/// A CSV table whose rows all end with the config hash.
pub struct Table {
    writer: csv::Writer<fs::File>,
    hash: String,
    path: PathBuf,
}

impl Table {
    pub fn create(dir: &Path, name: &str, header: &[String], hash: &str) -> Result<Self> {
        let path = dir.join(name);
        let mut writer = csv::Writer::from_path(&path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut cols = header.to_vec();
        cols.push("config_hash".into());
        writer.write_record(&cols)?;
        Ok(Table {
            writer,
            hash: hash.to_string(),
            path,
        })
    }

    pub fn row(&mut self, mut fields: Vec<String>) -> Result<()> {
        fields.push(self.hash.clone());
        self.writer.write_record(&fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.writer.flush()?;
        Ok(self.path)
    }
}

pub fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

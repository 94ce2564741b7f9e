//! `report.json` structure and CSV writers.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// An inequality `lhs <= rhs`, tagged with the inequality it instantiates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pair {
    pub anchor: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub pass: bool,
}

impl Pair {
    /// Passes when `lhs <= rhs (1 + tol)`; `ratio = 0` when both sides vanish.
    pub fn new(anchor: impl Into<String>, lhs: f64, rhs: f64, tol: f64) -> Self {
        let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
        Self {
            anchor: anchor.into(),
            lhs,
            rhs,
            ratio,
            pass: lhs <= rhs * (1.0 + tol),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage {
    pub name: String,
    pub config_hash: String,
    pub pass: bool,
    pub summary: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub config_hash: String,
    pub stages: Vec<Stage>,
    pub pairs: Vec<Pair>,
    pub defects: BTreeMap<String, f64>,
}

impl PipelineReport {
    pub fn new(config_hash: String) -> Self {
        Self {
            config_hash,
            stages: Vec::new(),
            pairs: Vec::new(),
            defects: BTreeMap::new(),
        }
    }

    pub fn push_stage(&mut self, name: &str, pass: bool, summary: impl Serialize) -> Result<()> {
        let summary = serde_json::to_value(summary).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        self.stages.push(Stage {
            name: name.to_string(),
            config_hash: self.config_hash.clone(),
            pass,
            summary,
        });
        Ok(())
    }

    pub fn defect(&mut self, name: &str, value: f64) {
        self.defects.insert(name.to_string(), value);
    }

    pub fn stage(&self, name: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn pass(&self) -> bool {
        self.pairs.iter().all(|p| p.pass) && self.stages.iter().all(|s| s.pass)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(std::io::Error::other(e)))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json()? + "\n")?;
        Ok(())
    }
}

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

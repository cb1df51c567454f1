//! Report files: `report.json` and `distances.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{ConvergenceReport, DistanceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }

    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
}

pub const CSV_HEADER: &str = "n,t_n,eta_n,w1,w1_se,tv";

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Distance series as CSV; numbers use the shortest round-trip decimal form.
pub fn distances_csv(series: &[DistanceRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in series {
        let tv = r.tv.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.n, r.t_n, r.eta_n, r.w1, r.w1_se, tv
        )
        .unwrap();
    }
    out
}

/// Writes `report.json` and/or `distances.csv` into `dir`.
pub fn emit_report(report: &ConvergenceReport, dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    if format.json() {
        written.push(write_json(dir, "report.json", report)?);
    }
    if format.csv() {
        let path = dir.join("distances.csv");
        fs::write(&path, distances_csv(&report.series)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn load_convergence_report(path: &Path) -> Result<ConvergenceReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

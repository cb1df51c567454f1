//! Ensemble files. The binary layout is little-endian throughout:
//!
//! ```text
//! magic "TSDE" | u32 version = 1 | u32 d | u64 M | M·d f64 samples, row-major
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use tamed_sde_core::PathEnsemble;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TSDE";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

pub fn encode(e: &PathEnsemble) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * e.samples().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(e.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(e.len() as u64).to_le_bytes());
    for v in e.samples() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<PathEnsemble> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing TSDE header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let m = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let expected = d
        .checked_mul(m)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| bad("header sizes overflow"))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(bad(&format!(
            "expected {expected} payload bytes, found {}",
            body.len()
        )));
    }
    let samples = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    PathEnsemble::from_samples(d, samples).map_err(|e| bad(&e.to_string()))
}

pub fn write_binary(path: &Path, e: &PathEnsemble) -> Result<()> {
    fs::write(path, encode(e)).map_err(|err| Error::io(path, err))
}

pub fn read_binary(path: &Path) -> Result<PathEnsemble> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// One row per sample with header `x0,x1,…`.
pub fn write_csv(path: &Path, e: &PathEnsemble) -> Result<()> {
    let file = fs::File::create(path).map_err(|err| Error::io(path, err))?;
    let mut w = BufWriter::new(file);
    let header: Vec<String> = (0..e.dim()).map(|i| format!("x{i}")).collect();
    let io = |err| Error::io(path, err);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for x in e.iter() {
        let row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_csv(path: &Path) -> Result<PathEnsemble> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    let d = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .split(',')
        .count();
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: Vec<&str> = line.split(',').collect();
        if row.len() != d {
            return Err(bad(format!(
                "row {} has {} fields, expected {d}",
                i + 2,
                row.len()
            )));
        }
        for f in row {
            samples.push(
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("row {}: {e}", i + 2)))?,
            );
        }
    }
    PathEnsemble::from_samples(d, samples).map_err(|e| bad(e.to_string()))
}

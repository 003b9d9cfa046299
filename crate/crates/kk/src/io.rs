//! Artifact formats: CSV tables, KKMC1 sample files, JSON manifests.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use kinetic_core::montecarlo::SampleBatch;

use crate::KkError;

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Column names `{prefix}_1..{prefix}_n`.
pub fn columns(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

/// Writes a header row and records as RFC-4180 CSV.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), KkError> {
    let err = |e: csv::Error| KkError::io(path, e.into());
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| KkError::io(path, e))
}

pub const MAGIC: &[u8; 5] = b"KKMC1";

/// Header fields of a KKMC1 file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleHeader {
    pub d: u64,
    pub npaths: u64,
    pub seed: u64,
    pub steps: u64,
}

pub fn write_samples(path: &Path, batch: &SampleBatch) -> Result<(), KkError> {
    let io = |e| KkError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    for v in [batch.d as u64, batch.len() as u64, batch.seed, batch.steps as u64] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for v in &batch.samples {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_samples(path: &Path) -> Result<(SampleHeader, Vec<f64>), KkError> {
    let io = |e| KkError::io(path, e);
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io)?).read_to_end(&mut bytes).map_err(io)?;
    let bad = |m: &str| KkError::validation(path.display().to_string(), m.to_string());
    if bytes.len() < 37 || &bytes[..5] != MAGIC {
        return Err(bad("not a KKMC1 file"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[5 + 8 * i..13 + 8 * i].try_into().unwrap());
    let h = SampleHeader { d: word(0), npaths: word(1), seed: word(2), steps: word(3) };
    let body = &bytes[37..];
    let expect = (2 * h.d).checked_mul(h.npaths).and_then(|n| n.checked_mul(8));
    if expect != Some(body.len() as u64) {
        return Err(bad("body length does not match header"));
    }
    let samples = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((h, samples))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), KkError> {
    let text = serde_json::to_string_pretty(value).expect("json values always serialize");
    std::fs::write(path, text + "\n").map_err(|e| KkError::io(path, e))
}

/// JSON number, or `null` for non-finite values.
pub fn jnum(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v).map_or(serde_json::Value::Null, serde_json::Value::Number)
}

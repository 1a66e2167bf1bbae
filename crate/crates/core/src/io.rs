//! On-disk formats.
//!
//! Field snapshot: a 64-byte ASCII header `ANCHORF1 <dims> <n0> <n1> <n2> <time>`
//! padded with spaces and terminated by `\n`, followed by the values as
//! little-endian `f64` in row-major order.
//!
//! Rollout record: CSV with columns
//! `step,time,engine,eta,threshold,rel_l2,step_seconds`; an empty cell marks
//! a missing value.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{AnchorError, Result};
use crate::grid::{FieldState, Grid};
use crate::record::{Engine, RolloutRecord};

pub const HEADER_LEN: usize = 64;
const FIELD_MAGIC: &str = "ANCHORF1";

pub fn encode_field(f: &FieldState) -> Vec<u8> {
    let shape = f.grid.shape();
    let mut dims = [1usize; 3];
    dims[..shape.len()].copy_from_slice(&shape);
    let mut header = format!("{FIELD_MAGIC} {} {} {} {} {}", shape.len(), dims[0], dims[1], dims[2], f.time);
    assert!(header.len() < HEADER_LEN, "field header overflow");
    while header.len() < HEADER_LEN - 1 {
        header.push(' ');
    }
    header.push('\n');
    let mut out = header.into_bytes();
    out.reserve(8 * f.values.len());
    for v in &f.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8], grid: &Arc<Grid>) -> Result<FieldState> {
    if bytes.len() < HEADER_LEN {
        return Err(AnchorError::Format("field file shorter than its header".into()));
    }
    let header = std::str::from_utf8(&bytes[..HEADER_LEN])
        .map_err(|_| AnchorError::Format("field header is not ASCII".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != FIELD_MAGIC {
        return Err(AnchorError::Format(format!("bad field header '{}'", header.trim_end())));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| AnchorError::Format(format!("bad header integer '{s}'")));
    let dims = num(parts[1])?;
    let shape = [num(parts[2])?, num(parts[3])?, num(parts[4])?];
    let time: f64 = parts[5].parse().map_err(|_| AnchorError::Format(format!("bad header time '{}'", parts[5])))?;
    if dims != grid.dims() || shape[..dims] != grid.shape()[..] {
        return Err(AnchorError::mismatch(format!("file shape {:?} vs grid {:?}", &shape[..dims.min(3)], grid.shape())));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * grid.len() {
        return Err(AnchorError::Format(format!("expected {} values, found {} bytes", grid.len(), body.len())));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    FieldState::new(Arc::clone(grid), values, time)
}

pub fn write_field(path: &Path, f: &FieldState) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode_field(f))?;
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path, grid: &Arc<Grid>) -> Result<FieldState> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_field(&bytes, grid)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    step: usize,
    time: f64,
    engine: String,
    eta: Option<f64>,
    threshold: Option<f64>,
    rel_l2: Option<f64>,
    step_seconds: f64,
}

fn finite(x: f64) -> Option<f64> {
    (!x.is_nan()).then_some(x)
}

pub fn write_record_csv(w: impl Write, rec: &RolloutRecord) -> Result<()> {
    rec.check_lengths()?;
    let mut out = csv::Writer::from_writer(w);
    for i in 0..rec.len() {
        out.serialize(CsvRow {
            step: i,
            time: rec.snapshots.get(i).map_or(f64::NAN, |s| s.time),
            engine: rec.engines[i].as_str().to_string(),
            eta: finite(rec.eta[i]),
            threshold: finite(rec.threshold[i]),
            rel_l2: rec.rel_l2.as_ref().and_then(|e| finite(e[i])),
            step_seconds: rec.step_seconds[i],
        })
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> AnchorError {
    AnchorError::Format(e.to_string())
}

/// Series parsed back from a record CSV (snapshots live in separate files).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecordSeries {
    pub times: Vec<f64>,
    pub engines: Vec<Engine>,
    pub eta: Vec<f64>,
    pub threshold: Vec<f64>,
    pub rel_l2: Vec<f64>,
    pub step_seconds: Vec<f64>,
}

pub fn read_record_csv(r: impl Read) -> Result<RecordSeries> {
    let mut s = RecordSeries::default();
    for (i, row) in csv::Reader::from_reader(r).deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(csv_err)?;
        if row.step != i {
            return Err(AnchorError::Format(format!("row {i} carries step {}", row.step)));
        }
        s.times.push(row.time);
        s.engines.push(row.engine.parse()?);
        s.eta.push(row.eta.unwrap_or(f64::NAN));
        s.threshold.push(row.threshold.unwrap_or(f64::NAN));
        s.rel_l2.push(row.rel_l2.unwrap_or(f64::NAN));
        s.step_seconds.push(row.step_seconds);
    }
    Ok(s)
}

pub fn save_record_csv(path: &Path, rec: &RolloutRecord) -> Result<()> {
    write_record_csv(BufWriter::new(fs::File::create(path)?), rec)
}

pub fn load_record_csv(path: &Path) -> Result<RecordSeries> {
    read_record_csv(fs::File::open(path)?)
}

/// Writes every snapshot of `rec` into `dir` as `step_XXXX.field`.
pub fn write_snapshots(dir: &Path, rec: &RolloutRecord) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(rec.len());
    for (i, s) in rec.snapshots.iter().enumerate() {
        let name = format!("step_{i:04}.field");
        write_field(&dir.join(&name), s)?;
        names.push(name);
    }
    Ok(names)
}

pub fn read_snapshots(dir: &Path, names: &[String], grid: &Arc<Grid>) -> Result<Vec<FieldState>> {
    names.iter().map(|n| read_field(&dir.join(n), grid)).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

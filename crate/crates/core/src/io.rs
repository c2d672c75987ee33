//! On-disk artifacts: diagnostics CSV, particle snapshots (CSV and binary),
//! NTK CSV, grid-density CSV and the run manifest.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::diagnostics::{DiagnosticsRecord, GridDensity};
use crate::samplers::{PretrainReport, RunStatus};

/// Column order of `diagnostics.csv`.
pub const DIAGNOSTICS_COLUMNS: [&str; 9] =
    ["t", "loss", "kl", "fisher", "dissipation", "identity_lhs", "identity_rhs", "l2_error", "cosine_sim"];

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"SBTMSNAP";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format { path: path.display().to_string(), message: message.into() }
}

pub fn write_diagnostics_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<(), IoError> {
    // Explicit header so that an empty series still carries the schema.
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(DIAGNOSTICS_COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_diagnostics_csv(path: &Path) -> Result<Vec<DiagnosticsRecord>, IoError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != DIAGNOSTICS_COLUMNS {
        return Err(format_err(path, format!("unexpected columns {header:?}")));
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// One row per particle: `step, t, x1, …, xd`.
pub fn write_snapshot_csv(path: &Path, step: usize, t: f64, positions: ArrayView2<'_, f64>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend((1..=positions.ncols()).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for p in positions.rows() {
        row.clear();
        row.push(step.to_string());
        row.push(t.to_string());
        row.extend(p.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Binary snapshot: `"SBTMSNAP"`, u32 version, u32 d, u64 n, f64 t, u64 step,
/// then `n·d` f64 row-major; all little-endian.
pub fn write_snapshot_bin(path: &Path, step: usize, t: f64, positions: ArrayView2<'_, f64>) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    let (n, d) = positions.dim();
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&t.to_le_bytes())?;
    w.write_all(&(step as u64).to_le_bytes())?;
    for v in positions.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub positions: Array2<f64>,
}

pub fn read_snapshot_bin(path: &Path) -> Result<Snapshot, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(format_err(path, "not a snapshot file"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != SNAPSHOT_VERSION {
        return Err(format_err(path, format!("unsupported snapshot version {version}")));
    }
    r.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let t = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let step = u64::from_le_bytes(b8) as usize;
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        r.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    let positions = Array2::from_shape_vec((n, d), data).map_err(|e| format_err(path, e.to_string()))?;
    Ok(Snapshot { step, t, positions })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtkRow {
    pub t: f64,
    pub min_eig: f64,
    pub dim: usize,
}

pub fn write_ntk_csv(path: &Path, rows: &[NtkRow]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["t", "min_eig", "dim"])?;
    }
    w.flush()?;
    Ok(())
}

/// `x, f` for 1D densities, `x1, x2, f` for 2D ones.
pub fn write_grid_density_csv(path: &Path, density: &GridDensity) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    let d = density.grid.dim();
    let mut header: Vec<String> = if d == 1 { vec!["x".into()] } else { (1..=d).map(|k| format!("x{k}")).collect() };
    header.push("f".into());
    w.write_record(&header)?;
    let mut x = vec![0.0; d];
    for (i, v) in density.values.iter().enumerate() {
        density.grid.point(i, &mut x);
        let mut row: Vec<String> = x.iter().map(f64::to_string).collect();
        row.push(v.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `t, kl` series.
pub fn write_kl_series_csv(path: &Path, series: &[(f64, f64)]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "kl"])?;
    for (t, kl) in series {
        w.write_record([t.to_string(), kl.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Written next to every run's artifacts; enough to repeat the run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub crate_version: String,
    pub git_revision: Option<String>,
    pub config: RunConfig,
    pub config_toml: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub steps: usize,
    pub final_time_reached: f64,
    pub wall_time_seconds: f64,
    pub pretrain: Option<PretrainReport>,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest, IoError> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// `git rev-parse HEAD` of the working directory, if available.
pub fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

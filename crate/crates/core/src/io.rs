//! Image file formats and table writers.
//!
//! Formats:
//! - binary PGM (`P5`, 8- or 16-bit, 2D); values are scaled to [0, 1] on read
//!   and quantized on write,
//! - raw little-endian float32 with a JSON sidecar `{"dims": [...],
//!   "order": "row-major"}` at `<path>.json`, any dimensionality, bit-exact
//!   round trip,
//! - CSV (2D, debugging).
//!
//! All writes are atomic: a temporary file in the target directory is renamed
//! over the destination.

use crate::energy::EnergyReport;
use crate::engine::EvidenceRow;
use crate::error::{Result, WarpError};
use crate::grid::Grid;
use crate::stats::Observation;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Serialize, Deserialize)]
struct RawSidecar {
    dims: Vec<u64>,
    order: String,
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| WarpError::Io(e.error))?;
    Ok(())
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn extension(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

pub fn read_image(path: &Path) -> Result<Observation> {
    match extension(path).as_str() {
        "pgm" => read_pgm(path),
        "csv" => read_csv(path),
        _ => read_raw(path),
    }
}

/// Raw floats pass through untouched; integer formats are normalized, so the
/// noise scale conventions hold regardless of bit depth.
pub fn write_image(path: &Path, obs: &Observation) -> Result<()> {
    match extension(path).as_str() {
        "pgm" => write_pgm(path, obs, 16),
        "csv" => write_csv(path, obs),
        _ => write_raw(path, obs),
    }
}

fn read_pgm(path: &Path) -> Result<Observation> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0usize;
    let mut tokens = Vec::new();
    // header: magic, width, height, maxval, separated by whitespace/comments
    while tokens.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !(bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        tokens.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| WarpError::Format("bad pgm header".into()))?
                .to_string(),
        );
    }
    if tokens.len() < 4 || tokens[0] != "P5" {
        return Err(WarpError::Format("expected binary pgm (P5)".into()));
    }
    pos += 1; // single whitespace after maxval
    let width: u64 = tokens[1]
        .parse()
        .map_err(|_| WarpError::Format("bad pgm width".into()))?;
    let height: u64 = tokens[2]
        .parse()
        .map_err(|_| WarpError::Format("bad pgm height".into()))?;
    let maxval: u32 = tokens[3]
        .parse()
        .map_err(|_| WarpError::Format("bad pgm maxval".into()))?;
    let n = (width * height) as usize;
    let data = &bytes[pos..];
    let values: Vec<f64> = if maxval > 255 {
        if data.len() < 2 * n {
            return Err(WarpError::Format("truncated 16-bit pgm".into()));
        }
        data.chunks_exact(2)
            .take(n)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64)
            .collect()
    } else {
        if data.len() < n {
            return Err(WarpError::Format("truncated 8-bit pgm".into()));
        }
        data.iter().take(n).map(|&b| b as f64 / maxval as f64).collect()
    };
    let grid = Grid::new(&[height, width])?;
    Observation::new(grid, values)
}

fn write_pgm(path: &Path, obs: &Observation, bits: u32) -> Result<()> {
    if obs.grid().ndim() != 2 {
        return Err(WarpError::Format("pgm output needs a 2D grid".into()));
    }
    let dims = obs.grid().dims();
    let (height, width) = (dims[0], dims[1]);
    let maxval: u32 = if bits > 8 { 65535 } else { 255 };
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    for &v in obs.values() {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        if maxval > 255 {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    atomic_write(path, &out)
}

fn read_csv(path: &Path) -> Result<Observation> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse()).collect();
        rows.push(row.map_err(|_| WarpError::Format("bad csv number".into()))?);
    }
    if rows.is_empty() {
        return Err(WarpError::Format("empty csv".into()));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(WarpError::Format("ragged csv rows".into()));
    }
    let grid = Grid::new(&[rows.len() as u64, cols as u64])?;
    Observation::new(grid, rows.concat())
}

fn write_csv(path: &Path, obs: &Observation) -> Result<()> {
    if obs.grid().ndim() != 2 {
        return Err(WarpError::Format("csv output needs a 2D grid".into()));
    }
    let cols = obs.grid().dims()[1] as usize;
    let mut out = String::new();
    for row in obs.values().chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

fn read_raw(path: &Path) -> Result<Observation> {
    let sidecar = sidecar_path(path);
    let meta: RawSidecar = serde_json::from_slice(&std::fs::read(&sidecar).map_err(|_| {
        WarpError::Format(format!(
            "raw input needs a sidecar at {}",
            sidecar.display()
        ))
    })?)
    .map_err(|e| WarpError::Format(format!("bad sidecar: {e}")))?;
    if meta.order != "row-major" {
        return Err(WarpError::Format(format!(
            "unsupported element order: {}",
            meta.order
        )));
    }
    let bytes = std::fs::read(path)?;
    let n: u64 = meta.dims.iter().product();
    if bytes.len() as u64 != 4 * n {
        return Err(WarpError::Format(format!(
            "raw file holds {} bytes, sidecar dims need {}",
            bytes.len(),
            4 * n
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let grid = Grid::new(&meta.dims)?;
    Observation::new(grid, values)
}

fn write_raw(path: &Path, obs: &Observation) -> Result<()> {
    let mut bytes = Vec::with_capacity(obs.values().len() * 4);
    for &v in obs.values() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    atomic_write(path, &bytes)?;
    let meta = RawSidecar {
        dims: obs.grid().dims().to_vec(),
        order: "row-major".into(),
    };
    atomic_write(&sidecar_path(path), &serde_json::to_vec_pretty(&meta)?)
}

impl From<serde_json::Error> for WarpError {
    fn from(e: serde_json::Error) -> Self {
        WarpError::Format(e.to_string())
    }
}

pub fn write_evidence_csv(path: &Path, rows: &[EvidenceRow]) -> Result<()> {
    let mut out = String::from("slab,alpha,tau0,beta,C,eta0,sigma,log_evidence,selected\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.hyper.slab.name(),
            r.hyper.alpha,
            r.hyper.tau0,
            r.hyper.beta,
            r.hyper.c,
            r.hyper.eta0,
            r.hyper.sigma,
            r.log_evidence,
            r.selected
        ));
    }
    atomic_write(path, out.as_bytes())
}

pub fn write_energy_csv(path: &Path, report: &EnergyReport) -> Result<()> {
    let mut out = String::from("fraction,count_warp,count_fixed1d,count_fixed2d,saving_pct\n");
    for (i, &f) in report.fractions.iter().enumerate() {
        let c2 = report
            .fixed_2d
            .as_ref()
            .map(|c| c.counts[i].to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{f},{},{},{c2},{}\n",
            report.warp.counts[i], report.fixed_1d.counts[i], report.saving_pct[i]
        ));
    }
    atomic_write(path, out.as_bytes())
}

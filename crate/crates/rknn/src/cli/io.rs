//! File formats: points CSV, trace CSV, summary JSON, ASCII PLY.
//!
//! Floats are written with 17 significant digits ({:.16e}), which
//! round-trips every f64 bit pattern, so re-running a seeded command
//! reproduces its output files byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::neighbors::Configuration;
use crate::optimize::RunTrace;
use crate::{Error, Result};

/// Render one float at 17 significant digits.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Points as CSV: header x0..x{p-1}, one row per point.
pub fn points_csv(config: &Configuration) -> String {
    let p = config.p();
    let mut out = String::new();
    for j in 0..p {
        if j > 0 {
            out.push(',');
        }
        let _ = write!(out, "x{j}");
    }
    out.push('\n');
    for pt in config.iter_points() {
        for (j, &c) in pt.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(c));
        }
        out.push('\n');
    }
    out
}

/// Parse a points CSV back into a configuration. Exact inverse of
/// [`points_csv`] at the bit level.
pub fn parse_points_csv(text: &str) -> Result<Configuration> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Spec("empty points CSV".into()))?;
    let p = header.split(',').count();
    let mut coords = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != p {
            return Err(Error::Spec(format!(
                "points CSV row {}: {} fields, expected {p}",
                row + 1,
                fields.len()
            )));
        }
        for f in fields {
            coords.push(
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Spec(format!("points CSV row {}: {e}", row + 1)))?,
            );
        }
    }
    if coords.is_empty() {
        return Err(Error::Spec("points CSV has no rows".into()));
    }
    Ok(Configuration::new(coords, p))
}

/// Accepted-step trace as CSV: iter, energy, grad_norm, separation.
pub fn trace_csv(trace: &RunTrace) -> String {
    let mut out = String::from("iter,energy,grad_norm,separation\n");
    for (i, &iter) in trace.accepted_iters.iter().enumerate() {
        let _ = writeln!(
            out,
            "{iter},{},{},{}",
            fmt_f64(trace.energies[i]),
            fmt_f64(trace.grad_norms[i]),
            fmt_f64(trace.separations[i]),
        );
    }
    out
}

/// End-of-run report written as pretty JSON next to the points.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub n: usize,
    pub final_energy: f64,
    /// final_energy / N^(1+s/d).
    pub rescaled_energy: f64,
    pub separation: f64,
    pub covering_radius: f64,
    /// Quadrature mesh bound on the covering-radius proxy error.
    pub covering_mesh: f64,
    pub iterations: usize,
    pub stop_reason: String,
    pub seed: u64,
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// ASCII PLY point cloud (vertex elements only). Ambient dimension must be 3.
pub fn points_ply(config: &Configuration) -> Result<String> {
    if config.p() != 3 {
        return Err(Error::InvalidInput(format!(
            "PLY export needs ambient dimension 3, got {}",
            config.p()
        )));
    }
    let mut out = String::from("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", config.n());
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for pt in config.iter_points() {
        let _ = writeln!(out, "{} {} {}", fmt_f64(pt[0]), fmt_f64(pt[1]), fmt_f64(pt[2]));
    }
    Ok(out)
}

/// Sweep table as CSV: n, energy, rescaled_energy.
pub fn sweep_csv(rows: &[(usize, f64, f64)]) -> String {
    let mut out = String::from("n,energy,rescaled_energy\n");
    for &(n, e, y) in rows {
        let _ = writeln!(out, "{n},{},{}", fmt_f64(e), fmt_f64(y));
    }
    out
}

/// Histogram as CSV: cell_index, count, target_mass.
pub fn histogram_csv(counts: &[usize], masses: &[f64]) -> String {
    let mut out = String::from("cell_index,count,target_mass\n");
    for (i, (&c, &m)) in counts.iter().zip(masses).enumerate() {
        let _ = writeln!(out, "{i},{c},{}", fmt_f64(m));
    }
    out
}

/// Write a file, creating parent directories first.
pub fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, content)?;
    Ok(())
}

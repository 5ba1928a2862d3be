//! Grid CSV files and run manifests.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Format { path: String, line: usize, msg: String },
}

/// 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Values on a lattice, row-major over `axes`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridData {
    pub axes: Vec<String>,
    pub coords: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl GridData {
    pub fn shape(&self) -> Vec<usize> {
        self.coords.iter().map(|c| c.len()).collect()
    }

    /// Header line, one `# <axis>: ...` line of coordinates per axis, then one row per index of
    /// the first axis.
    pub fn to_csv(&self) -> String {
        let shape = self.shape();
        let mut out = String::new();
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        writeln!(out, "# axes: {}; shape: {}", self.axes.join(","), dims.join(",")).unwrap();
        for (name, c) in self.axes.iter().zip(&self.coords) {
            let vals: Vec<String> = c.iter().map(|v| fmt17(*v)).collect();
            writeln!(out, "# {name}: {}", vals.join(",")).unwrap();
        }
        let row = if shape.len() > 1 { shape[1..].iter().product() } else { 1 };
        for chunk in self.values.chunks(row.max(1)) {
            let vals: Vec<String> = chunk.iter().map(|v| fmt17(*v)).collect();
            writeln!(out, "{}", vals.join(",")).unwrap();
        }
        out
    }

    pub fn parse(text: &str, path: &str) -> Result<Self, GridFileError> {
        let err = |line: usize, msg: &str| GridFileError::Format { path: path.to_string(), line, msg: msg.to_string() };
        let mut lines = text.lines().enumerate();
        let (_, head) = lines.next().ok_or_else(|| err(1, "empty file"))?;
        let head = head.strip_prefix("# axes:").ok_or_else(|| err(1, "expected '# axes: ...; shape: ...'"))?;
        let (names, shape) = head.split_once("; shape:").ok_or_else(|| err(1, "missing shape"))?;
        let axes: Vec<String> = names.split(',').map(|s| s.trim().to_string()).collect();
        let shape: Vec<usize> = shape
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| err(1, "bad shape entry")))
            .collect::<Result<_, _>>()?;
        if axes.len() != shape.len() {
            return Err(err(1, "axes and shape differ in length"));
        }
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse_row = |s: &str| -> Result<Vec<f64>, GridFileError> {
                s.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| err(i + 1, "bad number"))).collect()
            };
            if let Some(rest) = line.strip_prefix('#') {
                let (name, vals) = rest.split_once(':').ok_or_else(|| err(i + 1, "bad comment line"))?;
                if axes.get(coords.len()).map(|a| a.as_str()) != Some(name.trim()) {
                    return Err(err(i + 1, "axis coordinates out of order"));
                }
                coords.push(parse_row(vals)?);
            } else {
                values.extend(parse_row(line)?);
            }
        }
        if coords.len() != axes.len() || coords.iter().zip(&shape).any(|(c, d)| c.len() != *d) {
            return Err(err(1, "axis coordinate lines do not match the shape"));
        }
        if values.len() != shape.iter().product::<usize>() {
            return Err(err(1, "value count does not match the shape"));
        }
        Ok(Self { axes, coords, values })
    }

    pub fn read(path: &Path) -> Result<Self, GridFileError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| GridFileError::Io { path: p.clone(), source: e })?;
        Self::parse(&text, &p)
    }

    /// Multilinear interpolation; zero outside the lattice.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let d = self.coords.len();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for j in 0..d {
            let c = &self.coords[j];
            if c.len() == 1 {
                if x[j] != c[0] {
                    return 0.0;
                }
                continue;
            }
            if x[j] < c[0] || x[j] > c[c.len() - 1] {
                return 0.0;
            }
            let i = c.partition_point(|v| *v <= x[j]).clamp(1, c.len() - 1) - 1;
            base[j] = i;
            frac[j] = (x[j] - c[i]) / (c[i + 1] - c[i]);
        }
        let shape = self.shape();
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0;
            for j in 0..d {
                let up = (corner >> j) & 1 == 1 && shape[j] > 1;
                if (corner >> j) & 1 == 1 && shape[j] == 1 {
                    w = 0.0;
                }
                w *= if up { frac[j] } else { 1.0 - frac[j] };
                flat = flat * shape[j] + base[j] + usize::from(up);
            }
            if w != 0.0 {
                acc += w * self.values[flat];
            }
        }
        acc
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: String,
    pub config_sha256: String,
    pub seed: u64,
    pub threads: usize,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputEntry>,
}

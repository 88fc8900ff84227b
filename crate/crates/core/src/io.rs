//! Dense CSV matrices and the covariance-set manifest.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CsslError, Result};
use crate::linalg::{Mask, Matrix};
use crate::types::CovarianceSet;

fn io_err(path: &Path, source: std::io::Error) -> CsslError {
    CsslError::Io { path: path.display().to_string(), source }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.len() * 24);
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format_value(m[(r, c)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_matrix_csv(text: &str) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CsslError::Parse(format!("row {}: {e}", r + 1)))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, f)| {
                f.parse::<f64>()
                    .map_err(|_| CsslError::Parse(format!("row {}, column {}: {f:?} is not a number", r + 1, c + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CsslError::Parse("rows have different lengths".into()));
    }
    Ok(Matrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_matrix_csv(&text).map_err(|e| match e {
        CsslError::Parse(msg) => CsslError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    write_text(path, &matrix_to_csv(m))
}

/// Boolean matrix written as 0/1 entries.
pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let mut out = String::new();
    for r in 0..mask.nrows() {
        let cells: Vec<&str> = (0..mask.ncols()).map(|c| if mask[(r, c)] { "1" } else { "0" }).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    Ok(read_matrix(path)?.map(|v| v != 0.0))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CsslError::Parse(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CsslError::Parse(format!("{}: {e}", path.display())))
}

/// On-disk description of a covariance set. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub matrices: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_points: Option<Vec<usize>>,
}

impl Manifest {
    /// Weights come from `weights` if present, else from `n_points`, else uniform.
    pub fn load(path: impl AsRef<Path>) -> Result<CovarianceSet> {
        let path = path.as_ref();
        let manifest: Manifest = read_json(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let matrices = manifest
            .matrices
            .iter()
            .map(|p| read_matrix(if p.is_absolute() { p.clone() } else { base.join(p) }))
            .collect::<Result<Vec<_>>>()?;
        match (manifest.weights, manifest.n_points) {
            (Some(w), n) => CovarianceSet::new(matrices, w, n),
            (None, Some(n)) => CovarianceSet::from_counts(matrices, n),
            (None, None) => CovarianceSet::uniform(matrices),
        }
    }

    /// Writes `cov_i.csv` files next to `manifest.json` in `dir`.
    pub fn save(dir: impl AsRef<Path>, cov: &CovarianceSet) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let mut names = Vec::new();
        for (i, m) in cov.matrices().iter().enumerate() {
            let name = PathBuf::from(format!("cov_{}.csv", i + 1));
            write_matrix(dir.join(&name), m)?;
            names.push(name);
        }
        let manifest = Manifest {
            matrices: names,
            weights: Some(cov.weights().to_vec()),
            n_points: cov.n_points().map(|n| n.to_vec()),
        };
        let path = dir.join("manifest.json");
        write_json(&path, &manifest)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let m = Matrix::from_row_slice(2, 3, &[0.1, -1.0 / 3.0, 1e-300, 2.5e10, 0.0, -7.0]);
        let back = parse_matrix_csv(&matrix_to_csv(&m)).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(parse_matrix_csv("1,2\n3\n").is_err());
        assert!(parse_matrix_csv("1,x\n").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = Matrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        let b = Matrix::identity(2, 2);
        let cov = CovarianceSet::from_counts(vec![a, b], vec![3, 1]).unwrap();
        let path = Manifest::save(dir.path(), &cov).unwrap();
        let back = Manifest::load(path).unwrap();
        assert_eq!(back, cov);
    }
}

//! File formats: shape JSON, far-field CSV with a JSON sidecar, and JSON
//! reports.
//!
//! A far field is written as `name.csv` with header `theta,phi,re_A,im_A`
//! (radians, one row per grid direction in grid order) and `name.json`
//! holding `{"k", "alpha", "bc", "grid": {"n_theta", "n_phi"}}`. Floats are
//! written with 17 significant digits, so values read back bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::forward::{BoundaryCondition, FarFieldPattern};
use crate::geometry::{Direction, DirectionGrid, StarShape};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> IoError + '_ {
    move |source| IoError::Json { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { path: path.to_path_buf(), source }
}

/// Reads and validates any JSON document.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    fs::write(path, to_json_string(value)).map_err(io_err(path))
}

pub fn read_shape(path: &Path) -> Result<StarShape, IoError> {
    read_json(path)
}

pub fn write_shape(path: &Path, shape: &StarShape) -> Result<(), IoError> {
    write_json(path, shape)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_theta: usize,
    pub n_phi: usize,
}

/// Metadata stored next to a far-field CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarFieldSidecar {
    pub k: f64,
    pub alpha: Option<[f64; 3]>,
    pub bc: Option<BoundaryCondition>,
    pub grid: GridSpec,
}

impl FarFieldSidecar {
    pub fn of(pattern: &FarFieldPattern) -> Self {
        FarFieldSidecar {
            k: pattern.k,
            alpha: pattern.alpha.map(<[f64; 3]>::from),
            bc: pattern.bc,
            grid: GridSpec { n_theta: pattern.grid.n_theta, n_phi: pattern.grid.n_phi },
        }
    }
}

/// Sidecar path for a far-field CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// CSV body for a pattern.
pub fn far_field_csv(pattern: &FarFieldPattern) -> String {
    let mut s = String::with_capacity(80 * pattern.values.len() + 32);
    s.push_str("theta,phi,re_A,im_A\n");
    for ((t, p), a) in pattern.grid.angles.iter().zip(&pattern.values) {
        s.push_str(&format!("{t:.16e},{p:.16e},{:.16e},{:.16e}\n", a.re, a.im));
    }
    s
}

/// Writes the CSV and its sidecar.
pub fn write_far_field(csv_path: &Path, pattern: &FarFieldPattern) -> Result<(), IoError> {
    fs::write(csv_path, far_field_csv(pattern)).map_err(io_err(csv_path))?;
    write_json(&sidecar_path(csv_path), &FarFieldSidecar::of(pattern))
}

#[derive(Debug, Deserialize)]
struct Row {
    theta: f64,
    phi: f64,
    re_a: f64,
    im_a: f64,
}

/// Reads a CSV and its sidecar, checking that the rows sit on the grid the
/// sidecar names.
pub fn read_far_field(csv_path: &Path) -> Result<FarFieldPattern, IoError> {
    let side_path = sidecar_path(csv_path);
    let side: FarFieldSidecar = read_json(&side_path)?;
    let fmt = |msg: String| IoError::Format { path: csv_path.to_path_buf(), msg };
    if side.grid.n_theta < 1 || side.grid.n_phi < 1 {
        return Err(fmt("grid dimensions must be positive".into()));
    }
    let alpha = side
        .alpha
        .map(Direction::try_from)
        .transpose()
        .map_err(|e| IoError::Format { path: side_path.clone(), msg: e.to_string() })?;
    let grid = DirectionGrid::gauss(side.grid.n_theta, side.grid.n_phi);

    let mut reader = csv::ReaderBuilder::new().from_path(csv_path).map_err(csv_err(csv_path))?;
    let header = reader.headers().map_err(csv_err(csv_path))?.clone();
    if header.iter().collect::<Vec<_>>() != ["theta", "phi", "re_A", "im_A"] {
        return Err(fmt(format!("expected header theta,phi,re_A,im_A, found {}", header.iter().collect::<Vec<_>>().join(","))));
    }
    reader.set_headers(csv::StringRecord::from(vec!["theta", "phi", "re_a", "im_a"]));
    let mut values = Vec::with_capacity(grid.len());
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(csv_err(csv_path))?;
        let Some(&(t, p)) = grid.angles.get(i) else {
            return Err(fmt(format!("more rows than the {} grid directions", grid.len())));
        };
        if (row.theta - t).abs() > 1e-12 || (row.phi - p).abs() > 1e-12 {
            return Err(fmt(format!("row {} at ({}, {}) is off the grid node ({t}, {p})", i + 1, row.theta, row.phi)));
        }
        values.push(Complex64::new(row.re_a, row.im_a));
    }
    if values.len() != grid.len() {
        return Err(fmt(format!("{} rows for {} grid directions", values.len(), grid.len())));
    }
    Ok(FarFieldPattern { grid, values, alpha, k: side.k, bc: side.bc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn pattern() -> FarFieldPattern {
        let grid = DirectionGrid::gauss(4, 8);
        let values = (0..grid.len()).map(|i| Complex64::new(0.1 * i as f64, -1.0 / (i as f64 + 3.0))).collect();
        FarFieldPattern {
            grid,
            values,
            alpha: Some(Direction::new(Vec3::new(0.3, -0.2, 0.9)).unwrap()),
            k: 2.0,
            bc: Some(BoundaryCondition::Impedance(Complex64::new(0.5, 0.3))),
        }
    }

    #[test]
    fn far_field_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ff.csv");
        let p = pattern();
        write_far_field(&path, &p).unwrap();
        let q = read_far_field(&path).unwrap();
        assert_eq!(p, q);
        let side1 = fs::read_to_string(sidecar_path(&path)).unwrap();
        write_far_field(&path, &q).unwrap();
        assert_eq!(side1, fs::read_to_string(sidecar_path(&path)).unwrap());
    }

    #[test]
    fn csv_has_one_row_per_direction() {
        let p = pattern();
        let text = far_field_csv(&p);
        assert_eq!(text.lines().count(), 1 + 32);
        assert!(text.starts_with("theta,phi,re_A,im_A\n"));
    }

    #[test]
    fn off_grid_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ff.csv");
        write_far_field(&path, &pattern()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let broken: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        fs::write(&path, broken).unwrap();
        assert!(matches!(read_far_field(&path), Err(IoError::Format { .. })));
    }

    #[test]
    fn sidecar_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ff.json");
        fs::write(&path, r#"{"k":1,"alpha":null,"bc":null,"grid":{"n_theta":2,"n_phi":4},"x":1}"#).unwrap();
        assert!(read_json::<FarFieldSidecar>(&path).is_err());
    }
}

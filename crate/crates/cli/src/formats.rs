//! On-disk formats: headerless 0/1 response CSV and the JSON parameter files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use lcm_core::{FitResult, ItemParams, LatentAssignment, MixingWeights, ModelKind, ResponseMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub fn read_responses(path: &Path) -> Result<ResponseMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<i64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, s)| {
                s.parse::<i64>().map_err(|_| {
                    CliError::Data(format!(
                        "{}: row {}, column {}: {s:?} is not an integer",
                        path.display(),
                        i + 1,
                        j + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(ResponseMatrix::validate(&rows)?)
}

pub fn write_responses(path: &Path, r: &ResponseMatrix) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut line = String::with_capacity(2 * r.n_items());
    for row in r.rows() {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push(if *v == 1 { '1' } else { '0' });
        }
        line.push('\n');
        out.write_all(line.as_bytes())
            .map_err(|e| CliError::io(path, e))?;
    }
    out.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Ground truth written by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    /// 1-based class labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<usize>>,
    /// J rows of L values.
    pub theta: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Estimate written by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub method: String,
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<usize>>,
    pub theta: Vec<Vec<f64>>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub runtime_ms: f64,
}

impl FitFile {
    pub fn new(method: &str, fit: &FitResult, omit_timing: bool) -> Self {
        Self {
            method: method.to_string(),
            model: fit.model(),
            p: fit.p_hat.as_ref().map(|p| p.as_slice().to_vec()),
            z: fit.z_hat.as_ref().map(|z| z.to_one_based()),
            theta: fit.theta_hat.to_rows(),
            loglik: fit.loglik,
            iterations: fit.n_iterations,
            converged: fit.converged,
            runtime_ms: if omit_timing { 0.0 } else { fit.runtime_ms },
        }
    }
}

/// The parameter fields shared by truth and fit files; anything else is ignored.
#[derive(Debug, Clone, Deserialize)]
pub struct ParamsFile {
    pub theta: Vec<Vec<f64>>,
    #[serde(default)]
    pub p: Option<Vec<f64>>,
    #[serde(default)]
    pub z: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Params {
    pub theta: ItemParams,
    pub p: Option<MixingWeights>,
    pub z: Option<LatentAssignment>,
}

impl ParamsFile {
    pub fn load(path: &Path) -> Result<Params> {
        let raw: ParamsFile = read_json(path)?;
        let ctx = |e: lcm_core::LcmError| CliError::Data(format!("{}: {e}", path.display()));
        let theta = ItemParams::from_rows(&raw.theta).map_err(ctx)?;
        let p = raw.p.map(MixingWeights::new).transpose().map_err(ctx)?;
        let z = raw
            .z
            .map(|z| LatentAssignment::from_one_based(&z, theta.n_classes()))
            .transpose()
            .map_err(ctx)?;
        Ok(Params { theta, p, z })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn responses_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let r = ResponseMatrix::validate(&[vec![1u8, 0, 1], vec![0, 0, 1]]).unwrap();
        write_responses(&path, &r).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "1,0,1\n0,0,1\n");
        assert_eq!(read_responses(&path).unwrap(), r);
    }

    #[test]
    fn bad_responses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        for text in ["1,0,2\n", "1,0,1\n1,0\n", "1,x,1\n", "1,0\n"] {
            std::fs::write(&path, text).unwrap();
            let err = read_responses(&path).unwrap_err();
            assert_eq!(err.exit_code(), 3, "{text:?}: {err}");
        }
    }

    #[test]
    fn fit_file_round_trip() {
        let theta = ItemParams::from_rows(&[vec![0.1, 1.0 / 3.0], vec![0.7, 0.2], vec![0.5, 0.9]])
            .unwrap();
        let fit = FitResult::random(theta.clone(), MixingWeights::new(vec![0.3, 0.7]).unwrap(), -1.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fit.json");
        write_json(&path, &FitFile::new("tensor-em", &fit, true)).unwrap();
        let back: FitFile = read_json(&path).unwrap();
        assert_eq!(back.theta, theta.to_rows());
        let params = ParamsFile::load(&path).unwrap();
        assert_eq!(params.theta, theta);
        assert_eq!(params.p.unwrap().as_slice(), &[0.3, 0.7]);
    }
}

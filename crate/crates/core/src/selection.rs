//! Tensor-EM fitting and choice of the number of classes by information criteria.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{cem_fixed, em_random, EmConfig};
use crate::error::{LcmError, Result};
use crate::spectral::{tensor_estimate_averaged, PowerConfig, TensorEstimate};
use crate::types::{FitResult, ModelKind, ResponseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gic1,
    Gic2,
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Criterion::Gic1 => "gic1",
            Criterion::Gic2 => "gic2",
        })
    }
}

impl std::str::FromStr for Criterion {
    type Err = LcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gic1" => Ok(Criterion::Gic1),
            "gic2" => Ok(Criterion::Gic2),
            other => Err(LcmError::InvalidParameter(format!(
                "unknown criterion {other:?}, expected gic1 or gic2"
            ))),
        }
    }
}

/// Number of free parameters.
pub fn model_dim(model: ModelKind, n: usize, j: usize, l: usize) -> usize {
    match model {
        ModelKind::Random => j * l + l - 1,
        ModelKind::Fixed => j * l + n,
    }
}

/// Per-parameter penalty `a_N`, natural logs.
pub fn penalty(kind: Criterion, n: usize) -> Result<f64> {
    match kind {
        Criterion::Gic1 => {
            if n < 1 {
                return Err(LcmError::DomainError("gic1 needs N >= 1".into()));
            }
            Ok((n as f64).ln())
        }
        Criterion::Gic2 => {
            if n < 3 {
                return Err(LcmError::DomainError(format!(
                    "gic2 needs N >= 3 so that ln ln N > 0, got N = {n}"
                )));
            }
            let ln = (n as f64).ln();
            Ok(ln.ln() * ln)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub power: PowerConfig,
    pub em: EmConfig,
    /// Item orderings averaged by the spectral step.
    pub n_perms: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            power: PowerConfig::default(),
            em: EmConfig::default(),
            n_perms: 1,
        }
    }
}

/// Spectral estimate followed by EM (random model) or CEM (fixed model).
pub fn fit_tensor_em<R: Rng + ?Sized>(
    r: &ResponseMatrix,
    n_classes: usize,
    model: ModelKind,
    cfg: &PipelineConfig,
    rng: &mut R,
) -> Result<(TensorEstimate, FitResult)> {
    let est = tensor_estimate_averaged(r, n_classes, cfg.n_perms, &cfg.power, rng)?;
    let fit = match model {
        ModelKind::Random => em_random(r, &est.p_hat, &est.theta_hat, &cfg.em)?,
        ModelKind::Fixed => cem_fixed(r, &est.p_hat, &est.theta_hat, &cfg.em)?,
    };
    Ok((est, fit))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GicRow {
    pub n_classes: usize,
    pub loglik: f64,
    pub dim: usize,
    pub gic1: f64,
    pub gic2: Option<f64>,
    pub converged: bool,
    pub n_iterations: usize,
    /// Set when the fit for this candidate failed; such rows never win.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GicReport {
    pub model: ModelKind,
    pub n_subjects: usize,
    pub a_n_gic1: f64,
    pub a_n_gic2: Option<f64>,
    pub rows: Vec<GicRow>,
    pub selected_gic1: Option<usize>,
    pub selected_gic2: Option<usize>,
    pub criterion: Criterion,
    pub selected_l: usize,
}

/// Relative width within which two criterion values count as tied.
pub const TIE_TOL: f64 = 1e-12;

fn argmin(rows: &[GicRow], value: impl Fn(&GicRow) -> Option<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for row in rows.iter().filter(|r| r.error.is_none()) {
        let Some(v) = value(row) else { continue };
        if !v.is_finite() {
            continue;
        }
        match best {
            None => best = Some((row.n_classes, v)),
            Some((_, b)) if v < b - TIE_TOL * b.abs().max(1.0) => best = Some((row.n_classes, v)),
            _ => {}
        }
    }
    best.map(|(l, _)| l)
}

/// Fits every candidate class count and picks the minimizer of `criterion`.
///
/// Each candidate gets its own generator seeded from one draw of `rng`, so the
/// report does not depend on scheduling. Candidates are reported in
/// increasing order.
pub fn select_l<R: Rng + ?Sized>(
    r: &ResponseMatrix,
    candidates: &[usize],
    model: ModelKind,
    criterion: Criterion,
    cfg: &PipelineConfig,
    rng: &mut R,
) -> Result<GicReport> {
    let mut cands = candidates.to_vec();
    cands.sort_unstable();
    cands.dedup();
    if cands.is_empty() || cands[0] == 0 {
        return Err(LcmError::InvalidParameter(
            "candidates must be a non-empty list of positive class counts".into(),
        ));
    }
    let n = r.n_subjects();
    let a1 = penalty(Criterion::Gic1, n)?;
    let a2 = match penalty(Criterion::Gic2, n) {
        Ok(v) => Some(v),
        Err(e) if criterion == Criterion::Gic2 => return Err(e),
        Err(_) => None,
    };
    let base: u64 = rng.random();
    let fits: Vec<(usize, Result<FitResult>)> = cands
        .par_iter()
        .map(|&l| {
            let mut sub = ChaCha8Rng::seed_from_u64(base);
            sub.set_stream(l as u64);
            (l, fit_tensor_em(r, l, model, cfg, &mut sub).map(|(_, fit)| fit))
        })
        .collect();
    let rows: Vec<GicRow> = fits
        .iter()
        .map(|(l, res)| {
            let dim = model_dim(model, n, r.n_items(), *l);
            match res {
                Ok(fit) => GicRow {
                    n_classes: *l,
                    loglik: fit.loglik,
                    dim,
                    gic1: -2.0 * fit.loglik + a1 * dim as f64,
                    gic2: a2.map(|a| -2.0 * fit.loglik + a * dim as f64),
                    converged: fit.converged,
                    n_iterations: fit.n_iterations,
                    error: None,
                },
                Err(e) => GicRow {
                    n_classes: *l,
                    loglik: f64::NAN,
                    dim,
                    gic1: f64::NAN,
                    gic2: a2.map(|_| f64::NAN),
                    converged: false,
                    n_iterations: 0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let selected_gic1 = argmin(&rows, |row| Some(row.gic1));
    let selected_gic2 = argmin(&rows, |row| row.gic2);
    let selected = match criterion {
        Criterion::Gic1 => selected_gic1,
        Criterion::Gic2 => selected_gic2,
    };
    let Some(selected_l) = selected else {
        // Nothing usable: surface the first candidate's failure.
        let first = fits.into_iter().find_map(|(_, res)| res.err());
        return Err(first.unwrap_or_else(|| {
            LcmError::InvalidParameter("no candidate produced a finite criterion".into())
        }));
    };
    Ok(GicReport {
        model,
        n_subjects: n,
        a_n_gic1: a1,
        a_n_gic2: a2,
        rows,
        selected_gic1,
        selected_gic2,
        criterion,
        selected_l,
    })
}

//! Likelihoods, EM for the random-effect model and classification EM for the
//! fixed-effect model.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{LcmError, Result};
use crate::types::{FitResult, ItemParams, LatentAssignment, MixingWeights, ResponseMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the per-subject log-likelihood gain falls below this.
    pub tol: f64,
    /// Item parameters (and class weights) are kept in `[floor, 1 - floor]`.
    pub param_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-8,
            param_floor: 1e-6,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(LcmError::InvalidParameter("max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(LcmError::InvalidParameter("tol must be positive".into()));
        }
        if !(self.param_floor > 0.0 && self.param_floor < 0.5) {
            return Err(LcmError::InvalidParameter(
                "param_floor must lie in (0, 0.5)".into(),
            ));
        }
        Ok(())
    }
}

/// N x L matrix of class responsibilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub gamma: DMatrix<f64>,
}

/// Per-item log-probability tables, laid out `[j * L + a]`.
struct LogTables {
    n_classes: usize,
    log_p1: Vec<f64>,
    log_p0: Vec<f64>,
}

impl LogTables {
    fn new(theta: &ItemParams) -> Self {
        let (j, l) = (theta.n_items(), theta.n_classes());
        let mut log_p1 = Vec::with_capacity(j * l);
        let mut log_p0 = Vec::with_capacity(j * l);
        for jj in 0..j {
            for a in 0..l {
                let t = theta.get(jj, a);
                log_p1.push(t.ln());
                log_p0.push((1.0 - t).ln());
            }
        }
        Self {
            n_classes: l,
            log_p1,
            log_p0,
        }
    }

    /// `out[a] = log P(row | class a)`.
    fn class_loglik(&self, row: &[u8], out: &mut [f64]) {
        let l = self.n_classes;
        out.iter_mut().for_each(|x| *x = 0.0);
        for (j, &r) in row.iter().enumerate() {
            let table = if r == 1 { &self.log_p1 } else { &self.log_p0 };
            for (o, v) in out.iter_mut().zip(&table[j * l..(j + 1) * l]) {
                *o += v;
            }
        }
    }
}

fn check_dims(r: &ResponseMatrix, theta: &ItemParams) -> Result<()> {
    if r.n_items() != theta.n_items() {
        return Err(LcmError::DimensionMismatch(format!(
            "{} items in data, {} rows of item parameters",
            r.n_items(),
            theta.n_items()
        )));
    }
    Ok(())
}

fn check_weights(p: &MixingWeights, theta: &ItemParams) -> Result<()> {
    if p.n_classes() != theta.n_classes() {
        return Err(LcmError::DimensionMismatch(format!(
            "{} mixing weights for {} classes",
            p.n_classes(),
            theta.n_classes()
        )));
    }
    Ok(())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// E-step: log-likelihood and responsibilities at `(p, theta)`.
fn e_step(r: &ResponseMatrix, log_p: &[f64], tables: &LogTables) -> (f64, DMatrix<f64>) {
    let l = log_p.len();
    let n = r.n_subjects();
    let mut gamma = DMatrix::zeros(n, l);
    let mut buf = vec![0.0; l];
    let mut total = 0.0;
    for (i, row) in r.rows().enumerate() {
        tables.class_loglik(row, &mut buf);
        for (b, lp) in buf.iter_mut().zip(log_p) {
            *b += lp;
        }
        let lse = log_sum_exp(&buf);
        total += lse;
        if lse.is_finite() {
            for (a, b) in buf.iter().enumerate() {
                gamma[(i, a)] = (b - lse).exp();
            }
        } else {
            for a in 0..l {
                gamma[(i, a)] = 1.0 / l as f64;
            }
        }
    }
    (total, gamma)
}

/// Marginal log-likelihood of the random-effect model.
pub fn loglik_random(r: &ResponseMatrix, p: &MixingWeights, theta: &ItemParams) -> Result<f64> {
    check_dims(r, theta)?;
    check_weights(p, theta)?;
    let log_p: Vec<f64> = p.as_slice().iter().map(|x| x.ln()).collect();
    let tables = LogTables::new(theta);
    let mut buf = vec![0.0; theta.n_classes()];
    Ok(r.rows()
        .map(|row| {
            tables.class_loglik(row, &mut buf);
            for (b, lp) in buf.iter_mut().zip(&log_p) {
                *b += lp;
            }
            log_sum_exp(&buf)
        })
        .sum())
}

/// Complete-data log-likelihood of the fixed-effect model.
pub fn loglik_fixed(r: &ResponseMatrix, z: &LatentAssignment, theta: &ItemParams) -> Result<f64> {
    check_dims(r, theta)?;
    if z.len() != r.n_subjects() {
        return Err(LcmError::DimensionMismatch(format!(
            "{} labels for {} subjects",
            z.len(),
            r.n_subjects()
        )));
    }
    if z.n_classes() > theta.n_classes() {
        return Err(LcmError::DimensionMismatch(format!(
            "labels reach class {}, item parameters have {}",
            z.n_classes(),
            theta.n_classes()
        )));
    }
    let mut total = 0.0;
    for (row, &a) in r.rows().zip(z.labels()) {
        for (j, &v) in row.iter().enumerate() {
            let t = theta.get(j, a);
            total += if v == 1 { t.ln() } else { (1.0 - t).ln() };
        }
    }
    Ok(total)
}

/// Class responsibilities by Bayes' rule.
pub fn posterior(r: &ResponseMatrix, p: &MixingWeights, theta: &ItemParams) -> Result<Posterior> {
    check_dims(r, theta)?;
    check_weights(p, theta)?;
    let log_p: Vec<f64> = p.as_slice().iter().map(|x| x.ln()).collect();
    let (_, gamma) = e_step(r, &log_p, &LogTables::new(theta));
    Ok(Posterior { gamma })
}

fn clamp(v: f64, floor: f64) -> f64 {
    v.clamp(floor, 1.0 - floor)
}

fn clamp_theta(theta: &ItemParams, floor: f64) -> Result<ItemParams> {
    ItemParams::new(theta.matrix().map(|v| clamp(v, floor)))
}

/// EM for the random-effect model from the given starting point.
pub fn em_random(
    r: &ResponseMatrix,
    init_p: &MixingWeights,
    init_theta: &ItemParams,
    cfg: &EmConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    check_dims(r, init_theta)?;
    check_weights(init_p, init_theta)?;
    let start = Instant::now();
    let n = r.n_subjects();
    let (j, l) = (init_theta.n_items(), init_theta.n_classes());

    let mut theta = clamp_theta(init_theta, cfg.param_floor)?;
    let mut p = init_p.clone();
    let log_of = |p: &MixingWeights| p.as_slice().iter().map(|x| x.ln()).collect::<Vec<_>>();
    let (mut ll, mut gamma) = e_step(r, &log_of(&p), &LogTables::new(&theta));
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut converged = false;

    let mut num = vec![0.0; j * l];
    for it in 1..=cfg.max_iters {
        // M-step.
        num.iter_mut().for_each(|x| *x = 0.0);
        let mut mass = vec![0.0; l];
        for (i, row) in r.rows().enumerate() {
            let g = gamma.row(i);
            for (a, m) in mass.iter_mut().enumerate() {
                *m += g[a];
            }
            for (jj, &v) in row.iter().enumerate() {
                if v == 1 {
                    for (x, a) in num[jj * l..(jj + 1) * l].iter_mut().zip(0..l) {
                        *x += g[a];
                    }
                }
            }
        }
        let prev = theta.matrix();
        let next = DMatrix::from_fn(j, l, |jj, a| {
            if mass[a] > 1e-300 {
                clamp(num[jj * l + a] / mass[a], cfg.param_floor)
            } else {
                prev[(jj, a)]
            }
        });
        theta = ItemParams::new(next)?;
        let raw_p: Vec<f64> = mass.iter().map(|m| m / n as f64).collect();
        p = MixingWeights::normalized(&raw_p, cfg.param_floor)?;

        let (ll_new, gamma_new) = e_step(r, &log_of(&p), &LogTables::new(&theta));
        trace.push(ll_new);
        iterations = it;
        let gain = (ll_new - ll) / n as f64;
        ll = ll_new;
        gamma = gamma_new;
        if gain < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        theta_hat: theta,
        p_hat: Some(p),
        z_hat: None,
        loglik: ll,
        n_iterations: iterations,
        converged,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
        loglik_trace: trace,
    })
}

/// C-step: assign every subject to its most likely class, ties to the lowest index.
pub fn classify(r: &ResponseMatrix, theta: &ItemParams) -> Result<LatentAssignment> {
    check_dims(r, theta)?;
    let tables = LogTables::new(theta);
    let l = theta.n_classes();
    let mut buf = vec![0.0; l];
    let labels = r
        .rows()
        .map(|row| {
            tables.class_loglik(row, &mut buf);
            let mut best = 0;
            for a in 1..l {
                if buf[a] > buf[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    LatentAssignment::from_zero_based(labels, l)
}

/// Within-class response means; classes without members keep `prev`'s column.
fn class_means(
    r: &ResponseMatrix,
    z: &[usize],
    prev: &ItemParams,
    floor: f64,
) -> Result<ItemParams> {
    let (j, l) = (prev.n_items(), prev.n_classes());
    let mut counts = vec![0usize; l];
    let mut ones = vec![0usize; j * l];
    for (row, &a) in r.rows().zip(z) {
        counts[a] += 1;
        for (jj, &v) in row.iter().enumerate() {
            ones[jj * l + a] += v as usize;
        }
    }
    ItemParams::new(DMatrix::from_fn(j, l, |jj, a| {
        if counts[a] > 0 {
            clamp(ones[jj * l + a] as f64 / counts[a] as f64, floor)
        } else {
            prev.get(jj, a)
        }
    }))
}

/// Classification EM for the fixed-effect model.
///
/// The classification likelihood does not involve class weights, so
/// `init_p` only has to agree with `init_theta` in the number of classes.
pub fn cem_fixed(
    r: &ResponseMatrix,
    init_p: &MixingWeights,
    init_theta: &ItemParams,
    cfg: &EmConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    check_dims(r, init_theta)?;
    check_weights(init_p, init_theta)?;
    let start = Instant::now();
    let l = init_theta.n_classes();

    let mut theta = clamp_theta(init_theta, cfg.param_floor)?;
    let mut z: Option<Vec<usize>> = None;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=cfg.max_iters {
        let assigned = classify(r, &theta)?.labels().to_vec();
        if z.as_ref() == Some(&assigned) {
            converged = true;
            break;
        }
        theta = class_means(r, &assigned, &theta, cfg.param_floor)?;
        let za = LatentAssignment::from_zero_based(assigned.clone(), l)?;
        trace.push(loglik_fixed(r, &za, &theta)?);
        z = Some(assigned);
        iterations = it;
    }
    let z = LatentAssignment::from_zero_based(z.expect("max_iters >= 1"), l)?;
    let loglik = loglik_fixed(r, &z, &theta)?;
    Ok(FitResult {
        theta_hat: theta,
        p_hat: None,
        z_hat: Some(z),
        loglik,
        n_iterations: iterations,
        converged,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
        loglik_trace: trace,
    })
}

/// Random starting point: uniform weights, item parameters i.i.d. U(0.1, 0.9).
pub fn random_init<R: Rng + ?Sized>(
    n_items: usize,
    n_classes: usize,
    rng: &mut R,
) -> (MixingWeights, ItemParams) {
    let theta = DMatrix::from_fn(n_items, n_classes, |_, _| rng.random_range(0.1..0.9));
    (
        MixingWeights::uniform(n_classes),
        ItemParams::new(theta).expect("values in (0.1, 0.9)"),
    )
}

/// Best of `restarts` fits from random starting points, by final log-likelihood.
///
/// Starting points are drawn from `rng` up front; fits then run in parallel.
/// Ties go to the earliest restart. `runtime_ms` is the total over restarts.
pub fn fit_random_restarts<R: Rng + ?Sized>(
    r: &ResponseMatrix,
    n_classes: usize,
    restarts: usize,
    fixed_effect: bool,
    cfg: &EmConfig,
    rng: &mut R,
) -> Result<FitResult> {
    if restarts == 0 {
        return Err(LcmError::InvalidParameter("restarts must be >= 1".into()));
    }
    let inits: Vec<_> = (0..restarts)
        .map(|_| random_init(r.n_items(), n_classes, rng))
        .collect();
    let fits: Vec<FitResult> = inits
        .par_iter()
        .map(|(p, theta)| {
            if fixed_effect {
                cem_fixed(r, p, theta, cfg)
            } else {
                em_random(r, p, theta, cfg)
            }
        })
        .collect::<Result<_>>()?;
    let total_ms: f64 = fits.iter().map(|f| f.runtime_ms).sum();
    let mut best = 0;
    for (k, f) in fits.iter().enumerate() {
        if f.loglik > fits[best].loglik {
            best = k;
        }
    }
    let mut out = fits.into_iter().nth(best).expect("non-empty");
    out.runtime_ms = total_ms;
    Ok(out)
}

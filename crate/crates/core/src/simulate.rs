//! Synthetic designs, data generation and the method comparison harness.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{classify, cem_fixed, em_random, fit_random_restarts, loglik_fixed, loglik_random};
use crate::error::{LcmError, Result};
use crate::evaluation::{error_rate, mse};
use crate::selection::{fit_tensor_em, PipelineConfig};
use crate::spectral::tensor_estimate_averaged;
use crate::types::{ItemParams, LatentAssignment, MixingWeights, ModelKind, ResponseMatrix};

/// Well-separated item parameters.
pub const STRONG_POOL: [f64; 4] = [0.1, 0.2, 0.8, 0.9];
/// Weakly separated item parameters.
pub const WEAK_POOL: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

/// Default smallest class proportion for `l` classes.
pub fn default_p_floor(l: usize) -> f64 {
    if l == 0 {
        return 0.0;
    }
    (0.8 / l as f64).min(0.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub n: usize,
    pub j: usize,
    pub l: usize,
    pub theta_pool: Vec<f64>,
    pub model: ModelKind,
    pub p_floor: f64,
    pub seed: u64,
}

impl SimDesign {
    pub fn new(n: usize, j: usize, l: usize, model: ModelKind, seed: u64) -> Self {
        Self {
            n,
            j,
            l,
            theta_pool: STRONG_POOL.to_vec(),
            model,
            p_floor: default_p_floor(l),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.j < 3 {
            return Err(LcmError::TooFewItems { found: self.j });
        }
        if self.l == 0 {
            return Err(LcmError::InvalidParameter("need at least one class".into()));
        }
        if self.n < self.l {
            return Err(LcmError::InvalidParameter(format!(
                "N = {} is smaller than L = {}",
                self.n, self.l
            )));
        }
        if self.theta_pool.is_empty()
            || self.theta_pool.iter().any(|t| !(0.0..=1.0).contains(t))
        {
            return Err(LcmError::InvalidParameter(
                "theta pool must be a non-empty set of probabilities".into(),
            ));
        }
        if !(self.p_floor >= 0.0) || self.p_floor * self.l as f64 > 1.0 + 1e-12 {
            return Err(LcmError::InvalidParameter(format!(
                "p_floor {} is infeasible for {} classes",
                self.p_floor, self.l
            )));
        }
        Ok(())
    }

    /// Generator for stream `k` of this design. Stream 0 draws the truth.
    pub fn stream(&self, k: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Membership {
    Weights(MixingWeights),
    Labels(LatentAssignment),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub theta: ItemParams,
    pub membership: Membership,
}

/// Uniform draw from `{p : sum p = 1, p_a >= floor}`.
///
/// The constrained simplex is a scaled copy of the full one, so this is a
/// flat Dirichlet draw shifted by the floor.
pub fn constrained_simplex<R: Rng + ?Sized>(l: usize, floor: f64, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..l).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = e.iter().sum();
    let spare = (1.0 - floor * l as f64).max(0.0);
    e.iter().map(|x| floor + spare * x / total).collect()
}

pub fn gen_truth<R: Rng + ?Sized>(design: &SimDesign, rng: &mut R) -> Result<Truth> {
    design.validate()?;
    let pool = &design.theta_pool;
    let theta = ItemParams::new(DMatrix::from_fn(design.j, design.l, |_, _| {
        pool[rng.random_range(0..pool.len())]
    }))?;
    let membership = match design.model {
        ModelKind::Random => {
            let p = constrained_simplex(design.l, design.p_floor, rng);
            Membership::Weights(MixingWeights::new(p)?)
        }
        ModelKind::Fixed => {
            let z = (0..design.n).map(|_| rng.random_range(0..design.l)).collect();
            Membership::Labels(LatentAssignment::from_zero_based(z, design.l)?)
        }
    };
    Ok(Truth { theta, membership })
}

fn draw_class<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return a;
        }
    }
    p.len() - 1
}

pub fn gen_responses<R: Rng + ?Sized>(
    theta: &ItemParams,
    membership: &Membership,
    n: usize,
    rng: &mut R,
) -> Result<(ResponseMatrix, LatentAssignment)> {
    let (j, l) = (theta.n_items(), theta.n_classes());
    let z = match membership {
        Membership::Weights(p) => {
            if p.n_classes() != l {
                return Err(LcmError::DimensionMismatch(format!(
                    "{} weights for {} classes",
                    p.n_classes(),
                    l
                )));
            }
            let labels = (0..n).map(|_| draw_class(p.as_slice(), rng)).collect();
            LatentAssignment::from_zero_based(labels, l)?
        }
        Membership::Labels(z) => {
            if z.len() != n || z.n_classes() > l {
                return Err(LcmError::DimensionMismatch(format!(
                    "{} labels over {} classes for N = {} and L = {}",
                    z.len(),
                    z.n_classes(),
                    n,
                    l
                )));
            }
            LatentAssignment::from_zero_based(z.labels().to_vec(), l)?
        }
    };
    let mut data = Vec::with_capacity(n * j);
    for &a in z.labels() {
        for jj in 0..j {
            data.push(u8::from(rng.random::<f64>() < theta.get(jj, a)));
        }
    }
    Ok((ResponseMatrix::from_flat(n, j, data)?, z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    EmTrue,
    EmRandom,
    Tensor,
    TensorEm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::EmTrue, Method::EmRandom, Method::Tensor, Method::TensorEm];

    pub fn name(self) -> &'static str {
        match self {
            Method::EmTrue => "em_true",
            Method::EmRandom => "em_random",
            Method::Tensor => "tensor",
            Method::TensorEm => "tensor_em",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = LcmError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| LcmError::InvalidParameter(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub pipeline: PipelineConfig,
    /// Random starts for the EM-random baseline.
    pub em_restarts: usize,
    /// Item orderings averaged by the tensor-alone baseline.
    pub tensor_perms: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            em_restarts: 5,
            tensor_perms: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSetting {
    pub id: String,
    pub design: SimDesign,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub setting_id: String,
    pub method: Method,
    pub rep: usize,
    pub mse: Option<f64>,
    pub loglik: Option<f64>,
    pub runtime_ms: f64,
    /// Fixed-effect designs only.
    pub error_rate: Option<f64>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

struct MethodOutcome {
    theta: ItemParams,
    loglik: f64,
    z_hat: Option<LatentAssignment>,
    converged: bool,
}

fn run_method<R: Rng + ?Sized>(
    method: Method,
    model: ModelKind,
    truth: &Truth,
    r: &ResponseMatrix,
    cfg: &BenchConfig,
    rng: &mut R,
) -> Result<MethodOutcome> {
    let l = truth.theta.n_classes();
    let em = &cfg.pipeline.em;
    let from_fit = |fit: crate::types::FitResult| MethodOutcome {
        theta: fit.theta_hat,
        loglik: fit.loglik,
        z_hat: fit.z_hat,
        converged: fit.converged,
    };
    Ok(match method {
        Method::EmTrue => {
            let fit = match &truth.membership {
                Membership::Weights(p) => em_random(r, p, &truth.theta, em)?,
                Membership::Labels(_) => {
                    cem_fixed(r, &MixingWeights::uniform(l), &truth.theta, em)?
                }
            };
            from_fit(fit)
        }
        Method::EmRandom => from_fit(fit_random_restarts(
            r,
            l,
            cfg.em_restarts,
            model == ModelKind::Fixed,
            em,
            rng,
        )?),
        Method::Tensor => {
            let est = tensor_estimate_averaged(r, l, cfg.tensor_perms, &cfg.pipeline.power, rng)?;
            match model {
                ModelKind::Random => MethodOutcome {
                    loglik: loglik_random(r, &est.p_hat, &est.theta_hat)?,
                    theta: est.theta_hat,
                    z_hat: None,
                    converged: true,
                },
                ModelKind::Fixed => {
                    let z = classify(r, &est.theta_hat)?;
                    MethodOutcome {
                        loglik: loglik_fixed(r, &z, &est.theta_hat)?,
                        theta: est.theta_hat,
                        z_hat: Some(z),
                        converged: true,
                    }
                }
            }
        }
        Method::TensorEm => from_fit(fit_tensor_em(r, l, model, &cfg.pipeline, rng)?.1),
    })
}

fn run_rep(
    setting: &BenchSetting,
    truth: &Truth,
    methods: &[Method],
    rep: usize,
    cfg: &BenchConfig,
) -> Vec<BenchRow> {
    let design = &setting.design;
    let mut rng = design.stream(rep as u64 + 1);
    let row = |method, runtime_ms, res: Result<(Option<f64>, f64, Option<f64>, bool)>| match res {
        Ok((mse, loglik, error_rate, converged)) => BenchRow {
            setting_id: setting.id.clone(),
            method,
            rep,
            mse,
            loglik: Some(loglik),
            runtime_ms,
            error_rate,
            converged: Some(converged),
            error: None,
        },
        Err(e) => BenchRow {
            setting_id: setting.id.clone(),
            method,
            rep,
            mse: None,
            loglik: None,
            runtime_ms,
            error_rate: None,
            converged: None,
            error: Some(e.to_string()),
        },
    };
    let (r, z_real) = match gen_responses(&truth.theta, &truth.membership, design.n, &mut rng) {
        Ok(v) => v,
        Err(e) => {
            let msg = e.to_string();
            return methods
                .iter()
                .map(|&m| row(m, 0.0, Err(LcmError::InvalidParameter(msg.clone()))))
                .collect();
        }
    };
    methods
        .iter()
        .map(|&m| {
            let start = Instant::now();
            let res = run_method(m, design.model, truth, &r, cfg, &mut rng).and_then(|out| {
                let err = match (&out.z_hat, design.model) {
                    (Some(z), ModelKind::Fixed) => Some(error_rate(&z_real, z)?),
                    _ => None,
                };
                Ok((Some(mse(&truth.theta, &out.theta)?), out.loglik, err, out.converged))
            });
            row(m, start.elapsed().as_secs_f64() * 1e3, res)
        })
        .collect()
}

/// Runs every method on `reps` fresh data sets per setting.
///
/// The truth of a setting is drawn once from stream 0 of its seed; replication
/// `r` draws data and method randomness from stream `r + 1`. Replications run
/// on the current rayon pool; rows come back ordered by setting, rep, method.
/// Failures are recorded in the row and do not stop the run.
pub fn run_benchmark(
    settings: &[BenchSetting],
    methods: &[Method],
    reps: usize,
    cfg: &BenchConfig,
) -> Result<Vec<BenchRow>> {
    let mut out = Vec::new();
    for setting in settings {
        let truth = gen_truth(&setting.design, &mut setting.design.stream(0))?;
        let rows: Vec<Vec<BenchRow>> = (0..reps)
            .into_par_iter()
            .map(|rep| run_rep(setting, &truth, methods, rep, cfg))
            .collect();
        out.extend(rows.into_iter().flatten());
    }
    Ok(out)
}

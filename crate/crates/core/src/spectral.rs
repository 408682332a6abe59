//! Spectral estimation of latent class parameters.
//!
//! The pipeline whitens the third moment with the second, extracts the
//! orthogonal eigenpairs of the whitened tensor with the robust power method
//! and deflation, un-whitens them into class weights and view-1 item
//! parameters, and finally maps those to the other two views through the
//! cross moments.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LcmError, Result};
use crate::evaluation::align_columns;
use crate::moments::{empirical_moments, truncated_pinv, MomentPair, ViewPartition};
use crate::tensor::Tensor3;
use crate::types::{ItemParams, MixingWeights, ResponseMatrix};

/// Eigenvalues of `M2` at or below this fraction of the largest are dropped.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Iterates with a smaller norm signal a degenerate tensor.
pub const ZERO_NORM: f64 = 1e-300;
/// Lower clamp applied to class weights before renormalizing.
pub const WEIGHT_FLOOR: f64 = 1e-6;
/// Bounds of the revision applied to raw item-parameter estimates.
pub const THETA_LO: f64 = 0.001;
pub const THETA_HI: f64 = 0.999;

/// Settings of the robust tensor power method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerConfig {
    /// Random starting points per eigenpair.
    pub restarts: usize,
    /// Maximum power iterations per phase.
    pub iterations: usize,
    /// Early stop once consecutive iterates differ by less than this.
    pub tol: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            iterations: 30,
            tol: 1e-10,
        }
    }
}

impl PowerConfig {
    pub fn new(restarts: usize, iterations: usize) -> Result<Self> {
        if restarts == 0 || iterations == 0 {
            return Err(LcmError::InvalidParameter(
                "power method needs at least one restart and one iteration".to_string(),
            ));
        }
        Ok(Self {
            restarts,
            iterations,
            ..Self::default()
        })
    }
}

/// Whitening map `W` with `W^T M2 W = I`, plus `(W^T)^+` for un-whitening.
#[derive(Debug, Clone)]
pub struct WhiteningMap {
    /// `d x L`.
    pub w: DMatrix<f64>,
    /// `d x L` pseudoinverse of `W^T`.
    pub pinv_wt: DMatrix<f64>,
    /// Retained eigenvalues of `M2`, descending.
    pub eigvals: Vec<f64>,
}

/// `W = U D^{-1/2}` from the top `n_classes` eigenpairs of `m2`.
pub fn build_whitener(m2: &DMatrix<f64>, n_classes: usize) -> Result<WhiteningMap> {
    let d = m2.nrows();
    if m2.ncols() != d {
        return Err(LcmError::DimensionMismatch(
            "second moment is not square".to_string(),
        ));
    }
    if n_classes == 0 || n_classes > d {
        return Err(LcmError::InsufficientRank {
            found: d,
            needed: n_classes,
        });
    }
    let eig = SymmetricEigen::new(m2.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]];
    let found = order
        .iter()
        .filter(|&&i| top > 0.0 && eig.eigenvalues[i] > EIGEN_FLOOR * top)
        .count();
    if found < n_classes {
        return Err(LcmError::InsufficientRank {
            found,
            needed: n_classes,
        });
    }
    let keep = &order[..n_classes];
    let eigvals: Vec<f64> = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
    let w = DMatrix::from_fn(d, n_classes, |r, c| {
        eig.eigenvectors[(r, keep[c])] / eigvals[c].sqrt()
    });
    let pinv_wt = DMatrix::from_fn(d, n_classes, |r, c| {
        eig.eigenvectors[(r, keep[c])] * eigvals[c].sqrt()
    });
    Ok(WhiteningMap {
        w,
        pinv_wt,
        eigvals,
    })
}

/// Eigenvalue/eigenvector pairs of a (near) orthogonally decomposable tensor,
/// sorted by descending eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpairs {
    pub lambdas: Vec<f64>,
    pub vs: Vec<Vec<f64>>,
}

impl Eigenpairs {
    /// Largest `|v_i^T v_j|` over distinct pairs. Near zero only for exactly
    /// decomposable input; sampled tensors give small but nonzero values.
    pub fn max_coherence(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.vs.len() {
            for j in i + 1..self.vs.len() {
                worst = worst.max(dot(&self.vs[i], &self.vs[j]).abs());
            }
        }
        worst
    }
}

/// Output of one call of the robust power method.
#[derive(Debug, Clone)]
pub struct PowerResult {
    pub lambda: f64,
    pub v: Vec<f64>,
    pub deflated: Tensor3,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// One normalized step `T(I, theta, theta) / ||T(I, theta, theta)||`.
pub fn power_step(t: &Tensor3, theta: &[f64]) -> Result<Vec<f64>> {
    let mut y = t.contract_iuu(theta)?;
    let n = norm(&y);
    if !(n >= ZERO_NORM) {
        return Err(LcmError::ZeroIterate);
    }
    y.iter_mut().for_each(|x| *x /= n);
    Ok(y)
}

fn iterate(t: &Tensor3, mut theta: Vec<f64>, cfg: &PowerConfig) -> Result<Vec<f64>> {
    for _ in 0..cfg.iterations {
        let next = power_step(t, &theta)?;
        let delta = next
            .iter()
            .zip(&theta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        theta = next;
        if delta < cfg.tol {
            break;
        }
    }
    Ok(theta)
}

/// Draw a point uniformly from the unit sphere in `R^d`.
pub fn random_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Robust tensor power method: best of `cfg.restarts` random starts by
/// `T(theta, theta, theta)`, refined by a further round of iterations.
///
/// All starting points are drawn from `rng` before any iteration runs, in
/// restart order, so the result depends only on the seed.
pub fn robust_power_method<R: Rng + ?Sized>(
    t: &Tensor3,
    cfg: &PowerConfig,
    rng: &mut R,
) -> Result<PowerResult> {
    if cfg.restarts == 0 || cfg.iterations == 0 {
        return Err(LcmError::InvalidParameter(
            "power method needs at least one restart and one iteration".to_string(),
        ));
    }
    let starts: Vec<Vec<f64>> = (0..cfg.restarts)
        .map(|_| random_unit_vector(t.dim(), rng))
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        let theta = iterate(t, start, cfg)?;
        let score = t.contract_uuu(&theta)?;
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, theta));
        }
    }
    let (_, winner) = best.expect("at least one restart");
    let mut v = iterate(t, winner, cfg)?;
    let mut lambda = t.contract_uuu(&v)?;
    if lambda < 0.0 {
        lambda = -lambda;
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let deflated = t.deflate(lambda, &v)?;
    Ok(PowerResult {
        lambda,
        v,
        deflated,
    })
}

/// Extract `n_classes` eigenpairs by repeated power method and deflation.
pub fn decompose<R: Rng + ?Sized>(
    t: &Tensor3,
    n_classes: usize,
    cfg: &PowerConfig,
    rng: &mut R,
) -> Result<Eigenpairs> {
    let mut current = t.clone();
    let mut pairs = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let out = robust_power_method(&current, cfg, rng)?;
        if !(out.lambda > 0.0) || !out.lambda.is_finite() {
            return Err(LcmError::ZeroIterate);
        }
        pairs.push((out.lambda, out.v));
        current = out.deflated;
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (lambdas, vs) = pairs.into_iter().unzip();
    Ok(Eigenpairs { lambdas, vs })
}

/// Map whitened eigenpairs back to weights `1 / lambda^2` and columns
/// `lambda (W^T)^+ v`.
pub fn unwhiten(pairs: &Eigenpairs, wmap: &WhiteningMap) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let l = wmap.w.ncols();
    if pairs.lambdas.len() != l || pairs.vs.iter().any(|v| v.len() != l) {
        return Err(LcmError::DimensionMismatch(format!(
            "{} eigenpairs for a whitening map of rank {l}",
            pairs.lambdas.len()
        )));
    }
    let omegas = pairs.lambdas.iter().map(|lam| 1.0 / (lam * lam)).collect();
    let d = wmap.pinv_wt.nrows();
    let mut mus = DMatrix::zeros(d, l);
    for (c, (lam, v)) in pairs.lambdas.iter().zip(&pairs.vs).enumerate() {
        let col = &wmap.pinv_wt * nalgebra::DVector::from_column_slice(v) * *lam;
        mus.set_column(c, &col);
    }
    Ok((omegas, mus))
}

/// Recover view-2 and view-3 item parameters from those of view 1.
pub fn recover_other_views(
    mus1: &DMatrix<f64>,
    moments: &MomentPair,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let l = moments.n_classes;
    if mus1.nrows() != moments.cross_13.nrows() {
        return Err(LcmError::DimensionMismatch(format!(
            "view-1 parameters have {} rows, moments expect {}",
            mus1.nrows(),
            moments.cross_13.nrows()
        )));
    }
    let theta2 = &moments.cross_23 * truncated_pinv(&moments.cross_13, l)? * mus1;
    let theta3 = &moments.cross_32 * truncated_pinv(&moments.cross_12, l)? * mus1;
    Ok((theta2, theta3))
}

/// A clamped spectral estimate of `(p, theta)`.
#[derive(Debug, Clone)]
pub struct TensorEstimate {
    pub p_hat: MixingWeights,
    pub theta_hat: ItemParams,
    /// Number of raw entries that fell outside `[THETA_LO, THETA_HI]`.
    pub raw_violations: usize,
    /// Item parameters before clamping, `J x L`.
    pub raw_theta: DMatrix<f64>,
    /// Class weights before renormalization.
    pub raw_omegas: Vec<f64>,
}

/// Spectral estimate from precomputed (population or sample) moments.
pub fn estimate_from_moments<R: Rng + ?Sized>(
    moments: &MomentPair,
    part: &ViewPartition,
    n_items: usize,
    cfg: &PowerConfig,
    rng: &mut R,
) -> Result<TensorEstimate> {
    if !part.covers(n_items) {
        return Err(LcmError::InvalidPartition(
            "spectral estimation needs every item in some view".to_string(),
        ));
    }
    let l = moments.n_classes;
    let wmap = build_whitener(&moments.m2, l)?;
    let whitened = moments.m3.contract_www(&wmap.w)?.symmetrize();
    let pairs = decompose(&whitened, l, cfg, rng)?;
    let (omegas, mus1) = unwhiten(&pairs, &wmap)?;
    let (theta2, theta3) = recover_other_views(&mus1, moments)?;

    let mut raw = DMatrix::zeros(n_items, l);
    for (t, block) in [&mus1, &theta2, &theta3].into_iter().enumerate() {
        for (r, &item) in part.view(t).iter().enumerate() {
            raw.set_row(item, &block.row(r));
        }
    }
    let p_hat = MixingWeights::normalized(&omegas, WEIGHT_FLOOR)?;
    let (theta_hat, raw_violations) = ItemParams::clamp_raw(&raw, THETA_LO, THETA_HI)?;
    Ok(TensorEstimate {
        p_hat,
        theta_hat,
        raw_violations,
        raw_theta: raw,
        raw_omegas: omegas,
    })
}

/// Full spectral pipeline on a response matrix.
pub fn tensor_estimate<R: Rng + ?Sized>(
    r: &ResponseMatrix,
    n_classes: usize,
    part: &ViewPartition,
    cfg: &PowerConfig,
    rng: &mut R,
) -> Result<TensorEstimate> {
    let moments = empirical_moments(r, part, n_classes)?;
    estimate_from_moments(&moments, part, r.n_items(), cfg, rng)
}

/// Average of spectral estimates over `n_perms` random item orderings.
///
/// Each run uses contiguous thirds of a freshly shuffled item order; its
/// estimate is already indexed by original item. Runs are column-aligned to
/// the first successful one before averaging. Failed runs are skipped; the
/// call fails only if every run fails.
pub fn tensor_estimate_averaged<R: Rng + ?Sized>(
    r: &ResponseMatrix,
    n_classes: usize,
    n_perms: usize,
    cfg: &PowerConfig,
    rng: &mut R,
) -> Result<TensorEstimate> {
    use rand::seq::SliceRandom;

    let j = r.n_items();
    let mut runs: Vec<TensorEstimate> = Vec::new();
    let mut last_err = None;
    for _ in 0..n_perms.max(1) {
        let mut perm: Vec<usize> = (0..j).collect();
        perm.shuffle(rng);
        let part = ViewPartition::default_partition(j, n_classes, Some(&perm))?;
        match tensor_estimate(r, n_classes, &part, cfg, rng) {
            Ok(est) => runs.push(est),
            Err(e) => last_err = Some(e),
        }
    }
    if runs.is_empty() {
        return Err(last_err.expect("at least one run attempted"));
    }
    let reference = runs[0].theta_hat.clone();
    let mut theta_sum = DMatrix::zeros(j, n_classes);
    let mut raw_sum = DMatrix::zeros(j, n_classes);
    let mut p_sum = vec![0.0; n_classes];
    let mut violations = 0;
    for run in &runs {
        let (perm, aligned) = align_columns(&reference, &run.theta_hat)?;
        theta_sum += aligned.matrix();
        for (k, &src) in perm.iter().enumerate() {
            raw_sum.set_column(k, &run.raw_theta.column(src));
            p_sum[k] += run.p_hat.as_slice()[src];
        }
        violations += run.raw_violations;
    }
    let count = runs.len() as f64;
    let theta_hat = ItemParams::new(theta_sum / count)?;
    let p_hat = MixingWeights::normalized(&p_sum, 0.0)?;
    Ok(TensorEstimate {
        p_hat,
        theta_hat,
        raw_violations: violations,
        raw_theta: raw_sum / count,
        raw_omegas: p_sum.iter().map(|v| v / count).collect(),
    })
}

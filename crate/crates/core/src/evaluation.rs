//! Estimation error after label alignment, and clustering error counts.

use crate::error::{LcmError, Result};
use crate::types::{ItemParams, LatentAssignment};

/// Largest class count aligned by exhaustive search; above it a greedy match is used.
pub const EXHAUSTIVE_MAX_CLASSES: usize = 8;

fn same_shape(a: &ItemParams, b: &ItemParams) -> Result<()> {
    if a.n_items() != b.n_items() || a.n_classes() != b.n_classes() {
        return Err(LcmError::DimensionMismatch(format!(
            "{}x{} versus {}x{}",
            a.n_items(),
            a.n_classes(),
            b.n_items(),
            b.n_classes()
        )));
    }
    Ok(())
}

/// `cost[k][m]`: squared distance between true column `k` and estimated column `m`.
fn column_costs(theta_true: &ItemParams, theta_hat: &ItemParams) -> Vec<Vec<f64>> {
    let l = theta_true.n_classes();
    (0..l)
        .map(|k| {
            (0..l)
                .map(|m| {
                    (theta_true.matrix().column(k) - theta_hat.matrix().column(m)).norm_squared()
                })
                .collect()
        })
        .collect()
}

fn search(
    cost: &[Vec<f64>],
    k: usize,
    used: &mut [bool],
    cur: &mut Vec<usize>,
    acc: f64,
    best: &mut (f64, Vec<usize>),
) {
    let l = cost.len();
    if acc >= best.0 {
        return;
    }
    if k == l {
        *best = (acc, cur.clone());
        return;
    }
    for m in 0..l {
        if !used[m] {
            used[m] = true;
            cur.push(m);
            search(cost, k + 1, used, cur, acc + cost[k][m], best);
            cur.pop();
            used[m] = false;
        }
    }
}

fn greedy(cost: &[Vec<f64>]) -> Vec<usize> {
    let l = cost.len();
    let mut perm = vec![usize::MAX; l];
    let mut used = vec![false; l];
    for _ in 0..l {
        let mut pick = (f64::INFINITY, 0, 0);
        for k in (0..l).filter(|&k| perm[k] == usize::MAX) {
            for m in (0..l).filter(|&m| !used[m]) {
                if cost[k][m] < pick.0 {
                    pick = (cost[k][m], k, m);
                }
            }
        }
        let (_, k, m) = pick;
        perm[k] = m;
        used[m] = true;
    }
    perm
}

/// Column relabeling of `theta_hat` closest to `theta_true` in Frobenius norm.
///
/// Returns `perm` with `perm[k]` the estimated column matched to true column `k`,
/// and the estimate with its columns reordered accordingly.
pub fn align_columns(
    theta_true: &ItemParams,
    theta_hat: &ItemParams,
) -> Result<(Vec<usize>, ItemParams)> {
    same_shape(theta_true, theta_hat)?;
    let l = theta_true.n_classes();
    let cost = column_costs(theta_true, theta_hat);
    let perm = if l <= EXHAUSTIVE_MAX_CLASSES {
        // The identity seeds the bound so exact ties keep the identity.
        let id: Vec<usize> = (0..l).collect();
        let id_cost = (0..l).map(|k| cost[k][k]).sum::<f64>();
        let mut best = (id_cost, id);
        let mut used = vec![false; l];
        search(&cost, 0, &mut used, &mut Vec::with_capacity(l), 0.0, &mut best);
        best.1
    } else {
        greedy(&cost)
    };
    let aligned = theta_hat.permute_columns(&perm)?;
    Ok((perm, aligned))
}

/// Mean squared error per entry after alignment.
pub fn mse(theta_true: &ItemParams, theta_hat: &ItemParams) -> Result<f64> {
    let (_, aligned) = align_columns(theta_true, theta_hat)?;
    let n = (theta_true.n_items() * theta_true.n_classes()) as f64;
    Ok((theta_true.matrix() - aligned.matrix()).norm_squared() / n)
}

/// Subjects whose true class differs from the majority true class of their
/// estimated cluster. Majority ties go to the smaller class label.
pub fn clustering_errors(z_true: &LatentAssignment, z_hat: &LatentAssignment) -> Result<usize> {
    if z_true.len() != z_hat.len() {
        return Err(LcmError::DimensionMismatch(format!(
            "{} true labels, {} estimated",
            z_true.len(),
            z_hat.len()
        )));
    }
    let (lt, lh) = (z_true.n_classes(), z_hat.n_classes());
    let mut counts = vec![0usize; lt * lh];
    for (&a, &b) in z_true.labels().iter().zip(z_hat.labels()) {
        counts[b * lt + a] += 1;
    }
    let matched: usize = counts
        .chunks(lt.max(1))
        .map(|c| c.iter().copied().max().unwrap_or(0))
        .sum();
    Ok(z_true.len() - matched)
}

pub fn error_rate(z_true: &LatentAssignment, z_hat: &LatentAssignment) -> Result<f64> {
    let n = clustering_errors(z_true, z_hat)?;
    if z_true.is_empty() {
        return Ok(0.0);
    }
    Ok(n as f64 / z_true.len() as f64)
}

/// Majority true class of each estimated cluster, `None` for empty clusters.
pub fn majority_labels(z_true: &LatentAssignment, z_hat: &LatentAssignment) -> Result<Vec<Option<usize>>> {
    if z_true.len() != z_hat.len() {
        return Err(LcmError::DimensionMismatch(format!(
            "{} true labels, {} estimated",
            z_true.len(),
            z_hat.len()
        )));
    }
    let lt = z_true.n_classes();
    let mut counts = vec![vec![0usize; lt]; z_hat.n_classes()];
    for (&a, &b) in z_true.labels().iter().zip(z_hat.labels()) {
        counts[b][a] += 1;
    }
    Ok(counts
        .iter()
        .map(|c| {
            let mut best: Option<usize> = None;
            for (a, &n) in c.iter().enumerate() {
                if n > 0 && best.is_none_or(|b| n > c[b]) {
                    best = Some(a);
                }
            }
            best
        })
        .collect())
}

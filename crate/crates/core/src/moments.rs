//! Three-view partitions and the second/third moments whose rank-one
//! structure the spectral estimator decomposes.
//!
//! With views `R1, R2, R3` and cross moments `E[Rs (x) Rt]`, the transformed
//! views `R2' = E[R1 R3] E[R2 R3]^+ R2` and `R3' = E[R1 R2] E[R3 R2]^+ R3`
//! give `M2 = E[R1 (x) R2']` and `M3 = E[R1 (x) R2' (x) R3']`, which equal
//! `sum_i p_i theta_1i^(x)2` and `sum_i p_i theta_1i^(x)3` respectively.

use nalgebra::DMatrix;

use crate::error::{LcmError, Result};
use crate::tensor::Tensor3;
use crate::types::{check_permutation, ItemParams, MixingWeights, ResponseMatrix};

/// Singular values below this fraction of the largest are treated as zero.
pub const SINGULAR_FLOOR: f64 = 1e-12;

/// Relative rank tolerance used to check full column rank of a view.
pub const VIEW_RANK_TOL: f64 = 1e-10;

/// Three disjoint, ordered lists of 0-based item indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewPartition {
    views: [Vec<usize>; 3],
}

impl ViewPartition {
    /// Validate an explicit partition of items `0..n_items` for `n_classes` classes.
    pub fn new(views: [Vec<usize>; 3], n_items: usize, n_classes: usize) -> Result<Self> {
        let mut seen = vec![false; n_items];
        for (t, view) in views.iter().enumerate() {
            if view.len() < n_classes {
                return Err(LcmError::InvalidPartition(format!(
                    "view {} has {} items, fewer than {n_classes} classes",
                    t + 1,
                    view.len()
                )));
            }
            for &j in view {
                if j >= n_items {
                    return Err(LcmError::InvalidPartition(format!(
                        "item {} out of range",
                        j + 1
                    )));
                }
                if seen[j] {
                    return Err(LcmError::InvalidPartition(format!(
                        "item {} appears in more than one view",
                        j + 1
                    )));
                }
                seen[j] = true;
            }
        }
        Ok(Self { views })
    }

    /// Contiguous thirds of `0..n_items`, optionally after reordering the items.
    ///
    /// `permutation[k]` is the item placed at position `k`. View sizes are
    /// `ceil(J/3)`, `ceil((J - ceil(J/3)) / 2)` and the remainder.
    pub fn default_partition(
        n_items: usize,
        n_classes: usize,
        permutation: Option<&[usize]>,
    ) -> Result<Self> {
        if n_classes == 0 || n_items < 3 * n_classes {
            return Err(LcmError::TooFewItemsForViews {
                items: n_items,
                classes: n_classes,
            });
        }
        let order: Vec<usize> = match permutation {
            Some(p) => {
                check_permutation(p, n_items)?;
                p.to_vec()
            }
            None => (0..n_items).collect(),
        };
        let s1 = n_items.div_ceil(3);
        let s2 = (n_items - s1).div_ceil(2);
        let views = [
            order[..s1].to_vec(),
            order[s1..s1 + s2].to_vec(),
            order[s1 + s2..].to_vec(),
        ];
        Self::new(views, n_items, n_classes)
    }

    pub fn view(&self, t: usize) -> &[usize] {
        &self.views[t]
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.views[0].len(), self.views[1].len(), self.views[2].len()]
    }

    pub fn covers(&self, n_items: usize) -> bool {
        self.views.iter().map(Vec::len).sum::<usize>() == n_items
    }
}

/// Second and third moments of view 1 plus the cross moments needed to
/// recover the parameters of views 2 and 3.
#[derive(Debug, Clone)]
pub struct MomentPair {
    pub m2: DMatrix<f64>,
    pub m3: Tensor3,
    /// `E[R1 (x) R3]`, `J1 x J3`.
    pub cross_13: DMatrix<f64>,
    /// `E[R1 (x) R2]`, `J1 x J2`.
    pub cross_12: DMatrix<f64>,
    /// `E[R3 (x) R2]`, `J3 x J2`.
    pub cross_32: DMatrix<f64>,
    /// `E[R2 (x) R3]`, `J2 x J3`.
    pub cross_23: DMatrix<f64>,
    pub n_classes: usize,
}

fn sub_rows(theta: &ItemParams, rows: &[usize]) -> DMatrix<f64> {
    let m = theta.matrix();
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Exact moments of a model with parameters `(p, theta)`.
pub fn population_moments(
    theta: &ItemParams,
    p: &MixingWeights,
    part: &ViewPartition,
) -> Result<MomentPair> {
    let l = theta.n_classes();
    if p.n_classes() != l {
        return Err(LcmError::DimensionMismatch(format!(
            "{} mixing weights for {l} classes",
            p.n_classes()
        )));
    }
    let blocks: Vec<DMatrix<f64>> = (0..3).map(|t| sub_rows(theta, part.view(t))).collect();
    for (t, b) in blocks.iter().enumerate() {
        if numerical_rank(b, VIEW_RANK_TOL) < l {
            return Err(LcmError::RankDeficientView {
                view: t + 1,
                classes: l,
            });
        }
    }
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(p.as_slice()));
    let cross = |s: usize, t: usize| &blocks[s] * &d * blocks[t].transpose();

    let t1 = &blocks[0];
    let mut m3 = Tensor3::zeros(t1.nrows());
    for (i, &w) in p.as_slice().iter().enumerate() {
        let col: Vec<f64> = t1.column(i).iter().copied().collect();
        m3.add_outer(w, &col, &col, &col);
    }
    Ok(MomentPair {
        m2: cross(0, 0),
        m3,
        cross_13: cross(0, 2),
        cross_12: cross(0, 1),
        cross_32: cross(2, 1),
        cross_23: cross(1, 2),
        n_classes: l,
    })
}

/// Moore-Penrose pseudoinverse keeping only the top `rank` singular triplets.
///
/// Singular values at or below `SINGULAR_FLOOR * sigma_max` count as zero;
/// fewer than `rank` nonzero values is a [`LcmError::RankCollapse`].
pub fn truncated_pinv(a: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let (m, n) = a.shape();
    if rank == 0 || m.min(n) < rank {
        return Err(LcmError::RankCollapse {
            found: m.min(n),
            needed: rank,
        });
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let sv = &svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&x, &y| sv[y].total_cmp(&sv[x]).then(x.cmp(&y)));
    let sigma_max = sv[order[0]];
    let nonzero = order
        .iter()
        .filter(|&&i| sigma_max > 0.0 && sv[i] > SINGULAR_FLOOR * sigma_max)
        .count();
    if nonzero < rank {
        return Err(LcmError::RankCollapse {
            found: nonzero,
            needed: rank,
        });
    }

    let mut pinv = DMatrix::zeros(n, m);
    for &i in &order[..rank] {
        let inv = 1.0 / sv[i];
        // pinv += v_i * inv * u_i^T
        for r in 0..n {
            let vr = v_t[(i, r)] * inv;
            if vr == 0.0 {
                continue;
            }
            for c in 0..m {
                pinv[(r, c)] += vr * u[(c, i)];
            }
        }
    }
    Ok(pinv)
}

/// Sample moments of a response matrix, built in one pass over the rows.
///
/// The pass accumulates the pairwise cross moments and the raw third cross
/// moment `E[R1 (x) R2 (x) R3]`; the transformed views enter only through
/// linear maps, so `M2` and `M3` follow from those sums without revisiting
/// the data.
pub fn empirical_moments(
    r: &ResponseMatrix,
    part: &ViewPartition,
    n_classes: usize,
) -> Result<MomentPair> {
    let n = r.n_subjects();
    if n < n_classes {
        return Err(LcmError::InvalidParameter(format!(
            "{n} subjects cannot support {n_classes} classes"
        )));
    }
    let [j1, j2, j3] = part.sizes();
    let (v1, v2, v3) = (part.view(0), part.view(1), part.view(2));
    if v1.iter().chain(v2).chain(v3).any(|&j| j >= r.n_items()) {
        return Err(LcmError::InvalidPartition(
            "partition references items beyond the response matrix".to_string(),
        ));
    }

    let mut c12 = vec![0u64; j1 * j2];
    let mut c13 = vec![0u64; j1 * j3];
    let mut c23 = vec![0u64; j2 * j3];
    let mut c123 = vec![0u64; j1 * j2 * j3];
    let (mut on1, mut on2, mut on3) = (Vec::new(), Vec::new(), Vec::new());
    for row in r.rows() {
        on1.clear();
        on2.clear();
        on3.clear();
        on1.extend((0..j1).filter(|&a| row[v1[a]] == 1));
        on2.extend((0..j2).filter(|&b| row[v2[b]] == 1));
        on3.extend((0..j3).filter(|&c| row[v3[c]] == 1));
        for &b in &on2 {
            for &c in &on3 {
                c23[b * j3 + c] += 1;
            }
        }
        for &a in &on1 {
            for &c in &on3 {
                c13[a * j3 + c] += 1;
            }
            for &b in &on2 {
                c12[a * j2 + b] += 1;
                let base = (a * j2 + b) * j3;
                for &c in &on3 {
                    c123[base + c] += 1;
                }
            }
        }
    }

    let nf = n as f64;
    let to_mat = |rows: usize, cols: usize, counts: &[u64]| {
        DMatrix::from_fn(rows, cols, |x, y| counts[x * cols + y] as f64 / nf)
    };
    let cross_12 = to_mat(j1, j2, &c12);
    let cross_13 = to_mat(j1, j3, &c13);
    let cross_23 = to_mat(j2, j3, &c23);
    let cross_32 = cross_23.transpose();

    // R2' = a2 R2, R3' = a3 R3.
    let a2 = &cross_13 * truncated_pinv(&cross_23, n_classes)?;
    let a3 = &cross_12 * truncated_pinv(&cross_32, n_classes)?;

    let m2_raw = &cross_12 * a2.transpose();
    let m2 = (&m2_raw + m2_raw.transpose()) * 0.5;

    // M3[i,j,k] = sum_{b,c} E123[i,b,c] a2[j,b] a3[k,c]
    // step[i][b][k] = sum_c E123[i,b,c] a3[k,c]
    let mut step = vec![0.0; j1 * j2 * j1];
    for ib in 0..j1 * j2 {
        let src = &c123[ib * j3..(ib + 1) * j3];
        for k in 0..j1 {
            let mut s = 0.0;
            for (c, &cnt) in src.iter().enumerate() {
                if cnt != 0 {
                    s += cnt as f64 * a3[(k, c)];
                }
            }
            step[ib * j1 + k] = s / nf;
        }
    }
    let mut m3 = vec![0.0; j1 * j1 * j1];
    for i in 0..j1 {
        for b in 0..j2 {
            let src = &step[(i * j2 + b) * j1..(i * j2 + b + 1) * j1];
            for j in 0..j1 {
                let w = a2[(j, b)];
                let dst = &mut m3[(i * j1 + j) * j1..(i * j1 + j + 1) * j1];
                for (x, s) in dst.iter_mut().zip(src) {
                    *x += w * s;
                }
            }
        }
    }

    Ok(MomentPair {
        m2,
        m3: Tensor3::from_entries(j1, m3)?,
        cross_13,
        cross_12,
        cross_32,
        cross_23,
        n_classes,
    })
}

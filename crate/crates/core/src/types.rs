//! Domain types shared by every stage of the pipeline.
//!
//! All types validate on construction and are immutable afterwards. Class
//! labels are stored 0-based internally and are 1-based wherever they cross
//! a serialization boundary.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LcmError, Result};

/// Absolute tolerance on the sum of a probability vector.
pub const PROB_SUM_TOL: f64 = 1e-10;

/// Random-effect (marginal) or fixed-effect (joint) latent class model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Random,
    Fixed,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Random => f.write_str("random"),
            ModelKind::Fixed => f.write_str("fixed"),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = LcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(ModelKind::Random),
            "fixed" => Ok(ModelKind::Fixed),
            other => Err(LcmError::InvalidParameter(format!(
                "unknown model kind '{other}'"
            ))),
        }
    }
}

/// N x J matrix of binary responses, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<u8>>", into = "Vec<Vec<u8>>")]
pub struct ResponseMatrix {
    n_subjects: usize,
    n_items: usize,
    data: Vec<u8>,
}

impl ResponseMatrix {
    /// Validate a rectangular integer matrix.
    pub fn validate<T>(raw: &[Vec<T>]) -> Result<Self>
    where
        T: Copy + Into<i64>,
    {
        let n = raw.len();
        if n == 0 {
            return Err(LcmError::NoSubjects);
        }
        let j = raw[0].len();
        let mut data = Vec::with_capacity(n * j);
        for (row, values) in raw.iter().enumerate() {
            if values.len() != j {
                return Err(LcmError::RaggedRow {
                    row,
                    found: values.len(),
                    expected: j,
                });
            }
            for (col, &v) in values.iter().enumerate() {
                match v.into() {
                    0 => data.push(0),
                    1 => data.push(1),
                    _ => return Err(LcmError::NonBinaryEntry { row, col }),
                }
            }
        }
        if j < 3 {
            return Err(LcmError::TooFewItems { found: j });
        }
        Ok(Self {
            n_subjects: n,
            n_items: j,
            data,
        })
    }

    /// Build from a flat row-major buffer.
    pub fn from_flat(n_subjects: usize, n_items: usize, data: Vec<u8>) -> Result<Self> {
        if n_subjects == 0 {
            return Err(LcmError::NoSubjects);
        }
        if data.len() != n_subjects * n_items {
            return Err(LcmError::DimensionMismatch(format!(
                "buffer of {} values for a {n_subjects}x{n_items} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|&v| v > 1) {
            return Err(LcmError::NonBinaryEntry {
                row: pos / n_items,
                col: pos % n_items,
            });
        }
        if n_items < 3 {
            return Err(LcmError::TooFewItems { found: n_items });
        }
        Ok(Self {
            n_subjects,
            n_items,
            data,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.n_items..(i + 1) * self.n_items]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.n_items + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks_exact(self.n_items)
    }

    /// Column `k` of the result is column `perm[k]` of `self`.
    pub fn permute_items(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n_items)?;
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.rows() {
            data.extend(perm.iter().map(|&src| row[src]));
        }
        Ok(Self {
            n_subjects: self.n_subjects,
            n_items: self.n_items,
            data,
        })
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut sums = vec![0usize; self.n_items];
        for row in self.rows() {
            for (s, &v) in sums.iter_mut().zip(row) {
                *s += v as usize;
            }
        }
        sums.into_iter()
            .map(|s| s as f64 / self.n_subjects as f64)
            .collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.rows().map(|r| r.to_vec()).collect()
    }
}

impl TryFrom<Vec<Vec<u8>>> for ResponseMatrix {
    type Error = LcmError;

    fn try_from(rows: Vec<Vec<u8>>) -> Result<Self> {
        Self::validate(&rows)
    }
}

impl From<ResponseMatrix> for Vec<Vec<u8>> {
    fn from(r: ResponseMatrix) -> Self {
        r.to_rows()
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(LcmError::InvalidParameter(format!(
            "permutation has length {}, expected {n}",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(LcmError::InvalidParameter(
                "not a permutation of 0..n".to_string(),
            ));
        }
        seen[p] = true;
    }
    Ok(())
}

/// J x L matrix of positive-response probabilities, `theta[(j, a)]`.
///
/// Entries are finite and lie in [0, 1]. Estimates used inside likelihoods
/// should satisfy [`ItemParams::is_interior`]; raw spectral output is kept
/// as a plain matrix until it has been clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ItemParams {
    theta: DMatrix<f64>,
}

impl ItemParams {
    pub fn new(theta: DMatrix<f64>) -> Result<Self> {
        if theta.nrows() == 0 || theta.ncols() == 0 {
            return Err(LcmError::InvalidParameter(
                "item parameter matrix is empty".to_string(),
            ));
        }
        if let Some(bad) = theta
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(LcmError::InvalidParameter(format!(
                "item parameter {bad} outside [0, 1]"
            )));
        }
        Ok(Self { theta })
    }

    /// Build from J rows of L values each.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let j = rows.len();
        let l = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != l) {
            return Err(LcmError::DimensionMismatch(
                "item parameter rows have unequal lengths".to_string(),
            ));
        }
        Self::new(DMatrix::from_fn(j, l, |r, c| rows[r][c]))
    }

    /// Clamp every entry into `[lo, hi]`, returning the number of entries moved.
    /// Non-finite entries count as violations and are mapped to the nearest bound
    /// (NaN goes to `lo`).
    pub fn clamp_raw(raw: &DMatrix<f64>, lo: f64, hi: f64) -> Result<(Self, usize)> {
        let mut violations = 0;
        let theta = raw.map(|v| {
            if v.is_nan() {
                violations += 1;
                lo
            } else if v < lo {
                violations += 1;
                lo
            } else if v > hi {
                violations += 1;
                hi
            } else {
                v
            }
        });
        Ok((Self::new(theta)?, violations))
    }

    pub fn n_items(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.theta.ncols()
    }

    #[inline]
    pub fn get(&self, j: usize, a: usize) -> f64 {
        self.theta[(j, a)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.theta
    }

    pub fn is_interior(&self) -> bool {
        self.theta.iter().all(|&v| v > 0.0 && v < 1.0)
    }

    /// Column `k` of the result is column `perm[k]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n_classes())?;
        let theta = DMatrix::from_fn(self.n_items(), self.n_classes(), |r, c| {
            self.theta[(r, perm[c])]
        });
        Ok(Self { theta })
    }

    /// Row `k` of the result is row `perm[k]` of `self`.
    pub fn permute_items(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n_items())?;
        let theta = DMatrix::from_fn(self.n_items(), self.n_classes(), |r, c| {
            self.theta[(perm[r], c)]
        });
        Ok(Self { theta })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_items())
            .map(|r| self.theta.row(r).iter().copied().collect())
            .collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for ItemParams {
    type Error = LcmError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<ItemParams> for Vec<Vec<f64>> {
    fn from(t: ItemParams) -> Self {
        t.to_rows()
    }
}

/// Class proportions on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MixingWeights {
    p: Vec<f64>,
}

impl MixingWeights {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(LcmError::InvalidParameter(
                "mixing weights are empty".to_string(),
            ));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(LcmError::InvalidParameter(
                "mixing weights must be finite and nonnegative".to_string(),
            ));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(LcmError::InvalidParameter(format!(
                "mixing weights sum to {sum}, not 1"
            )));
        }
        Ok(Self { p })
    }

    pub fn uniform(n_classes: usize) -> Self {
        Self {
            p: vec![1.0 / n_classes as f64; n_classes],
        }
    }

    /// Clamp below at `floor` and rescale to sum to one.
    pub fn normalized(raw: &[f64], floor: f64) -> Result<Self> {
        let clamped: Vec<f64> = raw
            .iter()
            .map(|&v| if v.is_nan() || v < floor { floor } else { v })
            .collect();
        let sum: f64 = clamped.iter().sum();
        Self::new(clamped.into_iter().map(|v| v / sum).collect())
    }

    pub fn n_classes(&self) -> usize {
        self.p.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    /// Entry `k` of the result is entry `perm[k]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.p.len())?;
        Ok(Self {
            p: perm.iter().map(|&i| self.p[i]).collect(),
        })
    }
}

impl TryFrom<Vec<f64>> for MixingWeights {
    type Error = LcmError;

    fn try_from(p: Vec<f64>) -> Result<Self> {
        Self::new(p)
    }
}

impl From<MixingWeights> for Vec<f64> {
    fn from(w: MixingWeights) -> Self {
        w.p
    }
}

/// Hard class membership for each subject.
///
/// Serializes as a list of 1-based labels; when deserialized the number of
/// classes is taken to be the largest label present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LatentAssignment {
    labels: Vec<usize>,
    n_classes: usize,
}

impl LatentAssignment {
    pub fn from_zero_based(labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if n_classes == 0 {
            return Err(LcmError::InvalidParameter(
                "assignment needs at least one class".to_string(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&z| z >= n_classes) {
            return Err(LcmError::InvalidParameter(format!(
                "class label {} outside 1..={n_classes}",
                bad + 1
            )));
        }
        Ok(Self { labels, n_classes })
    }

    pub fn from_one_based(labels: &[usize], n_classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&z| z == 0 || z > n_classes) {
            return Err(LcmError::InvalidParameter(format!(
                "class label {bad} outside 1..={n_classes}"
            )));
        }
        Self::from_zero_based(labels.iter().map(|z| z - 1).collect(), n_classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// 0-based labels.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.labels.iter().map(|z| z + 1).collect()
    }

    /// N x L indicator matrix with a single 1 per row.
    pub fn one_hot(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.labels.len(), self.n_classes);
        for (i, &a) in self.labels.iter().enumerate() {
            z[(i, a)] = 1.0;
        }
        z
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_classes];
        for &a in &self.labels {
            sizes[a] += 1;
        }
        sizes
    }
}

impl TryFrom<Vec<usize>> for LatentAssignment {
    type Error = LcmError;

    fn try_from(labels: Vec<usize>) -> Result<Self> {
        let n_classes = labels.iter().copied().max().unwrap_or(0);
        Self::from_one_based(&labels, n_classes)
    }
}

impl From<LatentAssignment> for Vec<usize> {
    fn from(z: LatentAssignment) -> Self {
        z.to_one_based()
    }
}

/// Output of any fitting method.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta_hat: ItemParams,
    pub p_hat: Option<MixingWeights>,
    pub z_hat: Option<LatentAssignment>,
    pub loglik: f64,
    pub n_iterations: usize,
    pub converged: bool,
    pub runtime_ms: f64,
    /// Log-likelihood after each iteration, for diagnostics.
    pub loglik_trace: Vec<f64>,
}

impl FitResult {
    pub fn random(theta_hat: ItemParams, p_hat: MixingWeights, loglik: f64) -> Self {
        Self {
            theta_hat,
            p_hat: Some(p_hat),
            z_hat: None,
            loglik,
            n_iterations: 0,
            converged: true,
            runtime_ms: 0.0,
            loglik_trace: Vec::new(),
        }
    }

    pub fn fixed(theta_hat: ItemParams, z_hat: LatentAssignment, loglik: f64) -> Self {
        Self {
            theta_hat,
            p_hat: None,
            z_hat: Some(z_hat),
            loglik,
            n_iterations: 0,
            converged: true,
            runtime_ms: 0.0,
            loglik_trace: Vec::new(),
        }
    }

    pub fn model(&self) -> ModelKind {
        if self.z_hat.is_some() {
            ModelKind::Fixed
        } else {
            ModelKind::Random
        }
    }

    pub fn n_classes(&self) -> usize {
        self.theta_hat.n_classes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn validates_binary_matrix() {
        let r = ResponseMatrix::validate(&[vec![1i64, 0, 1], vec![0, 0, 1]]).unwrap();
        assert_eq!((r.n_subjects(), r.n_items()), (2, 3));
        assert_eq!(r.row(1), &[0, 0, 1]);
    }

    #[test]
    fn rejects_non_binary_entry() {
        let err = ResponseMatrix::validate(&[vec![1i64, 2, 1]]).unwrap_err();
        assert_eq!(err, LcmError::NonBinaryEntry { row: 0, col: 1 });
    }

    #[test]
    fn rejects_two_items() {
        let err = ResponseMatrix::validate(&[vec![1i64, 0], vec![0, 1]]).unwrap_err();
        assert_eq!(err, LcmError::TooFewItems { found: 2 });
    }

    #[test]
    fn rejects_ragged_and_empty() {
        assert!(matches!(
            ResponseMatrix::validate(&[vec![1i64, 0, 1], vec![0, 1]]),
            Err(LcmError::RaggedRow { row: 1, .. })
        ));
        let empty: Vec<Vec<i64>> = vec![];
        assert_eq!(
            ResponseMatrix::validate(&empty).unwrap_err(),
            LcmError::NoSubjects
        );
    }

    #[test]
    fn mixing_weights_tolerance() {
        assert!(MixingWeights::new(vec![0.5, 0.5 + 5e-11]).is_ok());
        assert!(MixingWeights::new(vec![0.5, 0.5 + 1e-9]).is_err());
        assert!(MixingWeights::new(vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn assignment_labels_are_bounded() {
        assert!(LatentAssignment::from_one_based(&[1, 2, 3], 3).is_ok());
        assert!(LatentAssignment::from_one_based(&[0, 1], 3).is_err());
        assert!(LatentAssignment::from_one_based(&[4], 3).is_err());
        let z = LatentAssignment::from_one_based(&[2, 1, 2], 2).unwrap();
        let hot = z.one_hot();
        for i in 0..3 {
            assert_eq!(hot.row(i).sum(), 1.0);
        }
        assert_eq!(hot[(0, 1)], 1.0);
    }

    #[test]
    fn item_params_reject_out_of_range() {
        assert!(ItemParams::from_rows(&[vec![0.5, 1.5]]).is_err());
        assert!(ItemParams::from_rows(&[vec![0.5, f64::NAN]]).is_err());
        let (t, v) =
            ItemParams::clamp_raw(&DMatrix::from_row_slice(1, 3, &[-0.2, 0.5, 1.3]), 0.001, 0.999)
                .unwrap();
        assert_eq!(v, 2);
        assert_eq!(t.to_rows(), vec![vec![0.001, 0.5, 0.999]]);
    }

    proptest! {
        #[test]
        fn serde_round_trips(
            rows in prop::collection::vec(prop::collection::vec(0u8..2, 3..6), 1..5)
                .prop_filter("rectangular", |r| r.iter().all(|x| x.len() == r[0].len())),
            theta in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 1..6),
            labels in prop::collection::vec(1usize..5, 1..20),
        ) {
            let r = ResponseMatrix::validate(&rows).unwrap();
            let back: ResponseMatrix =
                serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
            prop_assert_eq!(back, r);

            let t = ItemParams::from_rows(&theta).unwrap();
            let back: ItemParams =
                serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
            prop_assert_eq!(back, t);

            let n = labels.iter().copied().max().unwrap();
            let z = LatentAssignment::from_one_based(&labels, n).unwrap();
            let back: LatentAssignment =
                serde_json::from_str(&serde_json::to_string(&z).unwrap()).unwrap();
            prop_assert_eq!(back, z);
        }

        #[test]
        fn mixing_weights_round_trip(raw in prop::collection::vec(0.01f64..1.0, 1..8)) {
            let w = MixingWeights::normalized(&raw, 0.0).unwrap();
            let back: MixingWeights =
                serde_json::from_str(&serde_json::to_string(&w).unwrap()).unwrap();
            prop_assert_eq!(back, w);
        }
    }
}

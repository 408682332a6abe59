//! Dense third-order tensors and the multilinear maps used by the power method.

use nalgebra::DMatrix;

use crate::error::{LcmError, Result};

/// Tolerance on `||v|| = 1` accepted by [`Tensor3::deflate`].
pub const UNIT_TOL: f64 = 1e-8;

/// A `d x d x d` array of reals in flat row-major order: `(i, j, k)` lives
/// at `(i * d + j) * d + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dim: usize,
    entries: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![0.0; dim * dim * dim],
        }
    }

    pub fn from_entries(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim * dim {
            return Err(LcmError::DimensionMismatch(format!(
                "{} entries for a tensor of dimension {dim}",
                entries.len()
            )));
        }
        Ok(Self { dim, entries })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut entries = Vec::with_capacity(dim * dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    entries.push(f(i, j, k));
                }
            }
        }
        Self { dim, entries }
    }

    /// `lambda * v (x) v (x) v`.
    pub fn rank_one(lambda: f64, v: &[f64]) -> Self {
        Self::from_fn(v.len(), |i, j, k| lambda * v[i] * v[j] * v[k])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dim + j) * self.dim + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.entries[self.idx(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let at = self.idx(i, j, k);
        self.entries[at] = value;
    }

    /// Add `weight * a (x) b (x) c` in place.
    pub fn add_outer(&mut self, weight: f64, a: &[f64], b: &[f64], c: &[f64]) {
        let d = self.dim;
        debug_assert!(a.len() == d && b.len() == d && c.len() == d);
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            for (j, &bj) in b.iter().enumerate() {
                let s = weight * ai * bj;
                if s == 0.0 {
                    continue;
                }
                let base = (i * d + j) * d;
                for (e, &ck) in self.entries[base..base + d].iter_mut().zip(c) {
                    *e += s * ck;
                }
            }
        }
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim {
            return Err(LcmError::DimensionMismatch(format!(
                "vector of length {} for tensor of dimension {}",
                u.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// `T(I, u, u)`: the vector with entries `sum_{j,l} T[i,j,l] u[j] u[l]`.
    pub fn contract_iuu(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u)?;
        let d = self.dim;
        let mut out = vec![0.0; d];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &uj) in u.iter().enumerate() {
                let base = (i * d + j) * d;
                let inner: f64 = self.entries[base..base + d]
                    .iter()
                    .zip(u)
                    .map(|(t, ul)| t * ul)
                    .sum();
                acc += uj * inner;
            }
            *o = acc;
        }
        Ok(out)
    }

    /// `T(u, u, u)`.
    pub fn contract_uuu(&self, u: &[f64]) -> Result<f64> {
        let v = self.contract_iuu(u)?;
        Ok(v.iter().zip(u).map(|(a, b)| a * b).sum())
    }

    /// `T(W, W, W)` for a `d x m` matrix `W`, producing an `m`-dimensional tensor.
    pub fn contract_www(&self, w: &DMatrix<f64>) -> Result<Tensor3> {
        if w.nrows() != self.dim {
            return Err(LcmError::DimensionMismatch(format!(
                "whitening matrix has {} rows, tensor dimension is {}",
                w.nrows(),
                self.dim
            )));
        }
        multilinear(self, w, w, w)
    }

    /// `T - lambda v (x) v (x) v`; `v` must be a unit vector.
    pub fn deflate(&self, lambda: f64, v: &[f64]) -> Result<Tensor3> {
        self.check_len(v)?;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(LcmError::NotUnitVector { norm });
        }
        let mut out = self.clone();
        out.add_outer(-lambda, v, v, v);
        Ok(out)
    }

    /// Average over all six index permutations. Every orbit of entries is
    /// summed once in a fixed order, so the result is exactly symmetric.
    pub fn symmetrize(&self) -> Tensor3 {
        let d = self.dim;
        let mut out = Tensor3::zeros(d);
        for i in 0..d {
            for j in i..d {
                for k in j..d {
                    let s = (self.get(i, j, k)
                        + self.get(i, k, j)
                        + self.get(j, i, k)
                        + self.get(j, k, i)
                        + self.get(k, i, j)
                        + self.get(k, j, i))
                        / 6.0;
                    for (a, b, c) in [
                        (i, j, k),
                        (i, k, j),
                        (j, i, k),
                        (j, k, i),
                        (k, i, j),
                        (k, j, i),
                    ] {
                        out.set(a, b, c, s);
                    }
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `T(A, B, C)` with non-square factors; the output is cubic only when all
/// three factors share a column count, which is the only case used here.
pub(crate) fn multilinear(
    t: &Tensor3,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<Tensor3> {
    let d = t.dim;
    let m = a.ncols();
    if b.ncols() != m || c.ncols() != m || a.nrows() != d || b.nrows() != d || c.nrows() != d {
        return Err(LcmError::DimensionMismatch(
            "multilinear factors disagree in shape".to_string(),
        ));
    }
    // Contract one mode at a time: O(d^3 m + d^2 m^2 + d m^3).
    // step1[i][j][c'] = sum_k T[i,j,k] C[k,c']
    let mut step1 = vec![0.0; d * d * m];
    for ij in 0..d * d {
        let row = &t.entries[ij * d..(ij + 1) * d];
        for cc in 0..m {
            step1[ij * m + cc] = row.iter().enumerate().map(|(k, v)| v * c[(k, cc)]).sum();
        }
    }
    // step2[i][b'][c'] = sum_j step1[i][j][c'] B[j,b']
    let mut step2 = vec![0.0; d * m * m];
    for i in 0..d {
        for j in 0..d {
            let src = &step1[(i * d + j) * m..(i * d + j + 1) * m];
            for bb in 0..m {
                let w = b[(j, bb)];
                if w == 0.0 {
                    continue;
                }
                let dst = &mut step2[(i * m + bb) * m..(i * m + bb + 1) * m];
                for (x, s) in dst.iter_mut().zip(src) {
                    *x += w * s;
                }
            }
        }
    }
    // out[a'][b'][c'] = sum_i step2[i][b'][c'] A[i,a']
    let mut out = vec![0.0; m * m * m];
    for i in 0..d {
        let src = &step2[i * m * m..(i + 1) * m * m];
        for aa in 0..m {
            let w = a[(i, aa)];
            if w == 0.0 {
                continue;
            }
            let dst = &mut out[aa * m * m..(aa + 1) * m * m];
            for (x, s) in dst.iter_mut().zip(src) {
                *x += w * s;
            }
        }
    }
    Tensor3::from_entries(m, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag2() -> Tensor3 {
        let mut t = Tensor3::rank_one(2.0, &[1.0, 0.0]);
        t.add_outer(1.0, &[0.0, 1.0], &[0.0, 1.0], &[0.0, 1.0]);
        t
    }

    fn random_tensor(d: usize, rng: &mut ChaCha8Rng) -> Tensor3 {
        Tensor3::from_fn(d, |_, _, _| rng.random_range(-1.0..1.0))
    }

    // Oracles write the defining sums out index by index.
    fn iuu_oracle(t: &Tensor3, u: &[f64]) -> Vec<f64> {
        let d = t.dim();
        (0..d)
            .map(|i| {
                let mut s = 0.0;
                for j in 0..d {
                    for l in 0..d {
                        s += t.get(i, j, l) * u[j] * u[l];
                    }
                }
                s
            })
            .collect()
    }

    fn uuu_oracle(t: &Tensor3, u: &[f64]) -> f64 {
        let d = t.dim();
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    s += t.get(i, j, k) * u[i] * u[j] * u[k];
                }
            }
        }
        s
    }

    #[test]
    fn iuu_examples() {
        let e1 = Tensor3::rank_one(1.0, &[1.0, 0.0]);
        assert_eq!(e1.contract_iuu(&[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);

        let h = 1.0 / 2f64.sqrt();
        let v = diag2().contract_iuu(&[h, h]).unwrap();
        let oracle = iuu_oracle(&diag2(), &[h, h]);
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v[0], oracle[0], epsilon = 1e-15);

        assert_eq!(diag2().contract_iuu(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            diag2().contract_iuu(&[1.0]),
            Err(LcmError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn uuu_examples() {
        let e1 = Tensor3::rank_one(1.0, &[1.0, 0.0]);
        assert_eq!(e1.contract_uuu(&[1.0, 0.0]).unwrap(), 1.0);

        let h = 1.0 / 2f64.sqrt();
        let got = diag2().contract_uuu(&[h, h]).unwrap();
        assert_abs_diff_eq!(got, uuu_oracle(&diag2(), &[h, h]), epsilon = 1e-15);
        assert_abs_diff_eq!(got, 1.060_660_2, epsilon = 1e-7);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(4, &mut rng);
        for k in 0..4 {
            let mut e = vec![0.0; 4];
            e[k] = 1.0;
            assert_abs_diff_eq!(t.contract_uuu(&e).unwrap(), t.get(k, k, k), epsilon = 1e-15);
        }
    }

    #[test]
    fn www_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random_tensor(3, &mut rng);
        let id = DMatrix::identity(3, 3);
        assert!(t.contract_www(&id).unwrap().max_abs_diff(&t) < 1e-15);

        let v = [0.3, -0.7, 1.1];
        let w = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let wv: Vec<f64> = (0..2).map(|a| (0..3).map(|i| w[(i, a)] * v[i]).sum()).collect();
        let lhs = Tensor3::rank_one(1.0, &v).contract_www(&w).unwrap();
        assert!(lhs.max_abs_diff(&Tensor3::rank_one(1.0, &wv)) < 1e-14);

        // Six-index brute force.
        let got = t.contract_www(&w).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    let mut s = 0.0;
                    for i in 0..3 {
                        for j in 0..3 {
                            for k in 0..3 {
                                s += t.get(i, j, k) * w[(i, a)] * w[(j, b)] * w[(k, c)];
                            }
                        }
                    }
                    assert_abs_diff_eq!(got.get(a, b, c), s, epsilon = 1e-13);
                }
            }
        }
        assert!(t.contract_www(&DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn deflate_examples() {
        let out = diag2().deflate(2.0, &[1.0, 0.0]).unwrap();
        assert_eq!(out, Tensor3::rank_one(1.0, &[0.0, 1.0]));
        assert_eq!(diag2().deflate(0.0, &[0.6, 0.8]).unwrap(), diag2());
        assert!(matches!(
            diag2().deflate(1.0, &[1.0, 1.0]),
            Err(LcmError::NotUnitVector { .. })
        ));

        // Deflating by (lambda, v) shifts T(v,v,v) by exactly lambda.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_tensor(3, &mut rng);
        let v = [0.36, 0.48, 0.8];
        let lambda = 0.7;
        let residual = t.deflate(lambda, &v).unwrap().contract_uuu(&v).unwrap();
        let entrywise = Tensor3::from_fn(3, |i, j, k| t.get(i, j, k) - lambda * v[i] * v[j] * v[k]);
        assert_abs_diff_eq!(residual, uuu_oracle(&entrywise, &v), epsilon = 1e-14);
        assert_abs_diff_eq!(residual, uuu_oracle(&t, &v) - lambda, epsilon = 1e-14);
    }

    #[test]
    fn rank_one_examples() {
        let t = Tensor3::rank_one(1.0, &[1.0, 0.0]);
        assert_eq!(t.entries().iter().filter(|&&x| x != 0.0).count(), 1);
        assert_eq!(t.get(0, 0, 0), 1.0);

        let h = 1.0 / 2f64.sqrt();
        let t = Tensor3::rank_one(3.0, &[h, h]);
        for &x in t.entries() {
            assert_abs_diff_eq!(x, 3.0 / (2.0 * 2f64.sqrt()), epsilon = 1e-15);
        }
        assert!(Tensor3::rank_one(0.0, &[1.0, 2.0]).entries().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn symmetrize_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_tensor(4, &mut rng).symmetrize();
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    let x = s.get(i, j, k);
                    assert_eq!(x, s.get(j, i, k));
                    assert_eq!(x, s.get(k, j, i));
                    assert_eq!(x, s.get(i, k, j));
                }
            }
        }
    }

    #[test]
    fn orthogonal_eigenpairs() {
        // Rotate the basis by a fixed angle.
        let (c, s) = (0.6f64, 0.8f64);
        let v1 = [c, s, 0.0];
        let v2 = [-s, c, 0.0];
        let v3 = [0.0, 0.0, 1.0];
        let mut t = Tensor3::rank_one(3.0, &v1);
        t.add_outer(2.0, &v2, &v2, &v2);
        t.add_outer(1.0, &v3, &v3, &v3);
        for (lambda, v) in [(3.0, v1), (2.0, v2), (1.0, v3)] {
            let iuu = t.contract_iuu(&v).unwrap();
            for (x, y) in iuu.iter().zip(v) {
                assert_abs_diff_eq!(*x, lambda * y, epsilon = 1e-14);
            }
            assert_abs_diff_eq!(t.contract_uuu(&v).unwrap(), lambda, epsilon = 1e-14);
        }
    }

    proptest! {
        #[test]
        fn iuu_is_quadratic(seed in 0u64..1000, alpha in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor(3, &mut rng);
            let u: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let su: Vec<f64> = u.iter().map(|x| alpha * x).collect();
            let lhs = t.contract_iuu(&su).unwrap();
            let rhs = t.contract_iuu(&u).unwrap();
            let oracle = iuu_oracle(&t, &u);
            for ((a, b), o) in lhs.iter().zip(&rhs).zip(&oracle) {
                prop_assert!((a - alpha * alpha * b).abs() < 1e-12);
                prop_assert!((b - o).abs() < 1e-12);
            }
        }

        #[test]
        fn deflating_rank_one_gives_zero(seed in 0u64..1000, lambda in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            let z = Tensor3::rank_one(lambda, &v).deflate(lambda, &v).unwrap();
            prop_assert!(z.entries().iter().all(|x| x.abs() < 1e-12));
        }
    }
}

//! Small dense and banded complex linear solves used by the per-mode solvers.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("singular matrix in {context} (pivot {pivot:.3e} at column {col})")]
    Singular {
        context: &'static str,
        pivot: f64,
        col: usize,
    },
    #[error("dimension mismatch: matrix {n}x{n}, rhs {m}")]
    Shape { n: usize, m: usize },
}

/// Dense complex LU with partial pivoting, in place. Factors A = P·L·U.
pub struct DenseLu {
    n: usize,
    lu: Vec<Complex64>,
    piv: Vec<usize>,
}

impl DenseLu {
    pub fn factor(mut a: Vec<Complex64>, n: usize) -> Result<Self, LinalgError> {
        assert_eq!(a.len(), n * n);
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let mut p = k;
            let mut best = a[k * n + k].norm_sqr();
            for i in k + 1..n {
                let v = a[i * n + k].norm_sqr();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv[k] = p;
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
            }
            let pivot = a[k * n + k];
            if pivot.norm() == 0.0 {
                return Err(LinalgError::Singular {
                    context: "dense LU",
                    pivot: 0.0,
                    col: k,
                });
            }
            for i in k + 1..n {
                let m = a[i * n + k] / pivot;
                a[i * n + k] = m;
                if m.norm_sqr() != 0.0 {
                    for j in k + 1..n {
                        let akj = a[k * n + j];
                        a[i * n + j] -= m * akj;
                    }
                }
            }
        }
        Ok(Self { n, lu: a, piv })
    }

    pub fn solve(&self, b: &mut [Complex64]) -> Result<(), LinalgError> {
        let n = self.n;
        if b.len() != n {
            return Err(LinalgError::Shape { n, m: b.len() });
        }
        // rows of L were fully swapped during factorization, so all row
        // interchanges apply to b before the triangular solves
        for k in 0..n {
            b.swap(k, self.piv[k]);
        }
        for k in 0..n {
            let bk = b[k];
            if bk.norm_sqr() != 0.0 {
                for i in k + 1..n {
                    let m = self.lu[i * n + k];
                    b[i] -= m * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..n {
                s -= self.lu[k * n + j] * b[j];
            }
            b[k] = s / self.lu[k * n + k];
        }
        Ok(())
    }
}

/// Banded complex LU with partial pivoting, LAPACK `gbtrf`-style.
///
/// A matrix with `kl` subdiagonals and `ku` superdiagonals is stored in a
/// band array of `2*kl + ku + 1` rows so pivoting can fill `kl` extra
/// superdiagonals. Entry (i, j) with |i-j| within band lives at
/// `band[(kl + ku + i - j) * n + j]`.
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    band: Vec<Complex64>,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn rows(kl: usize, ku: usize) -> usize {
        2 * kl + ku + 1
    }

    /// Build an empty band store for an n×n matrix.
    pub fn new_store(n: usize, kl: usize, ku: usize) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); Self::rows(kl, ku) * n]
    }

    /// Insert A(i, j) += v into a band store laid out for factorization.
    #[inline]
    pub fn add(
        band: &mut [Complex64],
        n: usize,
        kl: usize,
        ku: usize,
        i: usize,
        j: usize,
        v: Complex64,
    ) {
        debug_assert!(i < n && j < n);
        debug_assert!(j + kl >= i && i + ku >= j, "entry ({i},{j}) outside band");
        band[(kl + ku + i - j) * n + j] += v;
    }

    pub fn factor(
        mut band: Vec<Complex64>,
        n: usize,
        kl: usize,
        ku: usize,
    ) -> Result<Self, LinalgError> {
        assert_eq!(band.len(), Self::rows(kl, ku) * n);
        let kv = kl + ku; // row offset of the diagonal in the band store
        let mut piv = vec![0usize; n];
        let at = |band: &[Complex64], i: usize, j: usize| band[(kv + i - j) * n + j];
        for k in 0..n {
            let i_max = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = at(&band, k, k).norm_sqr();
            for i in k + 1..=i_max {
                let v = at(&band, i, k).norm_sqr();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv[k] = p;
            let j_max = (k + kv).min(n - 1);
            if p != k {
                for j in k..=j_max {
                    let ik = (kv + k - j) * n + j;
                    let ip = (kv + p - j) * n + j;
                    band.swap(ik, ip);
                }
            }
            let pivot = at(&band, k, k);
            if pivot.norm() == 0.0 {
                return Err(LinalgError::Singular {
                    context: "banded LU",
                    pivot: 0.0,
                    col: k,
                });
            }
            for i in k + 1..=i_max {
                let m = at(&band, i, k) / pivot;
                band[(kv + i - k) * n + k] = m;
                if m.norm_sqr() != 0.0 {
                    for j in k + 1..=j_max {
                        let a_kj = at(&band, k, j);
                        band[(kv + i - j) * n + j] -= m * a_kj;
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku,
            band,
            piv,
        })
    }

    pub fn solve(&self, b: &mut [Complex64]) -> Result<(), LinalgError> {
        let n = self.n;
        if b.len() != n {
            return Err(LinalgError::Shape { n, m: b.len() });
        }
        let kv = self.kl + self.ku;
        for k in 0..n {
            let p = self.piv[k];
            b.swap(k, p);
            let bk = b[k];
            if bk.norm_sqr() != 0.0 {
                let i_max = (k + self.kl).min(n - 1);
                for i in k + 1..=i_max {
                    b[i] -= self.band[(kv + i - k) * n + k] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            let j_max = (k + kv).min(n - 1);
            for j in k + 1..=j_max {
                s -= self.band[(kv + k - j) * n + j] * b[j];
            }
            b[k] = s / self.band[kv * n + k];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn dense_lu_solves_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1usize, 2, 5, 12, 40] {
            let a: Vec<Complex64> = (0..n * n)
                .map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            let x: Vec<Complex64> = (0..n)
                .map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            let mut b = vec![c(0.0, 0.0); n];
            for i in 0..n {
                for j in 0..n {
                    b[i] += a[i * n + j] * x[j];
                }
            }
            let lu = DenseLu::factor(a, n).unwrap();
            lu.solve(&mut b).unwrap();
            for i in 0..n {
                assert!((b[i] - x[i]).norm() < 1e-10, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn banded_lu_matches_dense_on_random_band_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, kl, ku) in &[(6usize, 1usize, 1usize), (20, 2, 2), (33, 3, 1), (50, 8, 8)] {
            let mut dense = vec![c(0.0, 0.0); n * n];
            let mut band = BandedLu::new_store(n, kl, ku);
            for i in 0..n {
                for j in 0..n {
                    if j + kl >= i && i + ku >= j {
                        let v = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                        dense[i * n + j] = v;
                        BandedLu::add(&mut band, n, kl, ku, i, j, v);
                    }
                }
            }
            let x: Vec<Complex64> = (0..n)
                .map(|_| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            let mut b = vec![c(0.0, 0.0); n];
            for i in 0..n {
                for j in 0..n {
                    b[i] += dense[i * n + j] * x[j];
                }
            }
            let mut b2 = b.clone();
            let blu = BandedLu::factor(band, n, kl, ku).unwrap();
            blu.solve(&mut b).unwrap();
            let dlu = DenseLu::factor(dense, n).unwrap();
            dlu.solve(&mut b2).unwrap();
            for i in 0..n {
                assert!((b[i] - x[i]).norm() < 1e-9, "banded n={n} kl={kl} ku={ku}");
                assert!((b[i] - b2[i]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_diagonal_needs_pivoting() {
        // saddle-point-like 2x2 with zero (0,0) entry
        let a = vec![c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)];
        let lu = DenseLu::factor(a, 2).unwrap();
        let mut b = vec![c(2.0, 0.0), c(3.0, 0.0)];
        lu.solve(&mut b).unwrap();
        assert!((b[0] - c(1.0, 0.0)).norm() < 1e-14);
        assert!((b[1] - c(2.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn singular_matrix_reports_error() {
        let a = vec![c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)];
        assert!(DenseLu::factor(a, 2).is_err());
    }
}

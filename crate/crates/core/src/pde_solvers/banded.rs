use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

/// LU factorization of a banded matrix with partial (row) pivoting.
///
/// Row `i` is stored as the column window `[i - kl, i + kl + ku]`, which
/// holds the original band plus the fill that pivoting can create.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    band: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(m: &SparseMatrix) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::ShapeMismatch("banded LU of a non-square matrix".into()));
        }
        let (kl, ku) = m.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            width,
            band: vec![0.0; n * width],
            pivots: vec![0; n],
        };
        for (r, c, v) in m.triplets() {
            *lu.at_mut(r, c) = v;
        }
        let upper = kl + ku;
        let scale = lu.band.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.at(k, k).abs();
            for i in k + 1..=last {
                let v = lu.at(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() || best <= 1e-300 * scale.max(1.0) {
                return Err(Error::InvalidParameter {
                    key: "matrix".into(),
                    message: format!("singular at pivot {k}"),
                });
            }
            lu.pivots[k] = p;
            let cmax = (k + upper).min(n - 1);
            if p != k {
                for c in k..=cmax {
                    let a = lu.at(k, c);
                    let b = lu.at(p, c);
                    *lu.at_mut(k, c) = b;
                    *lu.at_mut(p, c) = a;
                }
            }
            let pivot = lu.at(k, k);
            for i in k + 1..=last {
                let l = lu.at(i, k) / pivot;
                if l == 0.0 {
                    continue;
                }
                *lu.at_mut(i, k) = l;
                for c in k + 1..=cmax {
                    let u = lu.at(k, c);
                    if u != 0.0 {
                        *lu.at_mut(i, c) -= l * u;
                    }
                }
            }
        }
        Ok(lu)
    }

    #[inline]
    fn offset(&self, r: usize, c: usize) -> usize {
        debug_assert!(c + self.kl >= r && c <= r + self.kl + self.ku);
        r * self.width + (c + self.kl - r)
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.band[self.offset(r, c)]
    }

    #[inline]
    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        let o = self.offset(r, c);
        &mut self.band[o]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    b[i] -= self.at(i, k) * bk;
                }
            }
        }
        let upper = self.kl + self.ku;
        for i in (0..n).rev() {
            let mut acc = b[i];
            for c in i + 1..=(i + upper).min(n - 1) {
                acc -= self.at(i, c) * b[c];
            }
            b[i] = acc / self.at(i, i);
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn matches_dense_lu_with_pivoting() {
        // small off-diagonal-dominant band forces row swaps
        let n = 12;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 0.1 + 0.01 * i as f64));
            if i >= 1 {
                t.push((i, i - 1, 2.0 + (i as f64).sin()));
            }
            if i >= 2 {
                t.push((i, i - 2, -0.7));
            }
            if i + 1 < n {
                t.push((i, i + 1, 1.3));
            }
        }
        let m = SparseMatrix::from_triplets(n, n, t).unwrap();
        let rhs: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.5).collect();
        let x = BandedLu::factor(&m).unwrap().solve(&rhs);
        let dense = m.to_dense().lu().solve(&DVector::from_vec(rhs.clone())).unwrap();
        for i in 0..n {
            assert!((x[i] - dense[i]).abs() <= 1e-11 * dense.amax(), "{i}: {} vs {}", x[i], dense[i]);
        }
        let r = m.matvec(&x);
        for i in 0..n {
            assert!((r[i] - rhs[i]).abs() < 1e-11);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = SparseMatrix::from_triplets(3, 3, vec![(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert!(BandedLu::factor(&m).is_err());
    }
}

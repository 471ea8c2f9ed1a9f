//! Banded LU factorization without pivoting, sufficient for the strictly
//! diagonally dominant M-matrices produced by policy evaluation.

use alloc::vec;
use alloc::vec::Vec;

/// Square band matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Debug, Clone)]
pub(crate) struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub(crate) fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = kl + ku + 1;
        BandMatrix { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub(crate) fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j + self.kl >= i && j <= i + self.ku);
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.slot(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    /// In-place Doolittle factorization followed by forward and back
    /// substitution. Returns `None` on a zero pivot.
    pub(crate) fn solve(mut self, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.n;
        for k in 0..n {
            let pivot = self.get(k, k);
            if pivot == 0.0 || !pivot.is_finite() {
                return None;
            }
            let i_end = (k + self.kl + 1).min(n);
            let j_end = (k + self.ku + 1).min(n);
            for i in (k + 1)..i_end {
                let l = self.get(i, k) / pivot;
                if l == 0.0 {
                    continue;
                }
                self.set(i, k, l);
                for j in (k + 1)..j_end {
                    let u = self.get(k, j);
                    if u != 0.0 {
                        let s = self.slot(i, j);
                        self.data[s] -= l * u;
                    }
                }
            }
        }
        let mut x = rhs.to_vec();
        for i in 0..n {
            let j0 = i.saturating_sub(self.kl);
            let mut acc = x[i];
            for j in j0..i {
                acc -= self.get(i, j) * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let j_end = (i + self.ku + 1).min(n);
            let mut acc = x[i];
            for j in (i + 1)..j_end {
                acc -= self.get(i, j) * x[j];
            }
            x[i] = acc / self.get(i, i);
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_solve() {
        let n = 6;
        let mut m = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            m.add(i, i, 4.0);
            if i > 0 {
                m.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                m.add(i, i + 1, -1.0);
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 1.0).collect();
        let rhs: Vec<f64> = (0..n)
            .map(|i| {
                4.0 * x_true[i]
                    - if i > 0 { x_true[i - 1] } else { 0.0 }
                    - if i + 1 < n { x_true[i + 1] } else { 0.0 }
            })
            .collect();
        let x = m.solve(&rhs).unwrap();
        for (a, b) in x.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn wide_band_with_gaps() {
        let n = 9;
        let mut m = BandMatrix::zeros(n, 3, 3);
        for i in 0..n {
            m.add(i, i, 5.0);
            if i >= 3 {
                m.add(i, i - 3, -1.0);
            }
            if i + 3 < n {
                m.add(i, i + 3, -2.0);
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            rhs[i] = 5.0 * x_true[i];
            if i >= 3 {
                rhs[i] -= x_true[i - 3];
            }
            if i + 3 < n {
                rhs[i] -= 2.0 * x_true[i + 3];
            }
        }
        let x = m.solve(&rhs).unwrap();
        for (a, b) in x.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}

//! Banded matrices with an in-place LU factorization without pivoting.
//!
//! The transport operators assembled here are strictly diagonally dominant,
//! which makes the pivot-free factorization stable and keeps the band width.

use crate::error::{Error, Result};

/// Square matrix with `lower` sub-diagonals and `upper` super-diagonals,
/// stored row by row as `data[i * width + (j + lower - i)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        Self {
            n,
            lower,
            upper,
            data: vec![0.0; n * (lower + upper + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.lower, self.upper)
    }

    fn width(&self) -> usize {
        self.lower + self.upper + 1
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.lower >= i && j <= i + self.upper
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i >= self.n || j >= self.n || !self.in_band(i, j) {
            return 0.0;
        }
        self.data[i * self.width() + (j + self.lower - i)]
    }

    /// Adds `v` to entry `(i, j)`. Panics if the entry lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.n && j < self.n && self.in_band(i, j), "({i}, {j}) outside the band");
        let w = self.width();
        self.data[i * w + (j + self.lower - i)] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.n && j < self.n && self.in_band(i, j), "({i}, {j}) outside the band");
        let w = self.width();
        self.data[i * w + (j + self.lower - i)] = v;
    }

    /// Clears row `i` and puts a one on the diagonal.
    pub fn set_identity_row(&mut self, i: usize) {
        let w = self.width();
        for v in &mut self.data[i * w..(i + 1) * w] {
            *v = 0.0;
        }
        self.set(i, i, 1.0);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let w = self.width();
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.lower);
                let hi = (i + self.upper).min(self.n - 1);
                (lo..=hi)
                    .map(|j| self.data[i * w + (j + self.lower - i)] * x[j])
                    .sum()
            })
            .collect()
    }

    pub fn factor(mut self) -> Result<BandedLu> {
        let (n, kl, ku) = (self.n, self.lower, self.upper);
        let w = self.width();
        for k in 0..n {
            let pivot = self.data[k * w + kl];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::Singular { row: k, pivot });
            }
            let inv = 1.0 / pivot;
            let row_end = (k + ku).min(n - 1);
            for i in k + 1..=(k + kl).min(n - 1) {
                let ik = i * w + (k + kl - i);
                let m = self.data[ik] * inv;
                self.data[ik] = m;
                if m == 0.0 {
                    continue;
                }
                for j in k + 1..=row_end {
                    let kj = self.data[k * w + (j + kl - k)];
                    self.data[i * w + (j + kl - i)] -= m * kj;
                }
            }
        }
        Ok(BandedLu { m: self })
    }
}

/// Factorized banded matrix, reusable for any number of right-hand sides.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedLu {
    m: BandedMatrix,
}

impl BandedLu {
    pub fn dim(&self) -> usize {
        self.m.n
    }

    /// Overwrites `b` with the solution of `A x = b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.m.n, self.m.lower, self.m.upper);
        let w = self.m.width();
        let d = &self.m.data;
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let mut s = b[i];
            for j in lo..i {
                s -= d[i * w + (j + kl - i)] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + ku).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=hi {
                s -= d[i * w + (j + kl - i)] * b[j];
            }
            b[i] = s / d[i * w + kl];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_solve_matches_thomas() {
        let n = 8;
        let mut m = BandedMatrix::zeros(n, 1, 1);
        let (a, b, c) = (-1.0, 4.0, -2.0);
        for i in 0..n {
            m.set(i, i, b);
            if i > 0 {
                m.set(i, i - 1, a);
            }
            if i + 1 < n {
                m.set(i, i + 1, c);
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();

        // Thomas algorithm as the reference.
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        cp[0] = c / b;
        dp[0] = rhs[0] / b;
        for i in 1..n {
            let den = b - a * cp[i - 1];
            cp[i] = c / den;
            dp[i] = (rhs[i] - a * dp[i - 1]) / den;
        }
        let mut x_ref = vec![0.0; n];
        x_ref[n - 1] = dp[n - 1];
        for i in (0..n - 1).rev() {
            x_ref[i] = dp[i] - cp[i] * x_ref[i + 1];
        }

        let lu = m.clone().factor().unwrap();
        let mut x = rhs.clone();
        lu.solve_in_place(&mut x);
        for (u, v) in x.iter().zip(&x_ref) {
            assert!((u - v).abs() < 1e-14);
        }
        let back = m.mul_vec(&x);
        for (u, v) in back.iter().zip(&rhs) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn wide_band_round_trip() {
        let n = 30;
        let (kl, ku) = (5, 3);
        let mut m = BandedMatrix::zeros(n, kl, ku);
        for i in 0..n {
            let mut off = 0.0;
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                if j != i {
                    let v = ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5;
                    m.set(i, j, v);
                    off += v.abs();
                }
            }
            m.set(i, i, off + 1.0);
        }
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - 1.0).collect();
        let mut b = m.mul_vec(&x);
        m.factor().unwrap().solve_in_place(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let m = BandedMatrix::zeros(3, 1, 1);
        assert!(matches!(m.factor(), Err(Error::Singular { row: 0, .. })));
    }
}

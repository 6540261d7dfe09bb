//! Banded LU factorization with partial pivoting.

use crate::error::{Error, Result};

/// Square matrix with `kl` sub- and `ku` super-diagonals. Storage keeps
/// `kl` extra super-diagonals for fill-in from row exchanges.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn idx(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.kl < i || j > i + self.ku + self.kl || j >= self.n {
            return None;
        }
        Some(i * self.width + (j + self.kl - i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.idx(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Adds `v` to entry `(i, j)`; panics outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i}, {j}) outside the band");
        let k = self.idx(i, j).expect("inside band");
        self.data[k] += v;
    }

    /// `A x` with the unfactored matrix.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku + self.kl).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// Solves `A x = b` in place of a copy; errors when a pivot vanishes.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut a = self.clone();
        let mut x = b.to_vec();
        let n = self.n;
        let (kl, reach) = (self.kl, self.ku + self.kl);
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let p = (k..=last).max_by(|&i, &j| a.get(i, k).abs().total_cmp(&a.get(j, k).abs())).unwrap_or(k);
            let piv = a.get(p, k);
            if piv == 0.0 || !piv.is_finite() {
                return Err(Error::SingularSystem);
            }
            let top = (k + reach).min(n - 1);
            if p != k {
                for j in k..=top {
                    let (u, v) = (a.get(k, j), a.get(p, j));
                    a.set(k, j, v);
                    a.set(p, j, u);
                }
                x.swap(k, p);
            }
            for i in k + 1..=last {
                let m = a.get(i, k) / piv;
                if m == 0.0 {
                    continue;
                }
                a.set(i, k, 0.0);
                for j in k + 1..=top {
                    let v = a.get(i, j) - m * a.get(k, j);
                    a.set(i, j, v);
                }
                x[i] -= m * x[k];
            }
        }
        for k in (0..n).rev() {
            let top = (k + reach).min(n - 1);
            let s: f64 = (k + 1..=top).map(|j| a.get(k, j) * x[j]).sum();
            x[k] = (x[k] - s) / a.get(k, k);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem);
        }
        Ok(x)
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        if let Some(k) = self.idx(i, j) {
            self.data[k] = v;
        } else {
            debug_assert!(v == 0.0);
        }
    }
}

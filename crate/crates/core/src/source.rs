//! Source fields `f`: closed forms or natural cubic splines through values
//! on a uniform grid.

use crate::error::{Error, Result};

/// A scalar field on the domain.
pub trait SourceField: Sync {
    fn value(&self, p: [f64; 2]) -> f64;
}

impl<F: Fn([f64; 2]) -> f64 + Sync> SourceField for F {
    fn value(&self, p: [f64; 2]) -> f64 {
        self(p)
    }
}

/// Natural cubic spline on uniform nodes `lo + i h`, `i = 0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spline1D {
    lo: f64,
    h: f64,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl Spline1D {
    pub fn new(lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::ShapeMismatch { expected: 2, got: n });
        }
        let h = (hi - lo) / (n - 1) as f64;
        let second = natural_second_derivatives(&values, h);
        Ok(Spline1D { lo, h, values, second })
    }

    pub fn nodes(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.values.len();
        let t = (x - self.lo) / self.h;
        let i = (t.floor().max(0.0) as usize).min(n - 2);
        let s = t - i as f64;
        if s == 0.0 {
            return self.values[i];
        }
        let (a, b) = (1.0 - s, s);
        let h2 = self.h * self.h / 6.0;
        a * self.values[i]
            + b * self.values[i + 1]
            + h2 * ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1])
    }
}

/// Second derivatives of the natural spline through uniformly spaced values.
fn natural_second_derivatives(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Tridiagonal (1, 4, 1) system for interior nodes, Thomas algorithm.
    let k = n - 2;
    let mut diag = vec![4.0; k];
    let mut rhs: Vec<f64> = (1..n - 1).map(|i| 6.0 * (v[i - 1] - 2.0 * v[i] + v[i + 1]) / (h * h)).collect();
    for i in 1..k {
        let w = 1.0 / diag[i - 1];
        diag[i] -= w;
        rhs[i] -= w * rhs[i - 1];
    }
    m[k] = rhs[k - 1] / diag[k - 1];
    for i in (0..k - 1).rev() {
        m[i + 1] = (rhs[i] - m[i + 2]) / diag[i];
    }
    m
}

impl SourceField for Spline1D {
    fn value(&self, p: [f64; 2]) -> f64 {
        self.eval(p[0])
    }
}

/// Tensor-product natural cubic spline on a uniform grid over a rectangle.
/// Values are stored row-major with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Spline2D {
    x: [f64; 2],
    y: [f64; 2],
    nx: usize,
    ny: usize,
    rows: Vec<Spline1D>,
}

impl Spline2D {
    pub fn new(x: [f64; 2], y: [f64; 2], nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nx * ny {
            return Err(Error::ShapeMismatch { expected: nx * ny, got: values.len() });
        }
        if ny < 2 {
            return Err(Error::ShapeMismatch { expected: 2, got: ny });
        }
        let rows = values
            .chunks(nx)
            .map(|r| Spline1D::new(x[0], x[1], r.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Spline2D { x, y, nx, ny, rows })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// Grid value at node `(i, j)`.
    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.rows[j].values[i]
    }

    pub fn eval(&self, px: f64, py: f64) -> f64 {
        let hy = (self.y[1] - self.y[0]) / (self.ny - 1) as f64;
        let ty = (py - self.y[0]) / hy;
        if (ty - ty.round()).abs() < 1e-12 {
            let j = (ty.round().max(0.0) as usize).min(self.ny - 1);
            return self.rows[j].eval(px);
        }
        let column: Vec<f64> = self.rows.iter().map(|r| r.eval(px)).collect();
        Spline1D::new(self.y[0], self.y[1], column).map_or(f64::NAN, |s| s.eval(py))
    }

    /// Evaluates on the tensor grid `xs × ys` (row-major, x fastest).
    pub fn eval_grid(&self, xs: &[f64], ys: &[f64]) -> Vec<f64> {
        let columns: Vec<Spline1D> = xs
            .iter()
            .map(|&px| {
                let c: Vec<f64> = self.rows.iter().map(|r| r.eval(px)).collect();
                Spline1D::new(self.y[0], self.y[1], c).expect("ny >= 2")
            })
            .collect();
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for &py in ys {
            out.extend(columns.iter().map(|c| c.eval(py)));
        }
        out
    }
}

impl SourceField for Spline2D {
    fn value(&self, p: [f64; 2]) -> f64 {
        self.eval(p[0], p[1])
    }
}

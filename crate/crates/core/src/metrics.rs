//! Relative grid errors and cell-wise (broken) Sobolev norms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mesh, Side};
use crate::problem::ProblemSpec;
use crate::reconstruction::PiecewiseSolution;
use crate::reference::Fd1d;
use crate::scalar::Real;
use crate::source::SourceField;

/// Relative L² and L∞ errors of `pred` against `truth` over grid points.
pub fn relative_errors<T: Real>(pred: &[T], truth: &[T]) -> Result<(T, T)> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch { expected: truth.len(), got: pred.len() });
    }
    let (mut num2, mut den2, mut num_inf, mut den_inf) = (T::zero(), T::zero(), T::zero(), T::zero());
    for (&p, &t) in pred.iter().zip(truth) {
        let d = p - t;
        num2 += d * d;
        den2 += t * t;
        num_inf = num_inf.max(d.abs());
        den_inf = den_inf.max(t.abs());
    }
    if den_inf == T::zero() || !den2.is_finite() {
        return Err(Error::ZeroReference);
    }
    Ok(((num2 / den2).sqrt(), num_inf / den_inf))
}

/// Order statistics of a list of errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub median: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        if values.is_empty() {
            return Stats { median: f64::NAN, mean: f64::NAN, min: f64::NAN, max: f64::NAN };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Stats { median, mean: v.iter().sum::<f64>() / n as f64, min: v[0], max: v[n - 1] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub sample: usize,
    pub rel_l2: f64,
    pub rel_linf: f64,
}

/// Per-sample errors with aggregates, and broken norms when computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub samples: Vec<SampleError>,
    pub rel_l2: Stats,
    pub rel_linf: Stats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub broken_norm: Option<Vec<f64>>,
}

impl ErrorReport {
    pub fn new(samples: Vec<SampleError>) -> Self {
        let l2: Vec<f64> = samples.iter().map(|s| s.rel_l2).collect();
        let linf: Vec<f64> = samples.iter().map(|s| s.rel_linf).collect();
        ErrorReport { rel_l2: Stats::of(&l2), rel_linf: Stats::of(&linf), samples, broken_norm: None }
    }

    /// One CSV row per sample: `benchmark,sample,rel_l2,rel_linf`.
    pub fn to_csv(&self, benchmark: &str) -> String {
        let mut out = String::from("benchmark,sample,rel_l2,rel_linf\n");
        for s in &self.samples {
            out.push_str(&format!("{benchmark},{},{:e},{:e}\n", s.sample, s.rel_l2, s.rel_linf));
        }
        out
    }
}

/// Quadrature weights and derivative samples of a function on one cell.
/// `derivs[k][q]` is the k-th derivative at node `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSamples {
    pub weights: Vec<f64>,
    pub derivs: Vec<Vec<f64>>,
}

impl CellSamples {
    /// Pointwise difference of two samplings on the same nodes.
    pub fn sub(&self, other: &CellSamples) -> Result<CellSamples> {
        if self.weights.len() != other.weights.len() {
            return Err(Error::ShapeMismatch { expected: self.weights.len(), got: other.weights.len() });
        }
        let k = self.derivs.len().min(other.derivs.len());
        let derivs = (0..k)
            .map(|d| self.derivs[d].iter().zip(&other.derivs[d]).map(|(a, b)| a - b).collect())
            .collect();
        Ok(CellSamples { weights: self.weights.clone(), derivs })
    }

    fn squared(&self, order: usize) -> f64 {
        self.weights.iter().zip(&self.derivs[order]).map(|(w, v)| w * v * v).sum()
    }
}

/// `(Σ_{k≤l} Σ_cells ‖u^(k)‖²)^{1/2}`.
pub fn broken_norm(cells: &[CellSamples], order: usize) -> Result<f64> {
    let mut acc = 0.0;
    for c in cells {
        if c.derivs.len() <= order {
            return Err(Error::InsufficientDerivatives { order, got: c.derivs.len().saturating_sub(1) });
        }
        acc += (0..=order).map(|k| c.squared(k)).sum::<f64>();
    }
    Ok(acc.sqrt())
}

/// `(ε ‖u‖*₁² + ‖u‖*₀²)^{1/2}`.
pub fn epsilon_norm(cells: &[CellSamples], eps: f64) -> Result<f64> {
    let n1 = broken_norm(cells, 1)?;
    let n0 = broken_norm(cells, 0)?;
    Ok((eps * n1 * n1 + n0 * n0).sqrt())
}

/// Fourth-order first-derivative weights (times `12 h`) for a five-node
/// stencil, one row per evaluation position.
const D1: [[f64; 5]; 5] = [
    [-25.0, 48.0, -36.0, 16.0, -3.0],
    [-3.0, -10.0, 18.0, -6.0, 1.0],
    [1.0, -8.0, 0.0, 8.0, -1.0],
    [-1.0, 6.0, -18.0, 10.0, 3.0],
    [3.0, -16.0, 36.0, -48.0, 25.0],
];

/// Node ranges of the reference grid between consecutive breakpoints.
fn subdomains(fd: &Fd1d) -> Vec<(usize, usize)> {
    let mut cuts = vec![0];
    cuts.extend((1..fd.n).filter(|&i| fd.is_interface(i)));
    cuts.push(fd.n);
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Node range of a subdomain with the jets on it.
type SubdomainJets = ((usize, usize), Vec<[f64; 3]>);

/// Value, derivative and second derivative of the reference at every node,
/// one-sided per subdomain. The second derivative comes from the equation.
fn reference_jets(spec: &ProblemSpec, fd: &Fd1d, f: &dyn SourceField) -> Result<Vec<SubdomainJets>> {
    let mut out = Vec::new();
    for (lo, hi) in subdomains(fd) {
        if hi - lo < 4 {
            return Err(Error::Config("subdomain too narrow for the derivative stencil".into()));
        }
        let side = |i: usize| if i == lo { Side::Plus } else { Side::Minus };
        let u: Vec<f64> = (lo..=hi).map(|i| fd.value(i, side(i))).collect();
        let jets = (lo..=hi)
            .map(|i| {
                let start = i.saturating_sub(2).clamp(lo, hi - 4);
                let w = &D1[i - start];
                let d1 = (0..5).map(|k| w[k] * u[start + k - lo]).sum::<f64>() / (12.0 * fd.h);
                let p = [fd.x(i), 0.0];
                let v = u[i - lo];
                let a = spec.a.eval_side(p, side(i));
                let b = spec.b.eval_side(p, side(i));
                [v, d1, (b * v - f.value(p)) / a]
            })
            .collect();
        out.push(((lo, hi), jets));
    }
    Ok(out)
}

/// Composite Simpson samples of `u_θ - u` on every training cell, using the
/// reference nodes inside each cell. Each cell must span an even number of
/// reference intervals.
pub fn error_cell_samples(
    spec: &ProblemSpec,
    mesh: &Mesh<f64>,
    fd: &Fd1d,
    f: &dyn SourceField,
    sol: &PiecewiseSolution,
) -> Result<Vec<CellSamples>> {
    if spec.dim() != 1 {
        return Err(Error::Config("broken norms are available for 1D problems only".into()));
    }
    let jets = reference_jets(spec, fd, f)?;
    let node = |x: f64| ((x - fd.lo) / fd.h).round() as usize;
    let mut cells = Vec::with_capacity(mesh.n_cells());
    for cell in 0..mesh.n_cells() {
        let [l, r] = mesh.cell(cell).x;
        let (i0, i1) = (node(l), node(r));
        let m = i1 - i0;
        if m == 0 || m % 2 != 0 || ((r - l) / fd.h - m as f64).abs() > 1e-6 {
            return Err(Error::MeshMismatch(format!("cell {cell} does not span an even number of reference intervals")));
        }
        let (range, jet) = jets
            .iter()
            .find(|((lo, hi), _)| *lo <= i0 && i1 <= *hi)
            .ok_or_else(|| Error::MeshMismatch(format!("cell {cell} straddles an interface")))?;
        let mut weights = Vec::with_capacity(m + 1);
        let mut derivs: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(m + 1)).collect();
        for k in 0..=m {
            let i = i0 + k;
            let w = if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            weights.push(w * fd.h / 3.0);
            let (v, g, lap) = sol.cell_jet(cell, [fd.x(i), 0.0])?;
            let u = jet[i - range.0];
            derivs[0].push(v - u[0]);
            derivs[1].push(g[0] - u[1]);
            derivs[2].push(lap - u[2]);
        }
        cells.push(CellSamples { weights, derivs });
    }
    Ok(cells)
}

//! Per-cell tailored bases: homogeneous solutions of the frozen-coefficient
//! equation plus a particular solution absorbing the source.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::problem::ProblemSpec;
use crate::source::SourceField;
use crate::special_fn::{airy_eval, gauss_legendre};

/// Largest Airy argument magnitude used before switching to the exponential
/// basis with a frozen reaction coefficient.
const AIRY_LIMIT: f64 = 100.0;

/// Per-cell data of the 1D equation `-a0 u'' + (p x + q) u = f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellCoefficients1D {
    pub interval: [f64; 2],
    pub a0: f64,
    pub p: f64,
    pub q: f64,
}

impl CellCoefficients1D {
    pub fn c(&self, x: f64) -> f64 {
        self.p * x + self.q
    }
}

/// Per-cell data of the 2D equation `-a0 Δu + c0 u = F0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellCoefficients2D {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub a0: f64,
    pub c0: f64,
    pub mu: f64,
}

/// Linear interpolant of `b` per cell (one-sided at the interface) and the
/// cell value of `a`. Cells where the Airy form would be out of range or
/// indistinguishable from the constant case get `p = 0`, `q = c(mid)`.
pub fn fit_cell_coefficients_1d(spec: &ProblemSpec, mesh: &Mesh<f64>) -> Result<Vec<CellCoefficients1D>> {
    if mesh.dim != 1 || spec.dim() != 1 {
        return Err(Error::MeshMismatch("expected a 1D mesh and problem".into()));
    }
    (0..mesh.n_cells())
        .map(|j| {
            let cell = mesh.cell(j);
            let [l, r] = cell.x;
            let mid = 0.5 * (l + r);
            let ia = spec.a.piece_index([mid, 0.0], crate::geometry::Side::Minus).ok_or(Error::OutOfDomain([mid, 0.0]))?;
            let ib = spec.b.piece_index([mid, 0.0], crate::geometry::Side::Minus).ok_or(Error::OutOfDomain([mid, 0.0]))?;
            let a0 = spec.a.eval_piece(ia, [mid, 0.0]);
            if !(a0 > 0.0) {
                return Err(Error::NonPositiveCoefficient(a0));
            }
            let (cl, cr) = (spec.b.eval_piece(ib, [l, 0.0]), spec.b.eval_piece(ib, [r, 0.0]));
            Ok(frozen_or_linear(a0, l, r, cl, cr))
        })
        .collect()
}

/// Builds the interpolating coefficients of `c` on `[l, r]`, falling back to
/// the midpoint constant where the Airy argument is unusable.
pub fn frozen_or_linear(a0: f64, l: f64, r: f64, cl: f64, cr: f64) -> CellCoefficients1D {
    let p = (cr - cl) / (r - l);
    let q = cl - p * l;
    let scale = cl.abs().max(cr.abs());
    let linear = CellCoefficients1D { interval: [l, r], a0, p, q };
    if p == 0.0 || (p * (r - l)).abs() <= 1e-12 * scale {
        return CellCoefficients1D { p: 0.0, q: 0.5 * (cl + cr), ..linear };
    }
    let alpha = (a0 * p * p).powf(-1.0 / 3.0);
    if (cl * alpha).abs() > AIRY_LIMIT || (cr * alpha).abs() > AIRY_LIMIT {
        return CellCoefficients1D { p: 0.0, q: 0.5 * (cl + cr), ..linear };
    }
    linear
}

/// Cell-center values of `b` and `a` on each cell.
pub fn fit_cell_coefficients_2d(spec: &ProblemSpec, mesh: &Mesh<f64>) -> Result<Vec<CellCoefficients2D>> {
    if mesh.dim != 2 || spec.dim() != 2 {
        return Err(Error::MeshMismatch("expected a 2D mesh and problem".into()));
    }
    (0..mesh.n_cells())
        .map(|j| {
            let cell = mesh.cell(j);
            let c = cell.center();
            let a0 = spec.a.eval(c);
            let c0 = spec.b.eval(c);
            if !(a0 > 0.0) {
                return Err(Error::NonPositiveCoefficient(a0));
            }
            if c0 < 0.0 {
                return Err(Error::NegativeCoefficient(c0));
            }
            Ok(CellCoefficients2D { x: cell.x, y: cell.y, a0, c0, mu: (c0 / a0).sqrt() })
        })
        .collect()
}

/// Homogeneous solution family on a 1D cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind1D {
    /// `{1, x}`
    Linear,
    /// `{e^{κ(x - r)}, e^{-κ(x - l)}}`
    Exponential { kappa: f64 },
    /// `{Ai(τ)/N_ai, Bi(τ)/N_bi}` with `τ = α (p x + q)`; the norms are kept
    /// as logarithms.
    Airy { alpha: f64, log_norm_ai: f64, log_norm_bi: f64 },
}

/// Value and first two derivatives of a 1D function.
pub type Jet = [f64; 3];

/// Tailored basis of one 1D cell with the data of its Dirichlet Green's function.
#[derive(Debug, Clone)]
pub struct LocalBasis1D {
    pub coeffs: CellCoefficients1D,
    pub kind: Kind1D,
    /// Endpoint values `A_k(l)`, `A_k(r)`.
    ends: [[f64; 2]; 2],
    /// `D · W(A1, A2)` with `D = A1(l) A2(r) - A2(l) A1(r)`.
    wronskian: f64,
    quad_nodes: Vec<f64>,
    quad_weights: Vec<f64>,
}

impl LocalBasis1D {
    pub fn new(coeffs: CellCoefficients1D, quad_order: usize) -> Result<Self> {
        let [l, r] = coeffs.interval;
        if coeffs.c(l) < -1e-14 || coeffs.c(r) < -1e-14 {
            return Err(Error::NegativeCoefficient(coeffs.c(l).min(coeffs.c(r))));
        }
        let kind = if coeffs.p != 0.0 {
            let alpha = (coeffs.a0 * coeffs.p * coeffs.p).powf(-1.0 / 3.0);
            let log_abs = |t: f64| -> Result<(f64, f64)> {
                let v = airy_eval(t)?;
                Ok((v.ai.abs().ln() + v.ai_log_scale, v.bi.abs().ln() + v.bi_log_scale))
            };
            let (al, bl) = log_abs(alpha * coeffs.c(l))?;
            let (ar, br) = log_abs(alpha * coeffs.c(r))?;
            Kind1D::Airy { alpha, log_norm_ai: al.max(ar), log_norm_bi: bl.max(br) }
        } else if coeffs.q > 0.0 {
            Kind1D::Exponential { kappa: (coeffs.q / coeffs.a0).sqrt() }
        } else {
            Kind1D::Linear
        };
        let rule = gauss_legendre::<f64>(quad_order)?;
        let mut basis = LocalBasis1D {
            coeffs,
            kind,
            ends: [[0.0; 2]; 2],
            wronskian: 0.0,
            quad_nodes: rule.nodes,
            quad_weights: rule.weights,
        };
        let (el, er) = (basis.eval(l)?, basis.eval(r)?);
        basis.ends = [[el[0][0], er[0][0]], [el[1][0], er[1][0]]];
        let d = basis.ends[0][0] * basis.ends[1][1] - basis.ends[1][0] * basis.ends[0][1];
        let m = basis.eval(0.5 * (l + r))?;
        let w12 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let size = basis.ends.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if !(d.abs() > 1e-13 * size * size) || !w12.is_finite() || w12 == 0.0 {
            return Err(Error::DegenerateWronskian(d));
        }
        basis.wronskian = d * w12;
        Ok(basis)
    }

    pub fn interval(&self) -> [f64; 2] {
        self.coeffs.interval
    }

    /// Jets of the two homogeneous functions at `x`.
    pub fn eval(&self, x: f64) -> Result<[Jet; 2]> {
        let [l, r] = self.coeffs.interval;
        Ok(match self.kind {
            Kind1D::Linear => [[1.0, 0.0, 0.0], [x, 1.0, 0.0]],
            Kind1D::Exponential { kappa } => {
                let e1 = (kappa * (x - r)).exp();
                let e2 = (-kappa * (x - l)).exp();
                [[e1, kappa * e1, kappa * kappa * e1], [e2, -kappa * e2, kappa * kappa * e2]]
            }
            Kind1D::Airy { alpha, log_norm_ai, log_norm_bi } => {
                let t = alpha * self.coeffs.c(x);
                let v = airy_eval(t)?;
                let dt = alpha * self.coeffs.p;
                let sa = (v.ai_log_scale - log_norm_ai).exp();
                let sb = (v.bi_log_scale - log_norm_bi).exp();
                let (ai, aip) = (v.ai * sa, v.ai_prime * sa);
                let (bi, bip) = (v.bi * sb, v.bi_prime * sb);
                [[ai, dt * aip, dt * dt * t * ai], [bi, dt * bip, dt * dt * t * bi]]
            }
        })
    }

    /// Jets of `φ1 = A1 A2(l) - A2 A1(l)` (zero at l) and
    /// `φ2 = A1 A2(r) - A2 A1(r)` (zero at r).
    fn green_pair(&self, x: f64) -> Result<[Jet; 2]> {
        let [a1, a2] = self.eval(x)?;
        let comb = |c1: f64, c2: f64| [0, 1, 2].map(|k| c1 * a1[k] - c2 * a2[k]);
        Ok([comb(self.ends[1][0], self.ends[0][0]), comb(self.ends[1][1], self.ends[0][1])])
    }

    fn integrate(&self, lo: f64, hi: f64, f: &dyn Fn(f64) -> Result<f64>) -> Result<f64> {
        let (half, mid) = (0.5 * (hi - lo), 0.5 * (hi + lo));
        let mut acc = 0.0;
        for (&t, &w) in self.quad_nodes.iter().zip(&self.quad_weights) {
            acc += w * f(mid + half * t)?;
        }
        Ok(acc * half)
    }

    /// Jet of the particular solution `u_p(x) = ∫ G(x, s) F(s) ds` with zero
    /// Dirichlet values at both cell ends.
    pub fn particular(&self, x: f64, source: &dyn SourceField) -> Result<Jet> {
        let [l, r] = self.coeffs.interval;
        let x = x.clamp(l, r);
        let fv = |s: f64| source.value([s, 0.0]);
        let i1 = if x > l { self.integrate(l, x, &|s| Ok(self.green_pair(s)?[0][0] * fv(s)))? } else { 0.0 };
        let i2 = if x < r { self.integrate(x, r, &|s| Ok(self.green_pair(s)?[1][0] * fv(s)))? } else { 0.0 };
        let [p1, p2] = self.green_pair(x)?;
        let k = -1.0 / (self.coeffs.a0 * self.wronskian);
        Ok([
            k * (p2[0] * i1 + p1[0] * i2),
            k * (p2[1] * i1 + p1[1] * i2),
            k * (p2[2] * i1 + p1[2] * i2 + self.wronskian * fv(x)),
        ])
    }

    /// Derivatives of the particular solution at the left and right ends.
    pub fn particular_end_slopes(&self, source: &dyn SourceField) -> Result<[f64; 2]> {
        let [l, r] = self.coeffs.interval;
        let k = -1.0 / (self.coeffs.a0 * self.wronskian);
        let [pl, _] = self.green_pair(l)?;
        let [_, pr] = self.green_pair(r)?;
        let full1 = self.integrate(l, r, &|s| Ok(self.green_pair(s)?[0][0] * source.value([s, 0.0])))?;
        let full2 = self.integrate(l, r, &|s| Ok(self.green_pair(s)?[1][0] * source.value([s, 0.0])))?;
        Ok([k * pl[1] * full2, k * pr[1] * full1])
    }

    /// `-a0 φ'' + c_h φ` for a jet at `x`.
    pub fn operator(&self, x: f64, jet: &Jet) -> f64 {
        -self.coeffs.a0 * jet[2] + self.coeffs.c(x) * jet[0]
    }
}

/// Tailored basis of one 2D cell: four exponentials plus a constant
/// particular term, or a bilinear family when `c0 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalBasis2D {
    pub coeffs: CellCoefficients2D,
}

/// Value and gradient of a 2D function.
pub type Jet2 = [f64; 3];

impl LocalBasis2D {
    pub fn new(coeffs: CellCoefficients2D) -> Self {
        LocalBasis2D { coeffs }
    }

    /// Value, ∂x, ∂y of the four homogeneous functions at `p`.
    pub fn eval(&self, p: [f64; 2]) -> [Jet2; 4] {
        let c = &self.coeffs;
        if c.c0 > 0.0 {
            let m = c.mu;
            let e1 = (m * (p[0] - c.x[1])).exp();
            let e2 = (-m * (p[0] - c.x[0])).exp();
            let e3 = (m * (p[1] - c.y[1])).exp();
            let e4 = (-m * (p[1] - c.y[0])).exp();
            [[e1, m * e1, 0.0], [e2, -m * e2, 0.0], [e3, 0.0, m * e3], [e4, 0.0, -m * e4]]
        } else {
            let (hx, hy) = (0.5 * (c.x[1] - c.x[0]), 0.5 * (c.y[1] - c.y[0]));
            let sx = (p[0] - 0.5 * (c.x[0] + c.x[1])) / hx;
            let sy = (p[1] - 0.5 * (c.y[0] + c.y[1])) / hy;
            [[1.0, 0.0, 0.0], [sx, 1.0 / hx, 0.0], [sy, 0.0, 1.0 / hy], [sx * sy, sy / hx, sx / hy]]
        }
    }

    /// Laplacians of the four homogeneous functions at `p`.
    pub fn laplacian(&self, p: [f64; 2]) -> [f64; 4] {
        let m2 = self.coeffs.mu * self.coeffs.mu;
        if self.coeffs.c0 > 0.0 {
            self.eval(p).map(|j| m2 * j[0])
        } else {
            [0.0; 4]
        }
    }

    /// Particular term for the cell source value `f0`: value, gradient and Laplacian.
    pub fn particular(&self, p: [f64; 2], f0: f64) -> [f64; 4] {
        let c = &self.coeffs;
        if c.c0 > 0.0 {
            [f0 / c.c0, 0.0, 0.0, 0.0]
        } else {
            let k = -f0 / (4.0 * c.a0);
            let (dx, dy) = (p[0] - 0.5 * (c.x[0] + c.x[1]), p[1] - 0.5 * (c.y[0] + c.y[1]));
            [k * (dx * dx + dy * dy), 2.0 * k * dx, 2.0 * k * dy, 4.0 * k]
        }
    }
}

/// Bases of every cell of a mesh.
#[derive(Debug, Clone)]
pub enum MeshBasis {
    OneD(Vec<LocalBasis1D>),
    TwoD(Vec<LocalBasis2D>),
}

impl MeshBasis {
    pub fn build(spec: &ProblemSpec, mesh: &Mesh<f64>, quad_order: usize) -> Result<Self> {
        if mesh.dim == 1 {
            let cells = fit_cell_coefficients_1d(spec, mesh)?;
            Ok(MeshBasis::OneD(cells.into_iter().map(|c| LocalBasis1D::new(c, quad_order)).collect::<Result<_>>()?))
        } else {
            let cells = fit_cell_coefficients_2d(spec, mesh)?;
            Ok(MeshBasis::TwoD(cells.into_iter().map(LocalBasis2D::new).collect()))
        }
    }

    /// Homogeneous functions per cell.
    pub fn per_cell(&self) -> usize {
        match self {
            MeshBasis::OneD(_) => 2,
            MeshBasis::TwoD(_) => 4,
        }
    }

    pub fn n_cells(&self) -> usize {
        match self {
            MeshBasis::OneD(v) => v.len(),
            MeshBasis::TwoD(v) => v.len(),
        }
    }
}

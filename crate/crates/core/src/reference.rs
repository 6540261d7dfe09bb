//! Ground truth by jump-coupled finite differences, and the exact
//! least-squares coefficient fit that bypasses the network.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Side;
use crate::linalg::BandMatrix;
use crate::physics_loss::{Discretization, LossWeights, Reduction};
use crate::problem::{FluxConvention, ProblemSpec};
use crate::reconstruction::evaluation_points;
use crate::source::SourceField;

/// Finest resolution the layer-driven refinement may reach.
pub const MAX_RESOLUTION_1D: usize = 1 << 16;
pub const MAX_RESOLUTION_2D: usize = 2048;

/// Reference values on an evaluation grid (see [`evaluation_points`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub resolution: [usize; 2],
    /// Grid on which the finite-difference system was solved.
    pub solve_resolution: [usize; 2],
    pub values: Vec<f64>,
}

/// Smallest `base · 2^k` with `h <= width / 8`, capped at `cap`.
fn resolve_layer(base: usize, width: f64, length: f64, cap: usize) -> Result<usize> {
    let mut n = base;
    while length / n as f64 > width / 8.0 {
        n *= 2;
        if n > cap {
            return Err(Error::UnresolvedLayer(cap));
        }
    }
    Ok(n)
}

fn flux_weight(spec: &ProblemSpec, x: [f64; 2], side: Side) -> f64 {
    match spec.flux_convention {
        FluxConvention::Derivative => 1.0,
        FluxConvention::Flux => spec.a.eval_side(x, side),
    }
}

/// Finite-difference solution on a uniform 1D grid. Interface nodes carry a
/// value for each side.
#[derive(Debug, Clone, PartialEq)]
pub struct Fd1d {
    pub lo: f64,
    pub h: f64,
    pub n: usize,
    /// Unknown index of each node's minus value; the plus value follows
    /// immediately at interface nodes.
    index: Vec<usize>,
    interface: Vec<bool>,
    pub u: Vec<f64>,
}

impl Fd1d {
    pub fn value(&self, i: usize, side: Side) -> f64 {
        let k = self.index[i];
        if self.interface[i] && side == Side::Plus {
            self.u[k + 1]
        } else {
            self.u[k]
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.lo + self.h * i as f64
    }

    pub fn is_interface(&self, i: usize) -> bool {
        self.interface[i]
    }
}

/// Conservative second-order scheme for `-(a u')' + b u = f` with doubled
/// interface unknowns coupled by the value jump and a one-sided second-order
/// flux jump.
#[allow(clippy::needless_range_loop)]
pub fn solve_fd1d(spec: &ProblemSpec, f: &dyn SourceField, n: usize) -> Result<Fd1d> {
    let mesh = spec.mesh([n, 1])?;
    let (lo, hi) = (mesh.xs[0], mesh.xs[n]);
    let h = (hi - lo) / n as f64;
    let mut interface = vec![false; n + 1];
    for &i in &mesh.interface_x_index {
        if i < 3 || i + 3 > n {
            return Err(Error::Config("interface too close to the boundary for the reference grid".into()));
        }
        interface[i] = true;
    }
    let mut index = Vec::with_capacity(n + 1);
    let mut k = 0;
    for &g in &interface {
        index.push(k);
        k += if g { 2 } else { 1 };
    }
    let size = k;
    let minus = |i: usize| index[i];
    let plus = |i: usize| index[i] + usize::from(interface[i]);
    let x = |i: usize| lo + h * i as f64;
    let mut a = BandMatrix::zeros(size, 2, 3);
    let mut rhs = vec![0.0; size];
    a.add(0, 0, 1.0);
    rhs[0] = spec.boundary.eval([lo, 0.0]);
    a.add(size - 1, size - 1, 1.0);
    rhs[size - 1] = spec.boundary.eval([hi, 0.0]);
    let h2 = h * h;
    for i in 1..n {
        let xi = [x(i), 0.0];
        if interface[i] {
            let (m, p) = (minus(i), plus(i));
            let (wm, wp) = (flux_weight(spec, xi, Side::Minus), flux_weight(spec, xi, Side::Plus));
            let s = 1.0 / (2.0 * h);
            a.add(m, p, -3.0 * wp * s);
            a.add(m, minus(i + 1), 4.0 * wp * s);
            a.add(m, minus(i + 2), -wp * s);
            a.add(m, m, -3.0 * wm * s);
            a.add(m, plus(i - 1), 4.0 * wm * s);
            a.add(m, plus(i - 2), -wm * s);
            rhs[m] = spec.jump_flux.eval(xi);
            a.add(p, p, 1.0);
            a.add(p, m, -1.0);
            rhs[p] = spec.jump_value.eval(xi);
            continue;
        }
        let row = minus(i);
        let al = spec.a.eval([x(i) - 0.5 * h, 0.0]);
        let ar = spec.a.eval([x(i) + 0.5 * h, 0.0]);
        a.add(row, plus(i - 1), -al / h2);
        a.add(row, minus(i + 1), -ar / h2);
        a.add(row, row, (al + ar) / h2 + spec.b.eval(xi));
        rhs[row] = f.value(xi);
    }
    let u = a.solve(&rhs)?;
    Ok(Fd1d { lo, h, n, index, interface, u })
}

/// Resolution the 1D reference uses for a requested test resolution.
/// Richardson extrapolation of the `n` and `2n` solutions onto the `n`-cell
/// grid, cancelling the leading `h²` error term.
pub fn solve_fd1d_extrapolated(spec: &ProblemSpec, f: &dyn SourceField, n: usize) -> Result<Fd1d> {
    let mut coarse = solve_fd1d(spec, f, n)?;
    let fine = solve_fd1d(spec, f, 2 * n)?;
    for i in 0..=n {
        for side in [Side::Minus, Side::Plus] {
            if side == Side::Plus && !coarse.interface[i] {
                continue;
            }
            let k = coarse.index[i] + usize::from(side == Side::Plus);
            coarse.u[k] = (4.0 * fine.value(2 * i, side) - coarse.u[k]) / 3.0;
        }
    }
    Ok(coarse)
}

pub fn reference_resolution_1d(spec: &ProblemSpec, test: usize, refine: usize) -> Result<usize> {
    resolve_layer(test * refine.max(1), spec.layer_width(), spec.domain.measure(), MAX_RESOLUTION_1D)
}

/// Solves on a layer-resolving grid and restricts to the evaluation grid of
/// `resolution` cells (`[nx, ny]`, `ny` ignored in 1D).
pub fn solve_reference(spec: &ProblemSpec, f: &dyn SourceField, resolution: [usize; 2], refine: usize) -> Result<ReferenceSolution> {
    if spec.dim() == 1 {
        let n = reference_resolution_1d(spec, resolution[0], refine)?;
        let fd = solve_fd1d(spec, f, n)?;
        let stride = n / resolution[0];
        let pts = evaluation_points(spec, [resolution[0], 1]);
        let lo = fd.lo;
        let values = pts
            .iter()
            .map(|&(p, side)| {
                let i = (((p[0] - lo) / fd.h).round() as usize).min(n);
                debug_assert_eq!(i % stride, 0);
                fd.value(i, side.unwrap_or(Side::Minus))
            })
            .collect();
        Ok(ReferenceSolution { resolution: [resolution[0], 1], solve_resolution: [n, 1], values })
    } else {
        let n = resolve_layer(resolution[0].max(resolution[1]) * refine.max(1), spec.layer_width(), 1.0, MAX_RESOLUTION_2D)?;
        let fd = solve_fd2d(spec, f, [n, n])?;
        let (sx, sy) = (n / resolution[0], n / resolution[1]);
        let pts = evaluation_points(spec, resolution);
        let values = pts
            .iter()
            .map(|&(p, side)| {
                let i = ((p[0] * n as f64).round() as usize).min(n);
                let j = ((p[1] * n as f64).round() as usize).min(n);
                debug_assert!(i % sx == 0 && j % sy == 0);
                fd.value(i, j, side.unwrap_or(Side::Minus))
            })
            .collect();
        Ok(ReferenceSolution { resolution, solve_resolution: [n, n], values })
    }
}

/// Finite-difference solution on a uniform 2D grid over the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct Fd2d {
    pub nx: usize,
    pub ny: usize,
    interface_column: Vec<bool>,
    /// `u[j][k]` with `k` the x-unknown index (doubled at interface columns).
    u: Vec<Vec<f64>>,
    col_index: Vec<usize>,
}

impl Fd2d {
    pub fn value(&self, i: usize, j: usize, side: Side) -> f64 {
        let k = self.col_index[i] + usize::from(self.interface_column[i] && side == Side::Plus);
        self.u[j][k]
    }
}

/// Type-I discrete sine transform `X_m = Σ_{j=1}^{n-1} x_j sin(π m j / n)`
/// through an FFT of the odd extension.
struct Dst {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Dst {
    fn new(n: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(2 * n);
        Dst { n, fft }
    }

    /// Transforms `x[1..n]` (length `n - 1`).
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut buf = vec![Complex::new(0.0, 0.0); 2 * n];
        for (j, &v) in x.iter().enumerate() {
            buf[j + 1] = Complex::new(v, 0.0);
            buf[2 * n - 1 - j] = Complex::new(-v, 0.0);
        }
        self.fft.process(&mut buf);
        (1..n).map(|m| -0.5 * buf[m].im).collect()
    }

    fn inverse(&self, x: &[f64]) -> Vec<f64> {
        let s = 2.0 / self.n as f64;
        self.apply(x).into_iter().map(|v| v * s).collect()
    }
}

/// Solver for coefficients depending on x only: a sine transform in y turns
/// the problem into one 1D interface system per mode.
pub fn solve_fd2d(spec: &ProblemSpec, f: &dyn SourceField, res: [usize; 2]) -> Result<Fd2d> {
    if !spec.a.is_x_only() || !spec.b.is_x_only() || !spec.interface.y.is_empty() {
        return Err(Error::Config("the 2D reference solver needs x-only coefficients and vertical interfaces".into()));
    }
    let mesh = spec.mesh(res)?;
    let [nx, ny] = res;
    let (hx, hy) = (1.0 / nx as f64, 1.0 / ny as f64);
    let mut interface = vec![false; nx + 1];
    for &i in &mesh.interface_x_index {
        if i < 3 || i + 3 > nx {
            return Err(Error::Config("interface too close to the boundary for the reference grid".into()));
        }
        interface[i] = true;
    }
    let mut col_index = Vec::with_capacity(nx + 1);
    let mut k = 0;
    for &g in &interface {
        col_index.push(k);
        k += if g { 2 } else { 1 };
    }
    let size = k;
    let xs: Vec<f64> = (0..=nx).map(|i| i as f64 * hx).collect();
    let ys: Vec<f64> = (0..=ny).map(|j| j as f64 * hy).collect();
    let dst = Dst::new(ny);
    let interior_y = &ys[1..ny];

    // Right-hand sides per unknown column, transformed in y.
    let fgrid = source_grid(f, &xs, &ys);
    let mut rhs_hat: Vec<Vec<f64>> = vec![Vec::new(); size];
    for i in 0..=nx {
        let k = col_index[i];
        if i == 0 || i == nx {
            let col: Vec<f64> = interior_y.iter().map(|&y| spec.boundary.eval([xs[i], y])).collect();
            rhs_hat[k] = dst.apply(&col);
        } else if interface[i] {
            let gn: Vec<f64> = interior_y.iter().map(|&y| spec.jump_flux.eval([xs[i], y])).collect();
            let gd: Vec<f64> = interior_y.iter().map(|&y| spec.jump_value.eval([xs[i], y])).collect();
            rhs_hat[k] = dst.apply(&gn);
            rhs_hat[k + 1] = dst.apply(&gd);
        } else {
            let ai = spec.a.eval([xs[i], 0.5]);
            let mut col: Vec<f64> = (1..ny).map(|j| fgrid[j * (nx + 1) + i]).collect();
            col[0] += ai * spec.boundary.eval([xs[i], 0.0]) / (hy * hy);
            col[ny - 2] += ai * spec.boundary.eval([xs[i], 1.0]) / (hy * hy);
            rhs_hat[k] = dst.apply(&col);
        }
    }

    let minus = |i: usize| col_index[i];
    let plus = |i: usize| col_index[i] + usize::from(interface[i]);
    let modes: Vec<Vec<f64>> = (1..ny)
        .map(|m| {
            let lam = 4.0 / (hy * hy) * (std::f64::consts::PI * m as f64 / (2.0 * ny as f64)).sin().powi(2);
            let mut a = BandMatrix::zeros(size, 2, 3);
            let mut rhs = vec![0.0; size];
            for i in 0..=nx {
                let xi = [xs[i], 0.5];
                let k = col_index[i];
                if i == 0 || i == nx {
                    a.add(k, k, 1.0);
                    rhs[k] = rhs_hat[k][m - 1];
                } else if interface[i] {
                    let (mi, pi) = (minus(i), plus(i));
                    let (wm, wp) = (flux_weight(spec, xi, Side::Minus), flux_weight(spec, xi, Side::Plus));
                    let s = 1.0 / (2.0 * hx);
                    a.add(mi, pi, -3.0 * wp * s);
                    a.add(mi, minus(i + 1), 4.0 * wp * s);
                    a.add(mi, minus(i + 2), -wp * s);
                    a.add(mi, mi, -3.0 * wm * s);
                    a.add(mi, plus(i - 1), 4.0 * wm * s);
                    a.add(mi, plus(i - 2), -wm * s);
                    rhs[mi] = rhs_hat[mi][m - 1];
                    a.add(pi, pi, 1.0);
                    a.add(pi, mi, -1.0);
                    rhs[pi] = rhs_hat[pi][m - 1];
                } else {
                    let al = spec.a.eval([xs[i] - 0.5 * hx, 0.5]);
                    let ar = spec.a.eval([xs[i] + 0.5 * hx, 0.5]);
                    let ai = spec.a.eval(xi);
                    let h2 = hx * hx;
                    a.add(k, plus(i - 1), -al / h2);
                    a.add(k, minus(i + 1), -ar / h2);
                    a.add(k, k, (al + ar) / h2 + spec.b.eval(xi) + ai * lam);
                    rhs[k] = rhs_hat[k][m - 1];
                }
            }
            a.solve(&rhs)
        })
        .collect::<Result<_>>()?;

    // Back to physical space, column by column.
    let mut u = vec![vec![0.0; size]; ny + 1];
    for k in 0..size {
        let coeffs: Vec<f64> = modes.iter().map(|v| v[k]).collect();
        let col = dst.inverse(&coeffs);
        for j in 1..ny {
            u[j][k] = col[j - 1];
        }
    }
    for (j, y) in [(0usize, 0.0f64), (ny, 1.0)] {
        for i in 0..=nx {
            let p = [xs[i], y];
            u[j][minus(i)] = spec.boundary.eval_side(p, Side::Minus);
            u[j][plus(i)] = spec.boundary.eval_side(p, Side::Plus);
        }
    }
    Ok(Fd2d { nx, ny, interface_column: interface, u, col_index })
}

/// Source values on a tensor grid, row-major with x fastest.
fn source_grid(f: &dyn SourceField, xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y in ys {
        out.extend(xs.iter().map(|&x| f.value([x, y])));
    }
    out
}

/// Exact minimizer of the weighted collocation loss, with the orthogonal
/// factorization of the column-scaled Jacobian computed once and reused.
#[derive(Debug, Clone)]
pub struct Oracle {
    r: DMatrix<f64>,
    q_t: DMatrix<f64>,
    col_scale: Vec<f64>,
    row_scale: Vec<f64>,
    /// Ridge added because the system was rank deficient.
    pub ridge: f64,
}

impl Oracle {
    pub fn new(disc: &Discretization, weights: &LossWeights, reduction: Reduction) -> Result<Self> {
        let sys = &disc.system;
        let (m, n) = (sys.n_rows(), sys.n_cols);
        let row_scale: Vec<f64> = sys.row_weights(weights, reduction).iter().map(|w| w.sqrt()).collect();
        let dense = sys.dense_jacobian();
        let mut a = DMatrix::from_fn(m, n, |i, j| row_scale[i] * dense[i * n + j]);
        let col_scale: Vec<f64> = (0..n)
            .map(|j| {
                let norm = a.column(j).norm();
                if norm > 0.0 {
                    1.0 / norm
                } else {
                    1.0
                }
            })
            .collect();
        for (j, &s) in col_scale.iter().enumerate() {
            a.column_mut(j).scale_mut(s);
        }
        let (r, q_t, ridge) = Self::factor(&a, 0.0)?;
        if rank_deficient(&r) {
            log::warn!("collocation system is rank deficient; adding a 1e-12 ridge");
            let (r, q_t, ridge) = Self::factor(&a, 1e-12)?;
            if rank_deficient(&r) {
                return Err(Error::RankDeficient);
            }
            return Ok(Oracle { r, q_t, col_scale, row_scale, ridge });
        }
        Ok(Oracle { r, q_t, col_scale, row_scale, ridge })
    }

    fn factor(a: &DMatrix<f64>, ridge: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
        let (m, n) = a.shape();
        let a = if ridge > 0.0 {
            let mut aug = DMatrix::zeros(m + n, n);
            aug.view_mut((0, 0), (m, n)).copy_from(a);
            for j in 0..n {
                aug[(m + j, j)] = ridge.sqrt();
            }
            aug
        } else {
            a.clone()
        };
        if a.nrows() < n {
            return Err(Error::RankDeficient);
        }
        let qr = a.qr();
        let r = qr.r();
        let q_t = qr.q().transpose();
        Ok((r, q_t, ridge))
    }

    /// Coefficients minimizing the loss for residual offsets `r0`.
    pub fn solve(&self, offsets: &[f64]) -> Result<Vec<f64>> {
        let m = self.row_scale.len();
        if offsets.len() != m {
            return Err(Error::ShapeMismatch { expected: m, got: offsets.len() });
        }
        let mut b = DVector::zeros(self.q_t.ncols());
        for i in 0..m {
            b[i] = -self.row_scale[i] * offsets[i];
        }
        let qb = &self.q_t * b;
        let z = self.r.solve_upper_triangular(&qb).ok_or(Error::RankDeficient)?;
        Ok(z.iter().zip(&self.col_scale).map(|(z, s)| z * s).collect())
    }
}

fn rank_deficient(r: &DMatrix<f64>) -> bool {
    let d: Vec<f64> = (0..r.ncols().min(r.nrows())).map(|i| r[(i, i)].abs()).collect();
    let max = d.iter().cloned().fold(0.0, f64::max);
    d.len() < r.ncols() || d.iter().any(|&v| !(v > 1e-12 * max))
}

/// One-shot least-squares fit for a single source sample.
pub fn fit_oracle_coefficients(disc: &Discretization, f: &dyn SourceField) -> Result<Vec<f64>> {
    Oracle::new(disc, &LossWeights::default(), Reduction::Sum)?.solve(&disc.offsets(f)?)
}

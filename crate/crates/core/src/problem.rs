//! Benchmark problem definitions and the 1D coordinate transformation.
//!
//! Problems have the form `-div(a grad u) + b u = f` on Ω \ Γ with jump data
//! `[u] = g_D`, a flux jump `g_N` across Γ and `u = g_B` on ∂Ω.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_mesh, Domain, Interface, Mesh, Side};
use crate::special_fn::gauss_legendre;

/// Closed-form scalar expression of the coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Formula {
    Const { value: f64 },
    /// `Σ coeffs[k] x^k`
    PolyX { coeffs: Vec<f64> },
    /// `Σ coeffs[k] y^k`
    PolyY { coeffs: Vec<f64> },
    /// `c0 + c1 exp(rate x)`
    ExpX { c0: f64, c1: f64, rate: f64 },
    /// `c0 + c1 ln(x + 1)`
    LogX { c0: f64, c1: f64 },
}

impl Formula {
    pub fn constant(value: f64) -> Self {
        Formula::Const { value }
    }

    pub fn poly_x(coeffs: &[f64]) -> Self {
        Formula::PolyX { coeffs: coeffs.to_vec() }
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        match self {
            Formula::Const { value } => *value,
            Formula::PolyX { coeffs } => horner(coeffs, p[0]),
            Formula::PolyY { coeffs } => horner(coeffs, p[1]),
            Formula::ExpX { c0, c1, rate } => c0 + c1 * (rate * p[0]).exp(),
            Formula::LogX { c0, c1 } => c0 + c1 * (p[0] + 1.0).ln(),
        }
    }

    /// Partial derivative with respect to x.
    pub fn dx(&self, p: [f64; 2]) -> f64 {
        match self {
            Formula::Const { .. } | Formula::PolyY { .. } => 0.0,
            Formula::PolyX { coeffs } => {
                let d: Vec<f64> = coeffs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect();
                horner(&d, p[0])
            }
            Formula::ExpX { c1, rate, .. } => c1 * rate * (rate * p[0]).exp(),
            Formula::LogX { c1, .. } => c1 / (p[0] + 1.0),
        }
    }

    /// True when the expression does not depend on y.
    pub fn is_x_only(&self) -> bool {
        !matches!(self, Formula::PolyY { coeffs } if coeffs.len() > 1)
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Closed axis-aligned box; degenerate in y for 1D problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Region {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Region { x: [lo, hi], y: [0.0, 0.0] }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        const TOL: f64 = 1e-12;
        p[0] >= self.x[0] - TOL && p[0] <= self.x[1] + TOL && p[1] >= self.y[0] - TOL && p[1] <= self.y[1] + TOL
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.x[0] + self.x[1]), 0.5 * (self.y[0] + self.y[1])]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub region: Region,
    pub formula: Formula,
}

fn select_piece(pieces: &[Piece], p: [f64; 2], side: Side) -> Option<usize> {
    let mut hits = pieces.iter().enumerate().filter(|(_, pc)| pc.region.contains(p));
    let mut best = hits.next()?;
    for h in hits {
        let (cb, ch) = (best.1.region.center(), h.1.region.center());
        let lower = (ch[0], ch[1]) < (cb[0], cb[1]);
        if (side == Side::Minus) == lower {
            best = h;
        }
    }
    Some(best.0)
}

/// A function given by one smooth closed-form branch per subdomain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseFunction {
    pub pieces: Vec<Piece>,
}

impl PiecewiseFunction {
    pub fn new(pieces: Vec<(Region, Formula)>) -> Self {
        PiecewiseFunction {
            pieces: pieces.into_iter().map(|(region, formula)| Piece { region, formula }).collect(),
        }
    }

    pub fn uniform(region: Region, formula: Formula) -> Self {
        Self::new(vec![(region, formula)])
    }

    /// Index of the piece whose closed region holds `p`, one-sided on shared
    /// boundaries (`Minus` picks the left/lower piece).
    pub fn piece_index(&self, p: [f64; 2], side: Side) -> Option<usize> {
        select_piece(&self.pieces, p, side)
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.eval_side(p, Side::Minus)
    }

    /// One-sided evaluation; NaN outside every piece.
    pub fn eval_side(&self, p: [f64; 2], side: Side) -> f64 {
        self.piece_index(p, side).map_or(f64::NAN, |i| self.pieces[i].formula.eval(p))
    }

    /// Evaluates the branch of piece `i` (valid on the closure of its region).
    pub fn eval_piece(&self, i: usize, p: [f64; 2]) -> f64 {
        self.pieces[i].formula.eval(p)
    }

    pub fn is_x_only(&self) -> bool {
        self.pieces.iter().all(|p| p.formula.is_x_only())
    }

    /// Samples each branch on a 9×9 grid of its region (or 33 points in 1D).
    fn sample_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.pieces.iter().flat_map(|pc| {
            let r = pc.region;
            let ny = if r.y[0] == r.y[1] { 1 } else { 9 };
            let nx = if ny == 1 { 33 } else { 9 };
            (0..nx).flat_map(move |i| {
                (0..ny).map(move |j| {
                    let x = r.x[0] + (r.x[1] - r.x[0]) * i as f64 / (nx - 1) as f64;
                    let y = if ny == 1 { r.y[0] } else { r.y[0] + (r.y[1] - r.y[0]) * j as f64 / (ny - 1) as f64 };
                    pc.formula.eval([x, y])
                })
            })
        })
    }
}

/// How the flux jump across Γ is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxConvention {
    /// `[∇u·n] = g_N`
    Derivative,
    /// `[a ∇u·n] = g_N`
    Flux,
}

/// Dirichlet data on ∂Ω; zero wherever no piece applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BoundaryData {
    pub pieces: Vec<Piece>,
}

impl BoundaryData {
    pub fn zero() -> Self {
        BoundaryData::default()
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.eval_side(p, Side::Minus)
    }

    /// One-sided value where boundary pieces meet.
    pub fn eval_side(&self, p: [f64; 2], side: Side) -> f64 {
        select_piece(&self.pieces, p, side).map_or(0.0, |i| self.pieces[i].formula.eval(p))
    }
}

/// A parametric interface problem; the source f is supplied per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    pub domain: Domain<f64>,
    pub interface: Interface<f64>,
    pub a: PiecewiseFunction,
    pub b: PiecewiseFunction,
    pub jump_value: Formula,
    pub jump_flux: Formula,
    pub boundary: BoundaryData,
    pub flux_convention: FluxConvention,
    /// Small diffusion parameter of singularly perturbed problems.
    pub epsilon: Option<f64>,
}

pub const BENCHMARKS: [&str; 5] = ["1d-smooth", "1d-singular", "1d-high-contrast", "2d-interface", "2d-singular"];

fn halves_1d() -> (Region, Region) {
    (Region::interval(0.0, 0.5), Region::interval(0.5, 1.0))
}

fn halves_2d() -> (Region, Region) {
    (Region { x: [0.0, 0.5], y: [0.0, 1.0] }, Region { x: [0.5, 1.0], y: [0.0, 1.0] })
}

fn one_d(name: &str, a: PiecewiseFunction, b: PiecewiseFunction, epsilon: Option<f64>) -> ProblemSpec {
    ProblemSpec {
        name: name.to_string(),
        domain: Domain::unit_interval(),
        interface: Interface::points(vec![0.5]),
        a,
        b,
        jump_value: Formula::constant(1.0),
        jump_flux: Formula::constant(1.0),
        boundary: BoundaryData::zero(),
        flux_convention: FluxConvention::Derivative,
        epsilon,
    }
}

fn two_d(name: &str, a0: f64, epsilon: Option<f64>) -> ProblemSpec {
    let (l, r) = halves_2d();
    let g = Formula::poly_x(&[2.0, -2.0]);
    ProblemSpec {
        name: name.to_string(),
        domain: Domain::unit_square(),
        interface: Interface { x: vec![0.5], y: vec![] },
        a: PiecewiseFunction::new(vec![(l, Formula::constant(a0)), (r, Formula::constant(a0))]),
        b: PiecewiseFunction::new(vec![(l, Formula::constant(16.0)), (r, Formula::constant(1.0))]),
        jump_value: Formula::constant(1.0),
        jump_flux: Formula::constant(0.0),
        boundary: BoundaryData {
            pieces: vec![
                Piece { region: Region { x: [0.0, 0.5], y: [0.0, 0.0] }, formula: Formula::constant(0.0) },
                Piece { region: Region { x: [0.5, 1.0], y: [0.0, 0.0] }, formula: g.clone() },
                Piece { region: Region { x: [0.0, 0.5], y: [1.0, 1.0] }, formula: Formula::constant(0.0) },
                Piece { region: Region { x: [0.5, 1.0], y: [1.0, 1.0] }, formula: g },
            ],
        },
        flux_convention: FluxConvention::Derivative,
        epsilon,
    }
}

/// The 1d-singular problem with diffusion `eps` in place of 0.001.
pub fn singular_1d(eps: f64) -> ProblemSpec {
    let (l, r) = halves_1d();
    one_d(
        "1d-singular",
        PiecewiseFunction::new(vec![(l, Formula::constant(eps)), (r, Formula::constant(eps))]),
        PiecewiseFunction::new(vec![(l, Formula::constant(5.0)), (r, Formula::poly_x(&[0.4, 3.2]))]),
        Some(eps),
    )
}

/// Looks up one of the built-in benchmark problems by name.
pub fn benchmark(name: &str) -> Result<ProblemSpec> {
    let (l, r) = halves_1d();
    let spec = match name {
        "1d-smooth" => one_d(
            name,
            PiecewiseFunction::new(vec![(l, Formula::constant(1.0)), (r, Formula::constant(1.0))]),
            PiecewiseFunction::new(vec![
                (l, Formula::ExpX { c0: 1.0, c1: 1.0, rate: 1.0 }),
                (r, Formula::LogX { c0: 1.0, c1: -1.0 }),
            ]),
            None,
        ),
        "1d-singular" => singular_1d(0.001),
        "1d-high-contrast" => one_d(
            name,
            PiecewiseFunction::new(vec![(l, Formula::constant(0.001)), (r, Formula::constant(1.0))]),
            PiecewiseFunction::new(vec![(l, Formula::poly_x(&[1.0, 2.0])), (r, Formula::poly_x(&[3.0, -2.0]))]),
            None,
        ),
        "2d-interface" => two_d(name, 1.0, None),
        "2d-singular" => two_d(name, 0.001, Some(0.001)),
        other => return Err(Error::UnknownBenchmark(other.to_string())),
    };
    Ok(spec)
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Uniform mesh of the problem domain aligned with its interface.
    pub fn mesh(&self, resolution: [usize; 2]) -> Result<Mesh<f64>> {
        build_mesh(self.domain, resolution, self.interface.clone())
    }

    /// Checks `a > 0` and `b >= 0` on sampled points of every branch.
    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.a.sample_values().find(|v| !(*v > 0.0)) {
            return Err(Error::NonPositiveCoefficient(v));
        }
        if let Some(v) = self.b.sample_values().find(|v| !(*v >= 0.0)) {
            return Err(Error::NegativeCoefficient(v));
        }
        Ok(())
    }

    /// Subdomain (piece of `a`) owning an interior point such as a cell center.
    pub fn subdomain_of(&self, p: [f64; 2]) -> usize {
        self.a.piece_index(p, Side::Minus).unwrap_or(0)
    }

    /// Width of the thinnest boundary layer, `min sqrt(a / b)` over sampled
    /// points (infinite when b vanishes everywhere).
    pub fn layer_width(&self) -> f64 {
        let mut w = f64::INFINITY;
        for (pa, pb) in self.a.pieces.iter().zip(&self.b.pieces) {
            let amin = PiecewiseFunction { pieces: vec![pa.clone()] }.sample_values().fold(f64::INFINITY, f64::min);
            let bmax = PiecewiseFunction { pieces: vec![pb.clone()] }.sample_values().fold(0.0, f64::max);
            if bmax > 0.0 {
                w = w.min((amin / bmax).sqrt());
            }
        }
        w
    }
}

/// `∫_lo^x 1/a(ξ) dξ` with the lower bound at the left domain endpoint.
pub fn transform_coordinates(a: &PiecewiseFunction, x: f64) -> Result<f64> {
    if let Some(v) = a.sample_values().find(|v| !(*v > 0.0)) {
        return Err(Error::NonPositiveCoefficient(v));
    }
    let mut pieces: Vec<&Piece> = a.pieces.iter().collect();
    pieces.sort_by(|p, q| p.region.x[0].total_cmp(&q.region.x[0]));
    let lo = pieces.first().map_or(0.0, |p| p.region.x[0]);
    if x < lo - 1e-12 || pieces.last().is_some_and(|p| x > p.region.x[1] + 1e-12) {
        return Err(Error::OutOfDomain([x, 0.0]));
    }
    let mut y = 0.0;
    for pc in pieces {
        let (s, e) = (pc.region.x[0], pc.region.x[1].min(x));
        if e <= s {
            break;
        }
        y += match &pc.formula {
            Formula::Const { value } => (e - s) / value,
            Formula::PolyX { coeffs } if coeffs.len() == 2 && coeffs[1] != 0.0 => {
                let (c0, c1) = (coeffs[0], coeffs[1]);
                ((c0 + c1 * e) / (c0 + c1 * s)).ln() / c1
            }
            f => adaptive_integral(&|t| 1.0 / f.eval([t, 0.0]), s, e, 1e-13, 0),
        };
    }
    Ok(y)
}

/// Inverse of [`transform_coordinates`] by safeguarded Newton iteration.
pub fn inverse_transform(a: &PiecewiseFunction, y: f64) -> Result<f64> {
    let lo = a.pieces.iter().map(|p| p.region.x[0]).fold(f64::INFINITY, f64::min);
    let hi = a.pieces.iter().map(|p| p.region.x[1]).fold(f64::NEG_INFINITY, f64::max);
    let (mut l, mut r) = (lo, hi);
    let ymax = transform_coordinates(a, hi)?;
    if y < -1e-12 || y > ymax * (1.0 + 1e-12) + 1e-12 {
        return Err(Error::OutOfDomain([y, 0.0]));
    }
    let mut x = lo + (hi - lo) * (y / ymax).clamp(0.0, 1.0);
    for _ in 0..200 {
        let g = transform_coordinates(a, x)? - y;
        if g.abs() <= 1e-13 * ymax.max(1.0) {
            break;
        }
        if g > 0.0 {
            r = x;
        } else {
            l = x;
        }
        let slope = 1.0 / a.eval([x, 0.0]);
        let mut next = x - g / slope;
        if !(next > l && next < r) {
            next = 0.5 * (l + r);
        }
        if (next - x).abs() < 1e-15 {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

fn adaptive_integral(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let g8 = gauss_legendre::<f64>(8).expect("order 8");
    let g16 = gauss_legendre::<f64>(16).expect("order 16");
    let coarse = g8.integrate(a, b, f);
    let fine = g16.integrate(a, b, f);
    if (fine - coarse).abs() <= tol * fine.abs().max(1.0) || depth > 30 {
        return fine;
    }
    let m = 0.5 * (a + b);
    adaptive_integral(f, a, m, tol, depth + 1) + adaptive_integral(f, m, b, tol, depth + 1)
}

/// The problem in transformed coordinates `y(x) = ∫ 1/a`, where it reads
/// `-u'' + c(y) u = F(y)` with `c = a b` and `F = a f`.
#[derive(Debug, Clone)]
pub struct TransformedProblem {
    pub spec: ProblemSpec,
    /// Piece boundaries mapped into y.
    pub breakpoints: Vec<f64>,
    /// Interface points mapped into y.
    pub interface: Vec<f64>,
}

impl TransformedProblem {
    /// `c(y) = a(x(y)) b(x(y))`, one-sided at mapped interfaces.
    pub fn c(&self, y: f64, side: Side) -> Result<f64> {
        let x = inverse_transform(&self.spec.a, y)?;
        Ok(self.spec.a.eval_side([x, 0.0], side) * self.spec.b.eval_side([x, 0.0], side))
    }

    /// `F(y) = a(x(y)) f(x(y))`.
    pub fn source(&self, y: f64, side: Side, f: &dyn Fn(f64) -> f64) -> Result<f64> {
        let x = inverse_transform(&self.spec.a, y)?;
        Ok(self.spec.a.eval_side([x, 0.0], side) * f(x))
    }

    pub fn to_y(&self, x: f64) -> Result<f64> {
        transform_coordinates(&self.spec.a, x)
    }

    pub fn to_x(&self, y: f64) -> Result<f64> {
        inverse_transform(&self.spec.a, y)
    }
}

/// Maps a 1D problem into transformed coordinates.
pub fn effective_coefficients(spec: &ProblemSpec) -> Result<TransformedProblem> {
    if spec.dim() != 1 {
        return Err(Error::Config("the coordinate transformation is one-dimensional".into()));
    }
    spec.validate()?;
    let mut breaks: Vec<f64> = spec.a.pieces.iter().flat_map(|p| p.region.x).collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|p, q| (*p - *q).abs() < 1e-14);
    let breakpoints = breaks.iter().map(|&x| transform_coordinates(&spec.a, x)).collect::<Result<Vec<_>>>()?;
    let interface = spec.interface.x.iter().map(|&x| transform_coordinates(&spec.a, x)).collect::<Result<Vec<_>>>()?;
    Ok(TransformedProblem { spec: spec.clone(), breakpoints, interface })
}

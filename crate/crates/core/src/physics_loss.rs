//! Collocation residuals of the continuity, boundary and jump conditions and
//! the weighted loss built from them.
//!
//! Every residual is affine in the coefficient field, `r = J c + r0(f)`, so
//! the Jacobian is assembled once per mesh and only the offsets depend on
//! the source sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CollocationPoint, CollocationSets, Mesh, Side};
use crate::local_basis::MeshBasis;
use crate::problem::{FluxConvention, ProblemSpec};
use crate::source::SourceField;

/// Origin of a residual entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    ContinuityValue,
    ContinuityFlux,
    Boundary,
    JumpValue,
    JumpFlux,
    Data,
}

impl RowKind {
    fn group(self) -> usize {
        match self {
            RowKind::ContinuityValue | RowKind::ContinuityFlux => 0,
            RowKind::Boundary => 1,
            RowKind::JumpValue | RowKind::JumpFlux => 2,
            RowKind::Data => 3,
        }
    }
}

/// Penalty weights of the continuity, boundary, jump and data terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub continuity: f64,
    pub boundary: f64,
    pub jump: f64,
    #[serde(default = "one")]
    pub data: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { continuity: 1.0, boundary: 1.0, jump: 1.0, data: 1.0 }
    }
}

impl LossWeights {
    fn get(&self, group: usize) -> f64 {
        [self.continuity, self.boundary, self.jump, self.data][group]
    }

    pub fn validate(&self) -> Result<()> {
        if [self.continuity, self.boundary, self.jump, self.data].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Whether each loss group sums or averages its squared residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
struct Row {
    kind: RowKind,
    point: CollocationPoint<f64>,
    /// Prescribed data subtracted from the row.
    target: f64,
    entries: Vec<(usize, f64)>,
}

/// Residuals tagged with their origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    pub values: Vec<f64>,
    pub kinds: Vec<RowKind>,
}

/// The affine residual map of one mesh.
#[derive(Debug, Clone)]
pub struct ResidualSystem {
    pub n_cols: usize,
    per_cell: usize,
    convention: FluxConvention,
    rows: Vec<Row>,
    a0: Vec<f64>,
    n_cells: usize,
}

/// Per-sample particular-solution data needed at collocation points.
enum Particular<'a> {
    /// Left/right end slopes of each cell, and the source for data rows.
    OneD(Vec<[f64; 2]>, &'a dyn SourceField),
    /// Cell-center source values.
    TwoD(Vec<f64>),
}

impl ResidualSystem {
    pub fn assemble(spec: &ProblemSpec, mesh: &Mesh<f64>, sets: &CollocationSets<f64>, basis: &MeshBasis) -> Result<Self> {
        if basis.n_cells() != mesh.n_cells() || spec.dim() != mesh.dim {
            return Err(Error::MeshMismatch("basis, mesh and problem disagree".into()));
        }
        let a0 = match basis {
            MeshBasis::OneD(b) => b.iter().map(|c| c.coeffs.a0).collect(),
            MeshBasis::TwoD(b) => b.iter().map(|c| c.coeffs.a0).collect(),
        };
        let mut sys = ResidualSystem {
            n_cols: basis.per_cell() * mesh.n_cells(),
            per_cell: basis.per_cell(),
            convention: spec.flux_convention,
            rows: Vec::new(),
            a0,
            n_cells: mesh.n_cells(),
        };
        for p in &sets.continuity {
            sys.push_pair(basis, *p, RowKind::ContinuityValue, 0.0)?;
            sys.push_pair(basis, *p, RowKind::ContinuityFlux, 0.0)?;
        }
        for p in &sets.boundary {
            let entries = sys.cell_entries(basis, p.minus, p.pos, None)?;
            sys.rows.push(Row { kind: RowKind::Boundary, point: *p, target: spec.boundary.eval(p.pos), entries });
        }
        for p in &sets.interface {
            sys.push_pair(basis, *p, RowKind::JumpValue, spec.jump_value.eval(p.pos))?;
            sys.push_pair(basis, *p, RowKind::JumpFlux, spec.jump_flux.eval(p.pos))?;
        }
        Ok(sys)
    }

    /// Adds one data row per observation point (value minus observation).
    pub fn with_observations(mut self, mesh: &Mesh<f64>, basis: &MeshBasis, points: &[([f64; 2], Side)]) -> Result<Self> {
        for &(pos, side) in points {
            let cell = mesh.locate_cell_on(pos, side)?;
            let entries = self.cell_entries(basis, cell, pos, None)?;
            let point = CollocationPoint { pos, normal: [0.0, 0.0], minus: cell, plus: None };
            self.rows.push(Row { kind: RowKind::Data, point, target: 0.0, entries });
        }
        Ok(self)
    }

    fn flux_factor(&self, cell: usize) -> f64 {
        match self.convention {
            FluxConvention::Derivative => 1.0,
            FluxConvention::Flux => self.a0[cell],
        }
    }

    /// Column entries of the value (`normal = None`) or normal-derivative row
    /// of one cell at `pos`.
    fn cell_entries(&self, basis: &MeshBasis, cell: usize, pos: [f64; 2], normal: Option<[f64; 2]>) -> Result<Vec<(usize, f64)>> {
        let col = cell * self.per_cell;
        let vals: Vec<f64> = match basis {
            MeshBasis::OneD(b) => b[cell]
                .eval(pos[0])?
                .iter()
                .map(|j| normal.map_or(j[0], |n| j[1] * n[0]))
                .collect(),
            MeshBasis::TwoD(b) => b[cell]
                .eval(pos)
                .iter()
                .map(|j| normal.map_or(j[0], |n| j[1] * n[0] + j[2] * n[1]))
                .collect(),
        };
        Ok(vals.into_iter().enumerate().map(|(k, v)| (col + k, v)).collect())
    }

    fn push_pair(&mut self, basis: &MeshBasis, p: CollocationPoint<f64>, kind: RowKind, target: f64) -> Result<()> {
        let plus = p.plus.ok_or(Error::NotOnBoundary(p.pos))?;
        let derivative = matches!(kind, RowKind::ContinuityFlux | RowKind::JumpFlux);
        let normal = derivative.then_some(p.normal);
        let (fp, fm) = if derivative { (self.flux_factor(plus), self.flux_factor(p.minus)) } else { (1.0, 1.0) };
        let mut entries: Vec<(usize, f64)> =
            self.cell_entries(basis, plus, p.pos, normal)?.into_iter().map(|(c, v)| (c, fp * v)).collect();
        entries.extend(self.cell_entries(basis, p.minus, p.pos, normal)?.into_iter().map(|(c, v)| (c, -fm * v)));
        self.rows.push(Row { kind, point: p, target, entries });
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn kinds(&self) -> Vec<RowKind> {
        self.rows.iter().map(|r| r.kind).collect()
    }

    /// Dense row-major copy of `J`.
    pub fn dense_jacobian(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len() * self.n_cols];
        for (i, r) in self.rows.iter().enumerate() {
            for &(c, v) in &r.entries {
                out[i * self.n_cols + c] += v;
            }
        }
        out
    }

    /// `J c`
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.entries.iter().map(|&(c, v)| v * coeffs[c]).sum()).collect()
    }

    /// `Jᵀ y`
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols];
        for (r, &yi) in self.rows.iter().zip(y) {
            for &(c, v) in &r.entries {
                out[c] += v * yi;
            }
        }
        out
    }

    fn particular_data<'a>(&self, basis: &MeshBasis, mesh: &Mesh<f64>, source: &'a dyn SourceField) -> Result<Particular<'a>> {
        Ok(match basis {
            MeshBasis::OneD(b) => Particular::OneD(b.iter().map(|c| c.particular_end_slopes(source)).collect::<Result<_>>()?, source),
            MeshBasis::TwoD(_) => Particular::TwoD((0..mesh.n_cells()).map(|j| source.value(mesh.cell(j).center())).collect()),
        })
    }

    /// Value and gradient of the particular part of `cell` at `pos`.
    fn particular_at(&self, basis: &MeshBasis, part: &Particular, cell: usize, pos: [f64; 2]) -> Result<(f64, [f64; 2])> {
        match (basis, part) {
            (MeshBasis::OneD(b), Particular::OneD(slopes, source)) => {
                let [l, r] = b[cell].interval();
                let tol = 1e-12 * (r - l);
                if (pos[0] - l).abs() <= tol {
                    Ok((0.0, [slopes[cell][0], 0.0]))
                } else if (pos[0] - r).abs() <= tol {
                    Ok((0.0, [slopes[cell][1], 0.0]))
                } else {
                    let j = b[cell].particular(pos[0], *source)?;
                    Ok((j[0], [j[1], 0.0]))
                }
            }
            (MeshBasis::TwoD(b), Particular::TwoD(f0)) => {
                let v = b[cell].particular(pos, f0[cell]);
                Ok((v[0], [v[1], v[2]]))
            }
            _ => Err(Error::MeshMismatch("basis dimension".into())),
        }
    }

    /// `r0(f)`: residuals at zero coefficients. `observations` supplies the
    /// data-row targets in row order.
    pub fn offsets(&self, basis: &MeshBasis, mesh: &Mesh<f64>, source: &dyn SourceField, observations: Option<&[f64]>) -> Result<Vec<f64>> {
        if basis.n_cells() != self.n_cells {
            return Err(Error::MeshMismatch("basis does not match the residual system".into()));
        }
        let part = self.particular_data(basis, mesh, source)?;
        let mut obs = observations.unwrap_or(&[]).iter();
        self.rows
            .iter()
            .map(|r| {
                let p = r.point;
                let (vm, gm) = self.particular_at(basis, &part, p.minus, p.pos)?;
                let dn = |g: [f64; 2]| g[0] * p.normal[0] + g[1] * p.normal[1];
                Ok(match r.kind {
                    RowKind::Boundary => vm - r.target,
                    RowKind::Data => vm - obs.next().copied().ok_or(Error::ShapeMismatch { expected: 1, got: 0 })?,
                    RowKind::ContinuityValue | RowKind::JumpValue => {
                        let plus = p.plus.ok_or(Error::NotOnBoundary(p.pos))?;
                        let (vp, _) = self.particular_at(basis, &part, plus, p.pos)?;
                        vp - vm - r.target
                    }
                    RowKind::ContinuityFlux | RowKind::JumpFlux => {
                        let plus = p.plus.ok_or(Error::NotOnBoundary(p.pos))?;
                        let (_, gp) = self.particular_at(basis, &part, plus, p.pos)?;
                        self.flux_factor(plus) * dn(gp) - self.flux_factor(p.minus) * dn(gm) - r.target
                    }
                })
            })
            .collect()
    }

    /// `J c + r0`
    pub fn residuals(&self, coeffs: &[f64], offsets: &[f64]) -> Result<ResidualVector> {
        if coeffs.len() != self.n_cols {
            return Err(Error::ShapeMismatch { expected: self.n_cols, got: coeffs.len() });
        }
        if offsets.len() != self.rows.len() {
            return Err(Error::ShapeMismatch { expected: self.rows.len(), got: offsets.len() });
        }
        let values = self.apply(coeffs).into_iter().zip(offsets).map(|(a, b)| a + b).collect();
        Ok(ResidualVector { values, kinds: self.kinds() })
    }

    /// Loss multiplier of every row.
    pub fn row_weights(&self, weights: &LossWeights, reduction: Reduction) -> Vec<f64> {
        row_weights(&self.kinds(), weights, reduction)
    }
}

fn row_weights(kinds: &[RowKind], weights: &LossWeights, reduction: Reduction) -> Vec<f64> {
    let mut counts = [0usize; 4];
    for k in kinds {
        counts[k.group()] += 1;
    }
    kinds
        .iter()
        .map(|k| {
            let g = k.group();
            let mean = g == 3 || reduction == Reduction::Mean;
            weights.get(g) / if mean { counts[g] as f64 } else { 1.0 }
        })
        .collect()
}

/// Weighted sum of squared residual groups.
pub fn total_loss(r: &ResidualVector, weights: &LossWeights, reduction: Reduction) -> f64 {
    row_weights(&r.kinds, weights, reduction).iter().zip(&r.values).map(|(w, v)| w * v * v).sum()
}

/// `∂L/∂c = 2 Jᵀ W r`
pub fn loss_gradient(sys: &ResidualSystem, r: &ResidualVector, weights: &LossWeights, reduction: Reduction) -> Vec<f64> {
    let w = row_weights(&r.kinds, weights, reduction);
    let y: Vec<f64> = w.iter().zip(&r.values).map(|(w, v)| 2.0 * w * v).collect();
    sys.apply_transpose(&y)
}

/// Residual system, bases and collocation sets for one problem and mesh.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub spec: ProblemSpec,
    pub mesh: Mesh<f64>,
    pub sets: CollocationSets<f64>,
    pub basis: MeshBasis,
    pub system: ResidualSystem,
}

impl Discretization {
    pub fn new(spec: &ProblemSpec, resolution: [usize; 2], points_per_edge: usize, quad_order: usize) -> Result<Self> {
        spec.validate()?;
        let mesh = spec.mesh(resolution)?;
        let sets = crate::geometry::classify_points_with(&mesh, points_per_edge);
        let basis = MeshBasis::build(spec, &mesh, quad_order)?;
        let system = ResidualSystem::assemble(spec, &mesh, &sets, &basis)?;
        Ok(Discretization { spec: spec.clone(), mesh, sets, basis, system })
    }

    pub fn offsets(&self, source: &dyn SourceField) -> Result<Vec<f64>> {
        self.system.offsets(&self.basis, &self.mesh, source, None)
    }

    pub fn n_coeffs(&self) -> usize {
        self.system.n_cols
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, classify_points, Domain, Interface};
    use crate::local_basis::{CellCoefficients1D, LocalBasis1D};
    use crate::problem::{benchmark, Formula, PiecewiseFunction, Region};
    use crate::reconstruction::PiecewiseSolution;
    use rand::{Rng, SeedableRng};

    fn zero_reaction(m: usize) -> (ProblemSpec, Mesh<f64>, CollocationSets<f64>, MeshBasis) {
        let mut spec = benchmark("1d-smooth").unwrap();
        let r = Region::interval(0.0, 1.0);
        spec.b = PiecewiseFunction::uniform(r, Formula::constant(0.0));
        let mesh = build_mesh(Domain::unit_interval(), [m, 1], Interface::points(vec![0.5])).unwrap();
        let sets = classify_points(&mesh);
        let cells = (0..m)
            .map(|j| LocalBasis1D::new(CellCoefficients1D { interval: mesh.cell(j).x, a0: 1.0, p: 0.0, q: 0.0 }, 8).unwrap())
            .collect();
        (spec, mesh, sets, MeshBasis::OneD(cells))
    }

    #[test]
    fn exact_solution_has_zero_residual() {
        let (spec, mesh, sets, basis) = zero_reaction(2);
        let sys = ResidualSystem::assemble(&spec, &mesh, &sets, &basis).unwrap();
        assert_eq!(sys.n_rows(), 4);
        let zero = |_: [f64; 2]| 0.0;
        let r0 = sys.offsets(&basis, &mesh, &zero, None).unwrap();
        let r = sys.residuals(&[0.0, -1.5, 0.5, -0.5], &r0).unwrap();
        assert!(r.values.iter().all(|v| v.abs() < 1e-14));
        assert_eq!(total_loss(&r, &LossWeights::default(), Reduction::Sum), 0.0);
    }

    #[test]
    fn zero_coefficients_give_negative_jump_data() {
        let (spec, mesh, sets, basis) = zero_reaction(2);
        let sys = ResidualSystem::assemble(&spec, &mesh, &sets, &basis).unwrap();
        let zero = |_: [f64; 2]| 0.0;
        let r0 = sys.offsets(&basis, &mesh, &zero, None).unwrap();
        let r = sys.residuals(&[0.0; 4], &r0).unwrap();
        let jumps: Vec<f64> = r.values.iter().zip(&r.kinds).filter(|(_, k)| matches!(k, RowKind::JumpValue | RowKind::JumpFlux)).map(|(v, _)| *v).collect();
        assert_eq!(jumps, vec![-1.0, -1.0]);
    }

    #[test]
    fn continuity_only_example() {
        // Two cells, u = 0 on the left and 1 on the right, X^C = {0.5}.
        let (spec, mesh, _, basis) = zero_reaction(2);
        let p = CollocationPoint { pos: [0.5, 0.0], normal: [1.0, 0.0], minus: 0, plus: Some(1) };
        let sets = CollocationSets { continuity: vec![p], boundary: vec![], interface: vec![], points_per_edge: 1 };
        let sys = ResidualSystem::assemble(&spec, &mesh, &sets, &basis).unwrap();
        let zero = |_: [f64; 2]| 0.0;
        let r0 = sys.offsets(&basis, &mesh, &zero, None).unwrap();
        let r = sys.residuals(&[0.0, 0.0, 1.0, 0.0], &r0).unwrap();
        assert_eq!(r.values, vec![1.0, 0.0]);
        assert_eq!(total_loss(&r, &LossWeights::default(), Reduction::Sum), 1.0);
        let w = LossWeights { continuity: 2.0, ..LossWeights::default() };
        assert_eq!(total_loss(&r, &w, Reduction::Sum), 2.0);
        let zw = LossWeights { continuity: 0.0, boundary: 0.0, jump: 0.0, data: 0.0 };
        assert!(loss_gradient(&sys, &r, &zw, Reduction::Sum).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn residuals_match_reconstruction_jumps() {
        let f = |p: [f64; 2]| (3.0 * p[0]).sin() + p[1];
        for name in crate::problem::BENCHMARKS {
            let spec = benchmark(name).unwrap();
            let res = if spec.dim() == 1 { [8, 1] } else { [4, 4] };
            let d = Discretization::new(&spec, res, 1, 8).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
            let c: Vec<f64> = (0..d.n_coeffs()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = d.system.residuals(&c, &d.offsets(&f).unwrap()).unwrap();
            let sol = PiecewiseSolution::new(&d.mesh, &d.basis, &c, &f).unwrap();
            for (i, row) in d.system.rows.iter().enumerate() {
                let p = row.point;
                let want = match row.kind {
                    RowKind::Boundary => sol.cell_jet(p.minus, p.pos).unwrap().0 - row.target,
                    RowKind::ContinuityValue | RowKind::JumpValue => sol.jump_at(p.pos, p.normal).unwrap().value - row.target,
                    _ => {
                        let j = sol.jump_at(p.pos, p.normal).unwrap();
                        let v = if spec.flux_convention == FluxConvention::Flux { j.flux } else { j.derivative };
                        v - row.target
                    }
                };
                assert!((r.values[i] - want).abs() < 1e-9 * want.abs().max(1.0), "{name} row {i}: {} vs {want}", r.values[i]);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let f = |p: [f64; 2]| 1.0 + p[0] * p[1];
        for name in ["1d-high-contrast", "2d-interface"] {
            let spec = benchmark(name).unwrap();
            let res = if spec.dim() == 1 { [8, 1] } else { [4, 4] };
            let d = Discretization::new(&spec, res, 2, 8).unwrap();
            let r0 = d.offsets(&f).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
            let c: Vec<f64> = (0..d.n_coeffs()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = LossWeights { continuity: 1.5, boundary: 0.5, jump: 2.0, data: 1.0 };
            for red in [Reduction::Sum, Reduction::Mean] {
                let loss = |c: &[f64]| total_loss(&d.system.residuals(c, &r0).unwrap(), &w, red);
                let g = loss_gradient(&d.system, &d.system.residuals(&c, &r0).unwrap(), &w, red);
                for k in [0, 3, d.n_coeffs() - 1] {
                    let h = 1e-6;
                    let (mut cp, mut cm) = (c.clone(), c.clone());
                    cp[k] += h;
                    cm[k] -= h;
                    let fd = (loss(&cp) - loss(&cm)) / (2.0 * h);
                    assert!((fd - g[k]).abs() < 1e-6 * g[k].abs().max(1.0), "{name} {k}: {fd} vs {}", g[k]);
                }
            }
        }
    }

    #[test]
    fn observations_add_mean_data_rows() {
        let (spec, mesh, sets, basis) = zero_reaction(2);
        let sys = ResidualSystem::assemble(&spec, &mesh, &sets, &basis)
            .unwrap()
            .with_observations(&mesh, &basis, &[([0.25, 0.0], Side::Minus), ([0.75, 0.0], Side::Minus)])
            .unwrap();
        let zero = |_: [f64; 2]| 0.0;
        let r0 = sys.offsets(&basis, &mesh, &zero, Some(&[1.0, 3.0])).unwrap();
        let r = sys.residuals(&[0.0, -1.5, 0.5, -0.5], &r0).unwrap();
        // data residuals: -0.375 - 1, 0.125 - 3
        let want = (1.375f64.powi(2) + 2.875f64.powi(2)) / 2.0;
        assert!((total_loss(&r, &LossWeights::default(), Reduction::Sum) - want).abs() < 1e-12);
    }
}

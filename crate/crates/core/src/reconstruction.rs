//! Piecewise solutions assembled from per-cell bases and a coefficient field.

use crate::error::{Error, Result};
use crate::geometry::{Mesh, Side};
use crate::local_basis::MeshBasis;
use crate::problem::ProblemSpec;
use crate::source::SourceField;

/// Value and gradient at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointValue {
    pub value: f64,
    pub grad: [f64; 2],
}

/// Jumps across a cell boundary, plus side minus minus side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub value: f64,
    /// `[∇u·n]`
    pub derivative: f64,
    /// `[a ∇u·n]`
    pub flux: f64,
}

/// `u_θ` for one coefficient field and source sample.
pub struct PiecewiseSolution<'a> {
    pub mesh: &'a Mesh<f64>,
    pub basis: &'a MeshBasis,
    pub coeffs: &'a [f64],
    pub source: &'a dyn SourceField,
    /// Source value at each 2D cell center (empty in 1D).
    f0: Vec<f64>,
}

impl<'a> PiecewiseSolution<'a> {
    pub fn new(mesh: &'a Mesh<f64>, basis: &'a MeshBasis, coeffs: &'a [f64], source: &'a dyn SourceField) -> Result<Self> {
        if basis.n_cells() != mesh.n_cells() {
            return Err(Error::MeshMismatch(format!("{} bases for {} cells", basis.n_cells(), mesh.n_cells())));
        }
        let expected = basis.per_cell() * mesh.n_cells();
        if coeffs.len() != expected {
            return Err(Error::ShapeMismatch { expected, got: coeffs.len() });
        }
        if let Some(bad) = coeffs.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite coefficient {bad}")));
        }
        let f0 = match basis {
            MeshBasis::OneD(_) => Vec::new(),
            MeshBasis::TwoD(_) => (0..mesh.n_cells()).map(|j| source.value(mesh.cell(j).center())).collect(),
        };
        Ok(PiecewiseSolution { mesh, basis, coeffs, source, f0 })
    }

    /// Cell-center source values used by the 2D particular term.
    pub fn cell_sources(&self) -> &[f64] {
        &self.f0
    }

    fn cell_for(&self, p: [f64; 2], side: Option<Side>) -> Result<usize> {
        match side {
            Some(s) => self.mesh.locate_cell_on(p, s),
            None if self.mesh.on_shared_boundary(p) => Err(Error::SideRequired(p)),
            None => self.mesh.locate_cell(p),
        }
    }

    /// Value, gradient and Laplacian of the cell's branch at `p`.
    pub fn cell_jet(&self, cell: usize, p: [f64; 2]) -> Result<(f64, [f64; 2], f64)> {
        let k = self.basis.per_cell();
        let c = &self.coeffs[cell * k..(cell + 1) * k];
        match self.basis {
            MeshBasis::OneD(b) => {
                let b = &b[cell];
                let jets = b.eval(p[0])?;
                let part = b.particular(p[0], self.source)?;
                let mut out = part;
                for (ci, j) in c.iter().zip(&jets) {
                    for d in 0..3 {
                        out[d] += ci * j[d];
                    }
                }
                Ok((out[0], [out[1], 0.0], out[2]))
            }
            MeshBasis::TwoD(b) => {
                let b = &b[cell];
                let jets = b.eval(p);
                let lap = b.laplacian(p);
                let part = b.particular(p, self.f0[cell]);
                let (mut v, mut g, mut l) = (part[0], [part[1], part[2]], part[3]);
                for i in 0..4 {
                    v += c[i] * jets[i][0];
                    g[0] += c[i] * jets[i][1];
                    g[1] += c[i] * jets[i][2];
                    l += c[i] * lap[i];
                }
                Ok((v, g, l))
            }
        }
    }

    /// One-sided value and gradient; `side` is required on shared boundaries.
    pub fn evaluate_full(&self, p: [f64; 2], side: Option<Side>) -> Result<PointValue> {
        let cell = self.cell_for(p, side)?;
        let (value, grad, _) = self.cell_jet(cell, p)?;
        Ok(PointValue { value, grad })
    }

    pub fn evaluate(&self, p: [f64; 2], side: Option<Side>) -> Result<f64> {
        Ok(self.evaluate_full(p, side)?.value)
    }

    fn a0(&self, cell: usize) -> f64 {
        match self.basis {
            MeshBasis::OneD(b) => b[cell].coeffs.a0,
            MeshBasis::TwoD(b) => b[cell].coeffs.a0,
        }
    }

    /// Jumps at a point on a shared boundary. The plus side is the cell the
    /// normal points into, so flipping the normal negates the value jump and
    /// leaves the derivative and flux jumps unchanged.
    pub fn jump_at(&self, p: [f64; 2], normal: [f64; 2]) -> Result<Jump> {
        if !self.mesh.on_shared_boundary(p) {
            return Err(Error::NotOnBoundary(p));
        }
        let axis = if normal[0].abs() >= normal[1].abs() { 0 } else { 1 };
        let into_upper = normal[axis] > 0.0;
        let (plus_side, minus_side) = if into_upper { (Side::Plus, Side::Minus) } else { (Side::Minus, Side::Plus) };
        let (cp, cm) = (self.mesh.locate_cell_on(p, plus_side)?, self.mesh.locate_cell_on(p, minus_side)?);
        if cp == cm {
            return Err(Error::NotOnBoundary(p));
        }
        let (vp, gp, _) = self.cell_jet(cp, p)?;
        let (vm, gm, _) = self.cell_jet(cm, p)?;
        let dn = |g: [f64; 2]| g[0] * normal[0] + g[1] * normal[1];
        Ok(Jump {
            value: vp - vm,
            derivative: dn(gp) - dn(gm),
            flux: self.a0(cp) * dn(gp) - self.a0(cm) * dn(gm),
        })
    }

    /// `-a0 Δu + c_h u - f_h` inside a cell, where `f_h` is the source
    /// representation of the particular solution (`f` in 1D, the cell-center
    /// value in 2D).
    pub fn local_ode_residual(&self, p: [f64; 2]) -> Result<f64> {
        let cell = self.mesh.locate_cell(p)?;
        let (v, _, lap) = self.cell_jet(cell, p)?;
        Ok(match self.basis {
            MeshBasis::OneD(b) => {
                let c = &b[cell].coeffs;
                -c.a0 * lap + c.c(p[0]) * v - self.source.value(p)
            }
            MeshBasis::TwoD(b) => {
                let c = &b[cell].coeffs;
                -c.a0 * lap + c.c0 * v - self.f0[cell]
            }
        })
    }

    /// Values at grid points, each with an optional side.
    pub fn sample(&self, points: &[([f64; 2], Option<Side>)]) -> Result<Vec<f64>> {
        points.iter().map(|&(p, s)| self.evaluate(p, s)).collect()
    }
}

/// Evaluation grid used for errors: uniform nodes with both one-sided
/// values at interface nodes (the interface column is doubled in 2D).
pub fn evaluation_points(spec: &ProblemSpec, resolution: [usize; 2]) -> Vec<([f64; 2], Option<Side>)> {
    let mesh = match spec.mesh(resolution) {
        Ok(m) => m,
        Err(_) => return Vec::new(),
    };
    let xs = mesh.xs.clone();
    let on_gamma = |i: usize| mesh.interface_x_index.contains(&i);
    let mut out = Vec::new();
    let row = |y: f64, out: &mut Vec<([f64; 2], Option<Side>)>| {
        for (i, &x) in xs.iter().enumerate() {
            if on_gamma(i) {
                out.push(([x, y], Some(Side::Minus)));
                out.push(([x, y], Some(Side::Plus)));
            } else {
                out.push(([x, y], Some(if i == 0 { Side::Plus } else { Side::Minus })));
            }
        }
    };
    if spec.dim() == 1 {
        row(0.0, &mut out);
    } else {
        for &y in &mesh.ys {
            row(y, &mut out);
        }
    }
    out
}

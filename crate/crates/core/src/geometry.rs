//! Interface-aware tensor meshes and collocation point classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Axis-aligned interface lines spanning the whole domain.
///
/// In one dimension only `x` is used and each entry is an interface point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interface<T> {
    pub x: Vec<T>,
    #[serde(default = "Vec::new")]
    pub y: Vec<T>,
}

impl<T> Interface<T> {
    pub fn points(x: Vec<T>) -> Self {
        Interface { x, y: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty() && self.y.is_empty()
    }
}

/// The computational domain: an interval or an axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Domain<T> {
    Interval { lo: T, hi: T },
    Rect { x: [T; 2], y: [T; 2] },
}

impl<T: Real> Domain<T> {
    pub fn unit_interval() -> Self {
        Domain::Interval { lo: T::zero(), hi: T::one() }
    }

    pub fn unit_square() -> Self {
        Domain::Rect { x: [T::zero(), T::one()], y: [T::zero(), T::one()] }
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Rect { .. } => 2,
        }
    }

    pub fn measure(&self) -> T {
        match *self {
            Domain::Interval { lo, hi } => hi - lo,
            Domain::Rect { x, y } => (x[1] - x[0]) * (y[1] - y[0]),
        }
    }
}

/// Which cell a boundary-sitting point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    /// Left (1D, 2D x-direction) or lower (2D y-direction) cell.
    Minus,
    /// Right or upper cell.
    Plus,
}

/// Closed bounding box of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell<T> {
    pub x: [T; 2],
    pub y: [T; 2],
}

impl<T: Real> Cell<T> {
    pub fn center(&self) -> [T; 2] {
        let h = T::lit(0.5);
        [(self.x[0] + self.x[1]) * h, (self.y[0] + self.y[1]) * h]
    }

    pub fn width(&self) -> T {
        self.x[1] - self.x[0]
    }

    pub fn height(&self) -> T {
        self.y[1] - self.y[0]
    }
}

/// Uniform tensor-product mesh whose cell boundaries contain the interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh<T> {
    pub dim: usize,
    /// Breakpoints in x, strictly increasing.
    pub xs: Vec<T>,
    /// Breakpoints in y (2D only; `[0, 0]` placeholder in 1D).
    pub ys: Vec<T>,
    pub interface: Interface<T>,
    /// Indices into `xs` (resp. `ys`) of the interface lines.
    pub interface_x_index: Vec<usize>,
    pub interface_y_index: Vec<usize>,
}

fn uniform<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    let len = hi - lo;
    (0..=n).map(|i| lo + len * T::count(i) / T::count(n)).collect()
}

fn snap<T: Real>(breaks: &[T], at: T) -> Result<usize> {
    let len = breaks[breaks.len() - 1] - breaks[0];
    let tol = T::lit(1e-12) * len;
    breaks
        .iter()
        .enumerate()
        .skip(1)
        .take(breaks.len().saturating_sub(2))
        .find(|(_, &b)| (b - at).abs() <= tol)
        .map(|(i, _)| i)
        .ok_or_else(|| Error::InterfaceNotOnGrid(at.as_f64()))
}

/// Builds a uniform mesh with `resolution[0]` (× `resolution[1]`) cells.
pub fn build_mesh<T: Real>(
    domain: Domain<T>,
    resolution: [usize; 2],
    interface: Interface<T>,
) -> Result<Mesh<T>> {
    match domain {
        Domain::Interval { lo, hi } => {
            if resolution[0] < 1 {
                return Err(Error::ZeroCells);
            }
            let xs = uniform(lo, hi, resolution[0]);
            let mut idx = interface
                .x
                .iter()
                .map(|&c| snap(&xs, c))
                .collect::<Result<Vec<_>>>()?;
            idx.sort_unstable();
            idx.dedup();
            let interface = Interface { x: idx.iter().map(|&i| xs[i]).collect(), y: Vec::new() };
            Ok(Mesh {
                dim: 1,
                xs,
                ys: vec![T::zero(), T::zero()],
                interface,
                interface_x_index: idx,
                interface_y_index: Vec::new(),
            })
        }
        Domain::Rect { x, y } => {
            if resolution[0] < 1 || resolution[1] < 1 {
                return Err(Error::ZeroCells);
            }
            let xs = uniform(x[0], x[1], resolution[0]);
            let ys = uniform(y[0], y[1], resolution[1]);
            let mut ix = interface.x.iter().map(|&c| snap(&xs, c)).collect::<Result<Vec<_>>>()?;
            let mut iy = interface.y.iter().map(|&c| snap(&ys, c)).collect::<Result<Vec<_>>>()?;
            ix.sort_unstable();
            ix.dedup();
            iy.sort_unstable();
            iy.dedup();
            let interface = Interface {
                x: ix.iter().map(|&i| xs[i]).collect(),
                y: iy.iter().map(|&i| ys[i]).collect(),
            };
            Ok(Mesh { dim: 2, xs, ys, interface, interface_x_index: ix, interface_y_index: iy })
        }
    }
}

impl<T: Real> Mesh<T> {
    pub fn nx(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn ny(&self) -> usize {
        if self.dim == 1 {
            1
        } else {
            self.ys.len() - 1
        }
    }

    pub fn n_cells(&self) -> usize {
        self.nx() * self.ny()
    }

    /// Cell index for column `ix`, row `iy` (row-major in y).
    pub fn cell_index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx() + ix
    }

    /// `(ix, iy)` for a cell index.
    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx(), cell / self.nx())
    }

    pub fn cell(&self, cell: usize) -> Cell<T> {
        let (ix, iy) = self.cell_coords(cell);
        Cell {
            x: [self.xs[ix], self.xs[ix + 1]],
            y: if self.dim == 1 { [T::zero(), T::zero()] } else { [self.ys[iy], self.ys[iy + 1]] },
        }
    }

    pub fn cell_measure(&self, cell: usize) -> T {
        let c = self.cell(cell);
        if self.dim == 1 {
            c.width()
        } else {
            c.width() * c.height()
        }
    }

    /// Maximum cell diameter.
    pub fn h(&self) -> T {
        (0..self.n_cells())
            .map(|i| {
                let c = self.cell(i);
                (c.width() * c.width() + c.height() * c.height()).sqrt()
            })
            .fold(T::zero(), T::max)
    }

    pub fn domain(&self) -> Domain<T> {
        if self.dim == 1 {
            Domain::Interval { lo: self.xs[0], hi: self.xs[self.nx()] }
        } else {
            Domain::Rect {
                x: [self.xs[0], self.xs[self.nx()]],
                y: [self.ys[0], self.ys[self.ny()]],
            }
        }
    }

    /// Index of the cell containing `point`; shared boundaries resolve to
    /// the left/lower cell.
    pub fn locate_cell(&self, point: [T; 2]) -> Result<usize> {
        self.locate_cell_on(point, Side::Minus)
    }

    /// Like [`Mesh::locate_cell`] but resolving shared boundaries to `side`.
    pub fn locate_cell_on(&self, point: [T; 2], side: Side) -> Result<usize> {
        let ix = locate_axis(&self.xs, point[0], side)
            .ok_or_else(|| Error::OutOfDomain([point[0].as_f64(), point[1].as_f64()]))?;
        let iy = if self.dim == 1 {
            0
        } else {
            locate_axis(&self.ys, point[1], side)
                .ok_or_else(|| Error::OutOfDomain([point[0].as_f64(), point[1].as_f64()]))?
        };
        Ok(self.cell_index(ix, iy))
    }

    /// True when `point` lies on a cell boundary shared by two cells.
    pub fn on_shared_boundary(&self, point: [T; 2]) -> bool {
        let on = |b: &[T], v: T| {
            let tol = T::lit(1e-12) * (b[b.len() - 1] - b[0]);
            b[1..b.len() - 1].iter().any(|&x| (x - v).abs() <= tol)
        };
        on(&self.xs, point[0]) || (self.dim == 2 && on(&self.ys, point[1]))
    }
}

fn locate_axis<T: Real>(breaks: &[T], v: T, side: Side) -> Option<usize> {
    let n = breaks.len() - 1;
    let len = breaks[n] - breaks[0];
    let tol = T::lit(1e-12) * len;
    if !(v >= breaks[0] - tol && v <= breaks[n] + tol) {
        return None;
    }
    // first breakpoint strictly greater than v (up to tolerance)
    let mut i = breaks.partition_point(|&b| b < v - tol);
    // breaks[i] >= v - tol
    if i <= n && (breaks[i] - v).abs() <= tol {
        // on a breakpoint
        return Some(match side {
            Side::Minus => i.saturating_sub(1).min(n - 1),
            Side::Plus => i.min(n - 1),
        });
    }
    i = i.saturating_sub(1);
    Some(i.min(n - 1))
}

/// One collocation point with its orientation.
///
/// For shared-edge points `minus` is the left/lower cell, `plus` the
/// right/upper one and `normal` points from `minus` into `plus`. For
/// boundary points `plus` is `None` and `normal` is the outward normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollocationPoint<T> {
    pub pos: [T; 2],
    pub normal: [T; 2],
    pub minus: usize,
    pub plus: Option<usize>,
}

/// The continuity (`X^C`), boundary (`X^B`) and interface (`X^J`) point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSets<T> {
    pub continuity: Vec<CollocationPoint<T>>,
    pub boundary: Vec<CollocationPoint<T>>,
    pub interface: Vec<CollocationPoint<T>>,
    pub points_per_edge: usize,
}

impl<T: Real> CollocationSets<T> {
    pub fn len(&self) -> usize {
        self.continuity.len() + self.boundary.len() + self.interface.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Classifies collocation points with one point per edge (edge midpoints).
pub fn classify_points<T: Real>(mesh: &Mesh<T>) -> CollocationSets<T> {
    classify_points_with(mesh, 1)
}

/// Classifies collocation points with `k` Gauss points per 2D edge.
///
/// In 1D every breakpoint is a single point and `k` is ignored.
pub fn classify_points_with<T: Real>(mesh: &Mesh<T>, points_per_edge: usize) -> CollocationSets<T> {
    let k = points_per_edge.max(1);
    let mut sets = CollocationSets {
        continuity: Vec::new(),
        boundary: Vec::new(),
        interface: Vec::new(),
        points_per_edge: if mesh.dim == 1 { 1 } else { k },
    };
    let zero = T::zero();
    let one = T::one();
    let nx = mesh.nx();
    if mesh.dim == 1 {
        sets.boundary.push(CollocationPoint { pos: [mesh.xs[0], zero], normal: [-one, zero], minus: 0, plus: None });
        for i in 1..nx {
            let p = CollocationPoint { pos: [mesh.xs[i], zero], normal: [one, zero], minus: i - 1, plus: Some(i) };
            if mesh.interface_x_index.contains(&i) {
                sets.interface.push(p);
            } else {
                sets.continuity.push(p);
            }
        }
        sets.boundary.push(CollocationPoint { pos: [mesh.xs[nx], zero], normal: [one, zero], minus: nx - 1, plus: None });
        return sets;
    }
    let ny = mesh.ny();
    let rule = crate::special_fn::gauss_legendre::<T>(k).expect("points per edge within 1..=64");
    let along = |lo: T, hi: T| -> Vec<T> { rule.mapped(lo, hi).map(|(x, _)| x).collect() };
    // vertical edges x = xs[i]
    for i in 0..=nx {
        for iy in 0..ny {
            for y in along(mesh.ys[iy], mesh.ys[iy + 1]) {
                let pos = [mesh.xs[i], y];
                if i == 0 {
                    sets.boundary.push(CollocationPoint { pos, normal: [-one, zero], minus: mesh.cell_index(0, iy), plus: None });
                } else if i == nx {
                    sets.boundary.push(CollocationPoint { pos, normal: [one, zero], minus: mesh.cell_index(nx - 1, iy), plus: None });
                } else {
                    let p = CollocationPoint {
                        pos,
                        normal: [one, zero],
                        minus: mesh.cell_index(i - 1, iy),
                        plus: Some(mesh.cell_index(i, iy)),
                    };
                    if mesh.interface_x_index.contains(&i) {
                        sets.interface.push(p);
                    } else {
                        sets.continuity.push(p);
                    }
                }
            }
        }
    }
    // horizontal edges y = ys[j]
    for j in 0..=ny {
        for ix in 0..nx {
            for x in along(mesh.xs[ix], mesh.xs[ix + 1]) {
                let pos = [x, mesh.ys[j]];
                if j == 0 {
                    sets.boundary.push(CollocationPoint { pos, normal: [zero, -one], minus: mesh.cell_index(ix, 0), plus: None });
                } else if j == ny {
                    sets.boundary.push(CollocationPoint { pos, normal: [zero, one], minus: mesh.cell_index(ix, ny - 1), plus: None });
                } else {
                    let p = CollocationPoint {
                        pos,
                        normal: [zero, one],
                        minus: mesh.cell_index(ix, j - 1),
                        plus: Some(mesh.cell_index(ix, j)),
                    };
                    if mesh.interface_y_index.contains(&j) {
                        sets.interface.push(p);
                    } else {
                        sets.continuity.push(p);
                    }
                }
            }
        }
    }
    sets
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mesh1d(m: usize) -> Mesh<f64> {
        build_mesh(Domain::unit_interval(), [m, 1], Interface::points(vec![0.5])).unwrap()
    }

    #[test]
    fn uniform_1d_with_interface() {
        let m = mesh1d(4);
        assert_eq!(m.xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(m.interface_x_index, vec![2]);
    }

    #[test]
    fn misaligned_interface_rejected() {
        let r = build_mesh(Domain::<f64>::unit_interval(), [5, 1], Interface::points(vec![0.5]));
        assert!(matches!(r, Err(Error::InterfaceNotOnGrid(_))));
        let r = build_mesh(Domain::<f64>::unit_interval(), [0, 1], Interface::points(vec![]));
        assert!(matches!(r, Err(Error::ZeroCells)));
    }

    #[test]
    fn square_mesh_16() {
        let m = build_mesh(Domain::<f64>::unit_square(), [16, 16], Interface { x: vec![0.5], y: vec![] }).unwrap();
        assert_eq!(m.n_cells(), 256);
        assert_eq!(m.interface_x_index, vec![8]);
    }

    #[test]
    fn classify_1d() {
        let s = classify_points(&mesh1d(4));
        let xs = |v: &[CollocationPoint<f64>]| v.iter().map(|p| p.pos[0]).collect::<Vec<_>>();
        assert_eq!(xs(&s.continuity), vec![0.25, 0.75]);
        assert_eq!(xs(&s.interface), vec![0.5]);
        assert_eq!(xs(&s.boundary), vec![0.0, 1.0]);
        let s2 = classify_points(&mesh1d(2));
        assert!(s2.continuity.is_empty());
        assert_eq!(xs(&s2.interface), vec![0.5]);
    }

    #[test]
    fn classify_2d_counts() {
        let m = build_mesh(Domain::<f64>::unit_square(), [4, 4], Interface { x: vec![0.5], y: vec![] }).unwrap();
        let s = classify_points(&m);
        assert_eq!(s.continuity.len(), 20);
        assert_eq!(s.interface.len(), 4);
        assert_eq!(s.boundary.len(), 16);
        let s3 = classify_points_with(&m, 3);
        assert_eq!(s3.continuity.len() + s3.interface.len(), 24 * 3);
        assert_eq!(s3.boundary.len(), 48);
    }

    #[test]
    fn interface_normals_point_into_plus_cell() {
        let m = build_mesh(Domain::<f64>::unit_square(), [4, 4], Interface { x: vec![0.5], y: vec![] }).unwrap();
        for p in classify_points(&m).interface {
            let plus = m.cell(p.plus.unwrap()).center();
            let minus = m.cell(p.minus).center();
            let d = [plus[0] - minus[0], plus[1] - minus[1]];
            assert!(d[0] * p.normal[0] + d[1] * p.normal[1] > 0.0);
        }
    }

    #[test]
    fn locate_with_tie_break() {
        let m = mesh1d(4);
        assert_eq!(m.locate_cell([0.3, 0.0]).unwrap(), 1);
        assert_eq!(m.locate_cell([0.25, 0.0]).unwrap(), 0);
        assert_eq!(m.locate_cell_on([0.25, 0.0], Side::Plus).unwrap(), 1);
        assert_eq!(m.locate_cell([0.0, 0.0]).unwrap(), 0);
        assert_eq!(m.locate_cell([1.0, 0.0]).unwrap(), 3);
        assert!(matches!(m.locate_cell([1.5, 0.0]), Err(Error::OutOfDomain(_))));
        let q = build_mesh(Domain::<f64>::unit_square(), [4, 4], Interface { x: vec![0.5], y: vec![] }).unwrap();
        assert_eq!(q.locate_cell([0.5, 0.5]).unwrap(), q.cell_index(1, 1));
        assert_eq!(q.locate_cell_on([0.5, 0.5], Side::Plus).unwrap(), q.cell_index(2, 2));
    }

    proptest! {
        #[test]
        fn cells_tile_the_domain(m in 1usize..40, n in 1usize..40) {
            let q = build_mesh(Domain::<f64>::unit_square(), [m, n], Interface { x: vec![], y: vec![] }).unwrap();
            let total: f64 = (0..q.n_cells()).map(|c| q.cell_measure(c)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let s = classify_points(&q);
            let interior_edges = (m - 1) * n + (n - 1) * m;
            prop_assert_eq!(s.continuity.len() + s.interface.len(), interior_edges);
            prop_assert_eq!(classify_points(&q), s);
        }

        #[test]
        fn located_cell_contains_point(x in 0.0f64..=1.0, m in 1usize..50) {
            let q = build_mesh(Domain::<f64>::unit_interval(), [m, 1], Interface::points(vec![])).unwrap();
            let c = q.cell(q.locate_cell([x, 0.0]).unwrap());
            prop_assert!(c.x[0] <= x + 1e-12 && x <= c.x[1] + 1e-12);
        }
    }
}

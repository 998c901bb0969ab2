//! Uniform grids, the five-point / three-point / polar Laplacians, mass-lumped
//! quadrature and grid functions.
//!
//! Throughout, `L` denotes the positive operator `-Δ_h` with homogeneous
//! Dirichlet data. With the diagonal mass matrix `W` of nodal weights the
//! product `W L` is symmetric positive definite on every grid kind; the
//! solvers rely on that.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BandLu, BandMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// `(0,1)`, nodes `x_i = (i+1) h`.
    Interval,
    /// `(0,1)^2`, lexicographic ordering `j*n + i`.
    Square,
    /// Radially symmetric functions on the unit disc, nodes `r_i = i h`, `i = 0..=n`.
    Radial,
}

/// Sparse rows of `L = -Δ_h`, plus the couplings to boundary nodes.
#[derive(Debug)]
pub(crate) struct Stencil {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    /// `(node, boundary point, coefficient)`: the row of `node` picks up
    /// `coefficient * f(point)` when boundary data is nonzero.
    pub boundary: Vec<(usize, [f64; 2], f64)>,
}

impl Stencil {
    #[inline]
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.row(i).find(|&(j, _)| j == i).map(|(_, v)| v).unwrap_or(0.0)
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.row_ptr.len() - 1).map(|i| self.row(i).map(|(j, v)| v * f[j]).sum()).collect()
    }

    /// `|L| |f|`, the scale used for componentwise backward errors.
    pub fn apply_abs(&self, f: &[f64]) -> Vec<f64> {
        (0..self.row_ptr.len() - 1)
            .map(|i| self.row(i).map(|(j, v)| v.abs() * f[j].abs()).sum())
            .collect()
    }
}

struct GridData {
    kind: GridKind,
    n: usize,
    h: f64,
    coords: Vec<[f64; 2]>,
    weights: Vec<f64>,
    stencil: Stencil,
    band: usize,
    lu: OnceLock<BandLu>,
}

/// A uniform grid. Cheap to clone; equality is by kind and resolution.
#[derive(Clone)]
pub struct Grid(Arc<GridData>);

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || (self.0.kind == other.0.kind && self.0.n == other.0.n)
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("kind", &self.0.kind).field("n", &self.0.n).finish()
    }
}

impl Grid {
    pub fn new(kind: GridKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("grid needs at least one interior node".into()));
        }
        let h = 1.0 / (n as f64 + 1.0);
        let data = match kind {
            GridKind::Interval => build_interval(n, h),
            GridKind::Square => build_square(n, h),
            GridKind::Radial => build_radial(n, h),
        };
        Ok(Grid(Arc::new(data)))
    }

    pub fn interval(n: usize) -> Self {
        Self::new(GridKind::Interval, n).expect("n >= 1")
    }

    pub fn square(n: usize) -> Self {
        Self::new(GridKind::Square, n).expect("n >= 1")
    }

    pub fn radial(n: usize) -> Self {
        Self::new(GridKind::Radial, n).expect("n >= 1")
    }

    pub fn kind(&self) -> GridKind {
        self.0.kind
    }

    pub fn n(&self) -> usize {
        self.0.n
    }

    pub fn h(&self) -> f64 {
        self.0.h
    }

    /// Number of unknowns (`n`, `n^2` or `n+1`).
    pub fn len(&self) -> usize {
        self.0.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates of node `i`: `[x]`, `[x, y]` or `[r]`.
    pub fn point(&self, i: usize) -> &[f64] {
        let d = if self.0.kind == GridKind::Square { 2 } else { 1 };
        &self.0.coords[i][..d]
    }

    /// Quadrature weights `w_i`.
    pub fn weights(&self) -> &[f64] {
        &self.0.weights
    }

    pub(crate) fn stencil(&self) -> &Stencil {
        &self.0.stencil
    }

    /// Half bandwidth of `L` in the natural ordering.
    pub(crate) fn bandwidth(&self) -> usize {
        self.0.band
    }

    /// Assemble `L` with selected rows replaced by `d_i e_i`, `d_i` the
    /// diagonal of `L`. Keeping the scale of the eliminated rows means partial
    /// pivoting never reorders them, so their values come back exactly.
    pub(crate) fn band_matrix(&self, identity_rows: Option<&[bool]>) -> BandMatrix {
        let b = self.0.band;
        let mut m = BandMatrix::zeros(self.len(), b, b);
        for i in 0..self.len() {
            if identity_rows.is_some_and(|mask| mask[i]) {
                m.set(i, i, self.0.stencil.diag(i));
            } else {
                for (j, v) in self.0.stencil.row(i) {
                    m.set(i, j, v);
                }
            }
        }
        m
    }

    fn lu(&self) -> &BandLu {
        self.0.lu.get_or_init(|| {
            self.band_matrix(None).factor().expect("the Dirichlet Laplacian is nonsingular")
        })
    }

    /// `-Δ_h` applied to raw nodal values.
    pub(crate) fn apply_neg_laplacian(&self, f: &[f64]) -> Vec<f64> {
        self.0.stencil.apply(f)
    }

    /// Solve `L y = u` on raw values with the cached factorization.
    pub(crate) fn solve_neg_laplacian(&self, u: &[f64]) -> Vec<f64> {
        self.lu().solve(u)
    }

    fn check(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }

    /// Next coarser grid of the same kind, when the nodes nest.
    pub(crate) fn coarsen(&self) -> Option<Grid> {
        let n = self.n();
        (n % 2 == 1 && n >= 3).then(|| Grid::new(self.kind(), (n - 1) / 2).expect("n >= 1"))
    }

    /// Restrict fine values to the nested coarse nodes.
    pub(crate) fn inject(&self, coarse: &Grid, f: &[f64]) -> Vec<f64> {
        let nc = coarse.n();
        match self.kind() {
            GridKind::Interval => (0..nc).map(|j| f[2 * j + 1]).collect(),
            GridKind::Radial => (0..=nc).map(|j| f[2 * j]).collect(),
            GridKind::Square => {
                let n = self.n();
                let mut out = Vec::with_capacity(nc * nc);
                for jy in 0..nc {
                    for jx in 0..nc {
                        out.push(f[(2 * jy + 1) * n + 2 * jx + 1]);
                    }
                }
                out
            }
        }
    }

    /// A fine node is marked iff every coarse node surrounding it is marked;
    /// boundary neighbours count as unmarked.
    pub(crate) fn prolong_mask(&self, coarse: &Grid, mask: &[bool]) -> Vec<bool> {
        let nc = coarse.n();
        // fine position q (coarse nodes at even q) -> coarse indices or None for boundary
        let interval_parents = |q: usize| -> Vec<Option<usize>> {
            let conv = |p: usize| (p >= 1 && p <= nc).then(|| p - 1);
            if q.is_multiple_of(2) {
                vec![conv(q / 2)]
            } else {
                vec![conv(q / 2), conv(q / 2 + 1)]
            }
        };
        match self.kind() {
            GridKind::Interval => (0..self.n())
                .map(|i| interval_parents(i + 1).iter().all(|p| p.is_some_and(|j| mask[j])))
                .collect(),
            GridKind::Radial => (0..=self.n())
                .map(|i| {
                    let conv = |p: usize| (p <= nc).then_some(p);
                    let ps =
                        if i % 2 == 0 { vec![conv(i / 2)] } else { vec![conv(i / 2), conv(i / 2 + 1)] };
                    ps.iter().all(|p| p.is_some_and(|j| mask[j]))
                })
                .collect(),
            GridKind::Square => {
                let n = self.n();
                let mut out = vec![false; n * n];
                for iy in 0..n {
                    let py = interval_parents(iy + 1);
                    for ix in 0..n {
                        let px = interval_parents(ix + 1);
                        out[iy * n + ix] = py.iter().all(|a| {
                            px.iter().all(|b| match (a, b) {
                                (Some(a), Some(b)) => mask[a * nc + b],
                                _ => false,
                            })
                        });
                    }
                }
                out
            }
        }
    }
}

fn csr(rows: Vec<Vec<(usize, f64)>>) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let mut row_ptr = vec![0];
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for r in rows {
        for (j, v) in r {
            cols.push(j);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    (row_ptr, cols, vals)
}

fn build_interval(n: usize, h: f64) -> GridData {
    let k = 1.0 / (h * h);
    let mut rows = Vec::with_capacity(n);
    let mut boundary = Vec::new();
    for i in 0..n {
        let mut r = Vec::with_capacity(3);
        if i > 0 {
            r.push((i - 1, -k));
        } else {
            boundary.push((i, [0.0, 0.0], -k));
        }
        r.push((i, 2.0 * k));
        if i + 1 < n {
            r.push((i + 1, -k));
        } else {
            boundary.push((i, [1.0, 0.0], -k));
        }
        rows.push(r);
    }
    let (row_ptr, cols, vals) = csr(rows);
    GridData {
        kind: GridKind::Interval,
        n,
        h,
        coords: (0..n).map(|i| [(i + 1) as f64 * h, 0.0]).collect(),
        weights: vec![h; n],
        stencil: Stencil { row_ptr, cols, vals, boundary },
        band: 1,
        lu: OnceLock::new(),
    }
}

fn build_square(n: usize, h: f64) -> GridData {
    let k = 1.0 / (h * h);
    let idx = |ix: usize, iy: usize| iy * n + ix;
    let mut rows = Vec::with_capacity(n * n);
    let mut boundary = Vec::new();
    let mut coords = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            let i = idx(ix, iy);
            let (x, y) = ((ix + 1) as f64 * h, (iy + 1) as f64 * h);
            coords.push([x, y]);
            let mut r = Vec::with_capacity(5);
            if iy > 0 {
                r.push((idx(ix, iy - 1), -k));
            } else {
                boundary.push((i, [x, 0.0], -k));
            }
            if ix > 0 {
                r.push((idx(ix - 1, iy), -k));
            } else {
                boundary.push((i, [0.0, y], -k));
            }
            r.push((i, 4.0 * k));
            if ix + 1 < n {
                r.push((idx(ix + 1, iy), -k));
            } else {
                boundary.push((i, [1.0, y], -k));
            }
            if iy + 1 < n {
                r.push((idx(ix, iy + 1), -k));
            } else {
                boundary.push((i, [x, 1.0], -k));
            }
            rows.push(r);
        }
    }
    let (row_ptr, cols, vals) = csr(rows);
    GridData {
        kind: GridKind::Square,
        n,
        h,
        coords,
        weights: vec![h * h; n * n],
        stencil: Stencil { row_ptr, cols, vals, boundary },
        band: n,
        lu: OnceLock::new(),
    }
}

fn build_radial(n: usize, h: f64) -> GridData {
    let k = 1.0 / (h * h);
    let mut rows = Vec::with_capacity(n + 1);
    let mut boundary = Vec::new();
    // origin: symmetric limit 4 (f_1 - f_0) / h^2
    rows.push(vec![(0, 4.0 * k), (1.min(n), -4.0 * k)]);
    for i in 1..=n {
        let fi = i as f64;
        let west = -(fi - 0.5) / fi * k;
        let east = -(fi + 0.5) / fi * k;
        let mut r = vec![(i - 1, west), (i, 2.0 * k)];
        if i < n {
            r.push((i + 1, east));
        } else {
            boundary.push((i, [1.0, 0.0], east));
        }
        rows.push(r);
    }
    let (row_ptr, cols, vals) = csr(rows);
    let mut weights: Vec<f64> =
        (0..=n).map(|i| 2.0 * std::f64::consts::PI * i as f64 * h * h).collect();
    weights[0] = std::f64::consts::PI * h * h / 4.0;
    GridData {
        kind: GridKind::Radial,
        n,
        h,
        coords: (0..=n).map(|i| [i as f64 * h, 0.0]).collect(),
        weights,
        stencil: Stencil { row_ptr, cols, vals, boundary },
        band: 1,
        lu: OnceLock::new(),
    }
}

/// Nodal values on the interior nodes of a grid.
#[derive(Clone, Debug)]
pub struct GridFn {
    grid: Grid,
    values: Vec<f64>,
}

impl PartialEq for GridFn {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values
    }
}

impl GridFn {
    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    /// Sample `f` at the nodes; the argument is the node's coordinate slice.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        Self { grid: grid.clone(), values: (0..grid.len()).map(|i| f(grid.point(i))).collect() }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid with {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid: grid.clone(), values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Pointwise combination. Panics on a grid mismatch.
    pub fn zip_map(&self, other: &GridFn, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self { grid: self.grid.clone(), values }
    }

    /// Mass-lumped `L^2` inner product. Panics on a grid mismatch; see [`inner`].
    pub fn dot(&self, other: &GridFn) -> f64 {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        weighted_dot(self.grid.weights(), &self.values, &other.values)
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_l1(&self) -> f64 {
        self.grid.weights().iter().zip(&self.values).map(|(w, v)| w * v.abs()).sum()
    }

    pub fn norm_linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `Δ_h f` with zero boundary values.
    pub fn laplacian(&self) -> GridFn {
        laplacian(self)
    }
}

pub(crate) fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

macro_rules! binop {
    ($tr:ident, $m:ident, $op:tt) => {
        impl $tr<&GridFn> for &GridFn {
            type Output = GridFn;
            fn $m(self, rhs: &GridFn) -> GridFn {
                self.zip_map(rhs, |a, b| a $op b)
            }
        }
        impl $tr<GridFn> for GridFn {
            type Output = GridFn;
            fn $m(self, rhs: GridFn) -> GridFn {
                (&self).$m(&rhs)
            }
        }
    };
}
binop!(Add, add, +);
binop!(Sub, sub, -);

impl Mul<&GridFn> for f64 {
    type Output = GridFn;
    fn mul(self, rhs: &GridFn) -> GridFn {
        rhs.map(|v| self * v)
    }
}

impl Mul<GridFn> for f64 {
    type Output = GridFn;
    fn mul(self, rhs: GridFn) -> GridFn {
        rhs.map(|v| self * v)
    }
}

impl Neg for &GridFn {
    type Output = GridFn;
    fn neg(self) -> GridFn {
        self.map(|v| -v)
    }
}

impl Neg for GridFn {
    type Output = GridFn;
    fn neg(self) -> GridFn {
        self.map(|v| -v)
    }
}

/// `Δ_h f` with zero boundary values.
pub fn laplacian(f: &GridFn) -> GridFn {
    let v = f.grid.apply_neg_laplacian(&f.values);
    GridFn { grid: f.grid.clone(), values: v.into_iter().map(|x| -x).collect() }
}

/// `Δ_h` of a function known in closed form, using its actual boundary values.
pub fn laplacian_with_boundary(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> GridFn {
    let inner = GridFn::from_fn(grid, &f);
    let mut out = laplacian(&inner);
    for &(i, p, c) in &grid.stencil().boundary {
        let d = if grid.kind() == GridKind::Square { 2 } else { 1 };
        out.values[i] -= c * f(&p[..d]);
    }
    out
}

/// Solve `-Δ_h y = u` with zero boundary values.
pub fn poisson_solve(u: &GridFn) -> GridFn {
    GridFn { grid: u.grid.clone(), values: u.grid.solve_neg_laplacian(&u.values) }
}

pub fn inner(f: &GridFn, g: &GridFn) -> Result<f64> {
    f.grid.check(&g.grid)?;
    Ok(weighted_dot(f.grid.weights(), &f.values, &g.values))
}

pub fn norm_l2(f: &GridFn) -> f64 {
    f.norm_l2()
}

pub fn norm_l1(f: &GridFn) -> f64 {
    f.norm_l1()
}

pub fn norm_linf(f: &GridFn) -> f64 {
    f.norm_linf()
}

/// Smallest eigenvalue of `-Δ_h`, by inverse iteration with Rayleigh quotients.
pub fn poincare_constant(grid: &Grid) -> Result<f64> {
    const MAX_ITER: usize = 10_000;
    let w = grid.weights();
    let mut v = vec![1.0; grid.len()];
    let mut omega = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let mut z = grid.solve_neg_laplacian(&v);
        let nz = weighted_dot(w, &z, &z).sqrt();
        z.iter_mut().for_each(|x| *x /= nz);
        let lz = grid.apply_neg_laplacian(&z);
        let next = weighted_dot(w, &z, &lz);
        v = z;
        if (next - omega).abs() <= 1e-10 * next.abs() {
            return Ok(next);
        }
        omega = next;
    }
    Err(Error::NonConvergence { what: "inverse iteration", iterations: MAX_ITER })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn quadratic_is_exact_in_one_dimension() {
        let g = Grid::interval(7);
        let f = GridFn::from_fn(&g, |p| p[0] * (1.0 - p[0]));
        for v in laplacian(&f).values() {
            assert!((v + 2.0).abs() < 1e-11);
        }
        let y = poisson_solve(&GridFn::constant(&g, 2.0));
        for (a, b) in y.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn weighted_stiffness_is_symmetric() {
        for g in [Grid::interval(5), Grid::square(4), Grid::radial(6)] {
            let st = g.stencil();
            let w = g.weights();
            for i in 0..g.len() {
                for (j, v) in st.row(i) {
                    let back = st.row(j).find(|&(k, _)| k == i).map(|(_, v)| v).unwrap();
                    assert!((w[i] * v - w[j] * back).abs() < 1e-9 * (w[i] * v).abs());
                }
            }
        }
    }

    #[test]
    fn radial_origin_coupling_is_pi() {
        let g = Grid::radial(9);
        let w = g.weights();
        let c01 = g.stencil().row(0).find(|&(j, _)| j == 1).unwrap().1;
        assert!((w[0] * c01 + PI).abs() < 1e-12);
    }

    #[test]
    fn boundary_aware_laplacian_sees_nonzero_boundary_data() {
        let g = Grid::interval(9);
        let lap = laplacian_with_boundary(&g, |p| 1.0 + p[0] * p[0]);
        for v in lap.values() {
            assert!((v - 2.0).abs() < 1e-9);
        }
        let g = Grid::square(5);
        let lap = laplacian_with_boundary(&g, |p| p[0] * p[0] + 3.0 * p[1] * p[1]);
        for v in lap.values() {
            assert!((v - 8.0).abs() < 1e-9);
        }
    }

    #[test]
    fn nested_coarsening_lines_up() {
        for g in [Grid::interval(15), Grid::radial(15), Grid::square(7)] {
            let c = g.coarsen().unwrap();
            let f = GridFn::from_fn(&g, |p| p.iter().sum::<f64>());
            let fc = GridFn::from_fn(&c, |p| p.iter().sum::<f64>());
            let inj = g.inject(&c, f.values());
            for (a, b) in inj.iter().zip(fc.values()) {
                assert!((a - b).abs() < 1e-14);
            }
            let all = g.prolong_mask(&c, &vec![true; c.len()]);
            // nodes next to the boundary lose their boundary-side parent
            assert!(all.iter().any(|&m| m));
            assert!(all.iter().any(|&m| !m));
        }
    }

    #[test]
    fn poincare_constant_matches_the_discrete_eigenvalue() {
        let g = Grid::interval(63);
        let h = g.h();
        let exact = 2.0 / (h * h) * (1.0 - (PI * h).cos());
        assert!((poincare_constant(&g).unwrap() - exact).abs() < 1e-8);
    }
}

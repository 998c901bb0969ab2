//! The obstacle problem `y >= ψ, λ >= 0, λ (y - ψ) = 0, -Δ_h y = u + λ`.
//!
//! Internally the unknown is the slack `w = y - ψ`, which solves the same
//! problem with obstacle zero and right-hand side `u + Δ_h ψ`. Active nodes
//! then carry `w = 0` exactly, so contact never depends on cancellation
//! between two nearly equal states.

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{laplacian_with_boundary, Grid, GridFn, GridKind, Stencil};
use crate::tol::{TOL_ACT, TOL_KKT};

/// An obstacle `ψ` together with its discrete Laplacian.
///
/// The Laplacian is kept separately because it may use boundary values of
/// `ψ`, which the obstacle problem itself never sees.
#[derive(Clone, Debug)]
pub struct Obstacle {
    values: GridFn,
    laplacian: GridFn,
}

impl Obstacle {
    /// Obstacle given by nodal values only; `Δ_h ψ` assumes zero boundary data.
    pub fn new(values: GridFn) -> Self {
        let laplacian = values.laplacian();
        Self { values, laplacian }
    }

    /// Sample a closed-form obstacle, including its boundary values.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        Self { values: GridFn::from_fn(grid, &f), laplacian: laplacian_with_boundary(grid, &f) }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self::from_fn(grid, |_| c)
    }

    pub fn with_laplacian(values: GridFn, laplacian: GridFn) -> Result<Self> {
        if values.grid() != laplacian.grid() {
            return Err(Error::GridMismatch("obstacle and its Laplacian".into()));
        }
        Ok(Self { values, laplacian })
    }

    pub fn values(&self) -> &GridFn {
        &self.values
    }

    /// `Δ_h ψ`.
    pub fn laplacian(&self) -> &GridFn {
        &self.laplacian
    }

    pub fn grid(&self) -> &Grid {
        self.values.grid()
    }
}

impl From<GridFn> for Obstacle {
    fn from(values: GridFn) -> Self {
        Self::new(values)
    }
}

/// Pointwise control bounds; `±inf` means no bound.
#[derive(Clone, Debug)]
pub struct ControlBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlBounds {
    pub fn unbounded(grid: &Grid) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; grid.len()], upper: vec![f64::INFINITY; grid.len()] }
    }

    /// Requires `lower <= 0 <= upper` at every node.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::GridMismatch("bound vectors differ in length".into()));
        }
        if let Some(i) = lower.iter().zip(&upper).position(|(&a, &b)| !(a <= 0.0 && 0.0 <= b)) {
            return Err(Error::InvalidParameter(format!("bounds must satisfy ua <= 0 <= ub (node {i})")));
        }
        Ok(Self { lower, upper })
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower.iter().all(|v| *v == f64::NEG_INFINITY) && self.upper.iter().all(|v| *v == f64::INFINITY)
    }

    pub fn check_admissible(&self, u: &GridFn) -> Result<()> {
        match u.values().iter().enumerate().position(|(i, &v)| !(self.lower[i] <= v && v <= self.upper[i])) {
            Some(node) => Err(Error::NotAdmissible { node }),
            None => Ok(()),
        }
    }

    pub fn project(&self, u: &GridFn) -> GridFn {
        let mut out = u.clone();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
        out
    }

    pub fn at_lower(&self, u: &GridFn, i: usize) -> bool {
        u.values()[i] - self.lower[i] <= TOL_ACT
    }

    pub fn at_upper(&self, u: &GridFn, i: usize) -> bool {
        self.upper[i] - u.values()[i] <= TOL_ACT
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClass {
    Inactive,
    StrictlyActive,
    Biactive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pdas,
    ProjectedSor,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveDiagnostics {
    pub method: Method,
    pub iterations: usize,
    /// Contact nodes none of whose stencil neighbours is in contact.
    pub isolated_contacts: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct ObstacleSolution {
    pub y: GridFn,
    /// `λ = -Δ_h y - u`.
    pub lambda: GridFn,
    /// `y - ψ`, computed without cancellation.
    pub slack: GridFn,
    pub class: Vec<NodeClass>,
    pub kkt_residual: f64,
    pub diagnostics: SolveDiagnostics,
}

impl ObstacleSolution {
    pub fn grid(&self) -> &Grid {
        self.y.grid()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.class[i] != NodeClass::Inactive
    }

    pub fn active_mask(&self) -> Vec<bool> {
        (0..self.class.len()).map(|i| self.is_active(i)).collect()
    }

    pub fn count(&self, c: NodeClass) -> usize {
        self.class.iter().filter(|&&k| k == c).count()
    }
}

#[derive(Clone, Debug)]
pub enum WarmStart {
    /// Solve on nested coarser grids first and prolongate the contact set.
    Nested,
    /// Violation set of the unconstrained Poisson solve.
    Unconstrained,
    /// Explicit initial active set.
    Given(Vec<bool>),
}

#[derive(Clone, Debug)]
pub struct ViOptions {
    pub warm_start: WarmStart,
    pub max_pdas: usize,
    pub max_sor: usize,
}

impl Default for ViOptions {
    fn default() -> Self {
        Self { warm_start: WarmStart::Nested, max_pdas: 200, max_sor: 100_000 }
    }
}

/// Per-node constraint of the generic complementarity problem
/// `L z = f + μ` solved by [`solve_complementarity`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Constraint {
    Free,
    Fixed(f64),
    Lower(f64),
}

pub(crate) struct CpSolution {
    pub z: Vec<f64>,
    pub mu: Vec<f64>,
    pub active: Vec<bool>,
    pub iterations: usize,
    pub method: Method,
}

/// Nodes whose `Lower` constraint is violated by the unconstrained solution.
fn unconstrained_guess(grid: &Grid, f: &[f64], cons: &[Constraint]) -> Vec<bool> {
    let mask: Vec<bool> = cons.iter().map(|c| matches!(c, Constraint::Fixed(_))).collect();
    let st = grid.stencil();
    let rhs: Vec<f64> = (0..f.len())
        .map(|i| if let Constraint::Fixed(v) = cons[i] { v * st.diag(i) } else { f[i] })
        .collect();
    let z = match grid.band_matrix(Some(&mask)).factor() {
        Ok(lu) => lu.solve(&rhs),
        Err(_) => return vec![false; f.len()],
    };
    cons.iter().zip(&z).map(|(c, &zi)| matches!(c, Constraint::Lower(v) if zi < *v)).collect()
}

/// Solve `L z = f + μ` with `μ = 0` on free nodes, `z = v` on fixed nodes and
/// `z >= v, μ >= 0, μ (z - v) = 0` on lower-bounded nodes.
///
/// Primal-dual active set iteration; if an active set repeats, projected SOR
/// takes over and its contact set seeds one more active-set pass.
pub(crate) fn solve_complementarity(
    grid: &Grid,
    f: &[f64],
    cons: &[Constraint],
    init: Option<Vec<bool>>,
    max_pdas: usize,
    max_sor: usize,
) -> Result<CpSolution> {
    let init = init.unwrap_or_else(|| unconstrained_guess(grid, f, cons));
    match pdas(grid, f, cons, init, max_pdas)? {
        Some(sol) => Ok(sol),
        None => {
            let (z, sweeps) = projected_sor(grid, f, cons, max_sor)?;
            let guess: Vec<bool> =
                cons.iter().zip(&z).map(|(c, &zi)| matches!(c, Constraint::Lower(v) if zi <= *v)).collect();
            match pdas(grid, f, cons, guess, max_pdas)? {
                Some(mut sol) => {
                    sol.iterations += sweeps;
                    sol.method = Method::ProjectedSor;
                    Ok(sol)
                }
                None => Err(Error::NonConvergence { what: "obstacle solver", iterations: max_pdas + sweeps }),
            }
        }
    }
}

fn pdas(
    grid: &Grid,
    f: &[f64],
    cons: &[Constraint],
    mut active: Vec<bool>,
    max_iter: usize,
) -> Result<Option<CpSolution>> {
    let n = f.len();
    for (a, c) in active.iter_mut().zip(cons) {
        *a = *a && matches!(c, Constraint::Lower(_));
    }
    let st = grid.stencil();
    let mut seen: HashSet<Vec<bool>> = HashSet::new();
    for it in 1..=max_iter {
        let mut mask = vec![false; n];
        let mut fixed = vec![0.0; n];
        let mut rhs = f.to_vec();
        for i in 0..n {
            match cons[i] {
                Constraint::Fixed(v) => {
                    mask[i] = true;
                    fixed[i] = v;
                }
                Constraint::Lower(v) if active[i] => {
                    mask[i] = true;
                    fixed[i] = v;
                }
                _ => {}
            }
            if mask[i] {
                rhs[i] = fixed[i] * st.diag(i);
            }
        }
        let mut z = grid.band_matrix(Some(&mask)).factor()?.solve(&rhs);
        for i in 0..n {
            if mask[i] {
                z[i] = fixed[i];
            }
        }
        let lz = grid.apply_neg_laplacian(&z);
        let mu: Vec<f64> = (0..n).map(|i| if mask[i] { lz[i] - f[i] } else { 0.0 }).collect();
        let next: Vec<bool> = (0..n)
            .map(|i| match cons[i] {
                Constraint::Lower(v) => mu[i] + (v - z[i]) > 0.0,
                _ => false,
            })
            .collect();
        if next == active || rounding_feasible(st, f, cons, &z, &mu, &active) {
            return Ok(Some(CpSolution { z, mu, active, iterations: it, method: Method::Pdas }));
        }
        seen.insert(active);
        if seen.contains(&next) {
            return Ok(None);
        }
        active = next;
    }
    Ok(None)
}

/// The iterate solves the complementarity system up to rounding, so a changing
/// active set only reflects noise on degenerate (biactive) nodes.
fn rounding_feasible(st: &Stencil, f: &[f64], cons: &[Constraint], z: &[f64], mu: &[f64], active: &[bool]) -> bool {
    const EPS: f64 = 64.0 * f64::EPSILON;
    let lz_abs = st.apply_abs(z);
    // bounds are often 0 in shifted variables, so slack is measured against the sup norm
    let z_scale = z.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    (0..f.len()).all(|i| match cons[i] {
        Constraint::Lower(_) if active[i] => mu[i] >= -EPS * (lz_abs[i] + f[i].abs()),
        Constraint::Lower(v) => z[i] - v >= -EPS * (z_scale + v.abs()),
        _ => true,
    })
}

fn projected_sor(grid: &Grid, f: &[f64], cons: &[Constraint], max_sweeps: usize) -> Result<(Vec<f64>, usize)> {
    let st = grid.stencil();
    let n = f.len();
    let omega = 2.0 / (1.0 + (std::f64::consts::PI * grid.h()).sin());
    let mut z = vec![0.0; n];
    for (zi, c) in z.iter_mut().zip(cons) {
        if let Constraint::Fixed(v) | Constraint::Lower(v) = c {
            *zi = *v;
        }
    }
    for sweep in 1..=max_sweeps {
        let mut change = 0.0_f64;
        let mut scale = 0.0_f64;
        for i in 0..n {
            let old = z[i];
            let new = match cons[i] {
                Constraint::Fixed(v) => v,
                c => {
                    let mut s = f[i];
                    let mut d = 0.0;
                    for (j, v) in st.row(i) {
                        if j == i {
                            d = v;
                        } else {
                            s -= v * z[j];
                        }
                    }
                    let t = (1.0 - omega) * old + omega * s / d;
                    match c {
                        Constraint::Lower(v) => t.max(v),
                        _ => t,
                    }
                }
            };
            z[i] = new;
            change = change.max((new - old).abs());
            scale = scale.max(new.abs());
        }
        if change <= 1e-14 * scale.max(1.0) {
            return Ok((z, sweep));
        }
    }
    Err(Error::NonConvergence { what: "projected SOR", iterations: max_sweeps })
}

fn check_obstacle(u: &GridFn, psi: &Obstacle) -> Result<()> {
    if u.grid() != psi.grid() {
        return Err(Error::GridMismatch("control and obstacle".into()));
    }
    for (i, &v) in psi.values().values().iter().enumerate() {
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::Infeasible { node: i });
        }
        if v == f64::NEG_INFINITY {
            return Err(Error::InvalidParameter("obstacle values must be finite".into()));
        }
    }
    if let Some(i) = u.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("control is not finite at node {i}")));
    }
    Ok(())
}

/// Active set for the shifted problem on `grid`, found on the coarse grids first.
fn nested_guess(grid: &Grid, f: &[f64], depth: usize) -> Result<Vec<bool>> {
    let cons = vec![Constraint::Lower(0.0); grid.len()];
    let min_n = if grid.kind() == GridKind::Square { 15 } else { 31 };
    match grid.coarsen() {
        Some(coarse) if grid.n() > 2 * min_n && depth < 16 => {
            let fc = grid.inject(&coarse, f);
            let guess = nested_guess(&coarse, &fc, depth + 1)?;
            let sol = solve_complementarity(&coarse, &fc, &cons, Some(guess), 200, 100_000)?;
            Ok(grid.prolong_mask(&coarse, &sol.active))
        }
        _ => Ok(unconstrained_guess(grid, f, &cons)),
    }
}

pub fn solve_obstacle(u: &GridFn, psi: &Obstacle) -> Result<ObstacleSolution> {
    solve_obstacle_with(u, psi, &ViOptions::default())
}

pub fn solve_obstacle_with(u: &GridFn, psi: &Obstacle, opts: &ViOptions) -> Result<ObstacleSolution> {
    check_obstacle(u, psi)?;
    let grid = u.grid();
    let lpsi = grid.apply_neg_laplacian(psi.values().values());
    let f: Vec<f64> = u.values().iter().zip(&lpsi).map(|(a, b)| a - b).collect();
    let cons = vec![Constraint::Lower(0.0); grid.len()];
    let init = match &opts.warm_start {
        WarmStart::Nested => Some(nested_guess(grid, &f, 0)?),
        WarmStart::Unconstrained => None,
        WarmStart::Given(mask) => Some(mask.clone()),
    };
    let cp = solve_complementarity(grid, &f, &cons, init, opts.max_pdas, opts.max_sor)?;
    Ok(finish(grid, psi, &f, cp))
}

fn finish(grid: &Grid, psi: &Obstacle, f: &[f64], cp: CpSolution) -> ObstacleSolution {
    let n = grid.len();
    let w = cp.z;
    let lambda = cp.mu;
    let y: Vec<f64> = psi.values().values().iter().zip(&w).map(|(p, s)| p + s).collect();
    let class: Vec<NodeClass> = (0..n)
        .map(|i| {
            if w[i] > TOL_ACT {
                NodeClass::Inactive
            } else if lambda[i] > TOL_ACT {
                NodeClass::StrictlyActive
            } else {
                NodeClass::Biactive
            }
        })
        .collect();
    let kkt_residual = kkt_residual(grid, f, &w, &lambda);
    let st = grid.stencil();
    let isolated_contacts = (0..n)
        .filter(|&i| class[i] != NodeClass::Inactive)
        .filter(|&i| st.row(i).all(|(j, _)| j == i || class[j] == NodeClass::Inactive))
        .collect();
    ObstacleSolution {
        y: GridFn::from_values(grid, y).expect("sizes match"),
        lambda: GridFn::from_values(grid, lambda).expect("sizes match"),
        slack: GridFn::from_values(grid, w).expect("sizes match"),
        class,
        kkt_residual,
        diagnostics: SolveDiagnostics { method: cp.method, iterations: cp.iterations, isolated_contacts },
    }
}

/// Max of feasibility, multiplier sign, complementarity and the componentwise
/// backward error of the equation `L w = f + λ`.
pub(crate) fn kkt_residual(grid: &Grid, f: &[f64], w: &[f64], lambda: &[f64]) -> f64 {
    let lw = grid.apply_neg_laplacian(w);
    let scale = grid.stencil().apply_abs(w);
    let mut r = 0.0_f64;
    for i in 0..f.len() {
        r = r.max(-w[i]).max(-lambda[i]).max((lambda[i] * w[i]).abs());
        let s = scale[i] + f[i].abs() + lambda[i].abs();
        let e = (lw[i] - f[i] - lambda[i]).abs();
        if s > 0.0 {
            r = r.max(e / s);
        } else {
            r = r.max(e);
        }
    }
    r
}

/// `(‖Δ_h (y1 - y2)‖_1, 2 ‖u1 - u2‖_1)`.
pub fn lipschitz_l1_check(u1: &GridFn, u2: &GridFn, psi: &Obstacle) -> Result<(f64, f64)> {
    let s1 = solve_obstacle(u1, psi)?;
    let s2 = solve_obstacle(u2, psi)?;
    let dw = &s1.slack - &s2.slack;
    let lhs = dw.laplacian().norm_l1();
    Ok((lhs, 2.0 * (u1 - u2).norm_l1()))
}

/// Whether `S(u1) <= S(u2)` nodally; requires `u1 <= u2`.
pub fn comparison_check(u1: &GridFn, u2: &GridFn, psi: &Obstacle) -> Result<bool> {
    if let Some(i) = u1.values().iter().zip(u2.values()).position(|(a, b)| a > b) {
        return Err(Error::Precondition(format!("u1 > u2 at node {i}")));
    }
    let s1 = solve_obstacle(u1, psi)?;
    let s2 = solve_obstacle(u2, psi)?;
    Ok(s1.slack.values().iter().zip(s2.slack.values()).all(|(a, b)| *a <= b + TOL_KKT))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn far_obstacle_reduces_to_poisson() {
        let g = Grid::interval(31);
        let sol = solve_obstacle(&GridFn::constant(&g, 2.0), &Obstacle::constant(&g, -10.0)).unwrap();
        for (i, y) in sol.y.values().iter().enumerate() {
            let x = g.point(i)[0];
            assert!((y - x * (1.0 - x)).abs() < 1e-12);
        }
        assert!(sol.lambda.values().iter().all(|&l| l == 0.0));
        assert_eq!(sol.count(NodeClass::Inactive), g.len());
    }

    #[test]
    fn pushing_down_on_zero_obstacle_is_fully_active() {
        let g = Grid::interval(17);
        let sol = solve_obstacle(&GridFn::constant(&g, -1.0), &Obstacle::constant(&g, 0.0)).unwrap();
        assert!(sol.y.values().iter().all(|&y| y == 0.0));
        assert!(sol.lambda.values().iter().all(|&l| (l - 1.0).abs() < 1e-12));
        assert_eq!(sol.count(NodeClass::StrictlyActive), g.len());
        assert!(sol.kkt_residual <= TOL_KKT);
    }

    #[test]
    fn warm_starts_agree() {
        let g = Grid::interval(255);
        let psi = Obstacle::from_fn(&g, |p| 0.5 * (std::f64::consts::PI * p[0]).sin() - 0.4);
        let u = GridFn::zeros(&g);
        let a = solve_obstacle(&u, &psi).unwrap();
        let opts = ViOptions { warm_start: WarmStart::Unconstrained, ..Default::default() };
        let b = solve_obstacle_with(&u, &psi, &opts).unwrap();
        assert!((&a.y - &b.y).norm_linf() < 1e-13);
        assert!(a.kkt_residual <= TOL_KKT && b.kkt_residual <= TOL_KKT, "{} {}", a.kkt_residual, b.kkt_residual);
    }

    #[test]
    fn sor_fallback_reaches_the_same_point() {
        let g = Grid::interval(63);
        let psi = Obstacle::from_fn(&g, |p| 0.5 * (std::f64::consts::PI * p[0]).sin() - 0.4);
        let u = GridFn::from_fn(&g, |p| (7.0 * p[0]).cos());
        let reference = solve_obstacle(&u, &psi).unwrap();
        // one PDAS step is not enough, so the fallback must kick in
        let opts = ViOptions { warm_start: WarmStart::Given(vec![false; g.len()]), max_pdas: 1, max_sor: 100_000 };
        let sol = solve_obstacle_with(&u, &psi, &opts).unwrap();
        assert_eq!(sol.diagnostics.method, Method::ProjectedSor);
        assert!((&sol.y - &reference.y).norm_linf() < 1e-10);
    }

    #[test]
    fn rejects_infinite_obstacle() {
        let g = Grid::interval(5);
        let mut v = GridFn::zeros(&g);
        v.values_mut()[2] = f64::INFINITY;
        let psi = Obstacle::with_laplacian(v, GridFn::zeros(&g)).unwrap();
        assert_eq!(solve_obstacle(&GridFn::zeros(&g), &psi).unwrap_err(), Error::Infeasible { node: 2 });
    }
}

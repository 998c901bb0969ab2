//! Numerical solution of the control problem.
//!
//! [`solve_subharmonic`] treats the convex case as a QP in the state and runs
//! a primal-dual active set method on its KKT system. [`solve_general`] is a
//! projected descent on `u ↦ J(S(u), u)` whose stopping test is the sampled
//! Bouligand criterion.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFn};
use crate::linalg::{nonneg_qp, BandMatrix};
use crate::ssc::classify_subharmonic;
use crate::stationarity::{bouligand_gap_at, objective, project_to_cone, BouligandReport, ObjectiveSpec};
use crate::tol::TOL_OPT;
use crate::vi::{solve_obstacle, ControlBounds, NodeClass, Obstacle, ObstacleSolution};

#[derive(Clone, Debug)]
pub struct Solution {
    pub u: GridFn,
    pub y: GridFn,
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub struct QpOptions {
    /// Additional PDAS runs from random initial active sets.
    pub random_starts: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { random_starts: 0, seed: 0, max_iter: 200 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct QpDiagnostics {
    /// PDAS iterations of each start; the first is the standard initialization.
    pub iterations: Vec<usize>,
    /// Random starts that did not converge and fell back to the standard start.
    pub fallbacks: usize,
    /// Starts on which plain PDAS cycled and Moreau-Yosida path following took over.
    pub globalized: usize,
    pub kkt_residual: f64,
    /// Largest pairwise `L²` distance between the states of all starts.
    pub spread: f64,
    /// `‖S(u*) - y*‖_∞`.
    pub state_consistency: f64,
}

struct Qp<'a> {
    grid: &'a Grid,
    spec: &'a ObjectiveSpec,
    psi: &'a [f64],
    lower: &'a [f64],
    upper: &'a [f64],
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct ActiveSets {
    state: Vec<bool>,
    /// -1 lower bound, 0 free, 1 upper bound.
    control: Vec<i8>,
}

struct QpIterate {
    y: Vec<f64>,
    u: Vec<f64>,
    q: Vec<f64>,
    m: Vec<f64>,
    zeta: Vec<f64>,
}

impl Qp<'_> {
    fn n(&self) -> usize {
        self.psi.len()
    }

    /// Unknowns interleaved as `(y_i, u_i, q_i)` keep the KKT matrix banded.
    fn solve_linear(&self, sets: &ActiveSets) -> Result<QpIterate> {
        let n = self.n();
        let st = self.grid.stencil();
        let b = self.grid.bandwidth();
        let (mu, alpha) = (self.spec.mu_j, self.spec.alpha);
        let (yd, g) = (self.spec.y_d.values(), self.spec.g.values());
        let mut a = BandMatrix::zeros(3 * n, 3 * b + 2, 3 * b + 2);
        let mut rhs = vec![0.0; 3 * n];
        for i in 0..n {
            let d = st.diag(i);
            for (j, v) in st.row(i) {
                a.set(3 * i, 3 * j, v);
            }
            a.set(3 * i, 3 * i + 1, -1.0);
            if sets.state[i] {
                a.set(3 * i + 1, 3 * i, d);
                rhs[3 * i + 1] = d * self.psi[i];
            } else {
                a.set(3 * i + 1, 3 * i, mu);
                for (j, v) in st.row(i) {
                    a.set(3 * i + 1, 3 * j + 2, v);
                }
                rhs[3 * i + 1] = mu * yd[i] - g[i];
            }
            match sets.control[i] {
                0 => {
                    a.set(3 * i + 2, 3 * i + 2, 1.0);
                    a.set(3 * i + 2, 3 * i + 1, -alpha);
                }
                s => {
                    a.set(3 * i + 2, 3 * i + 1, alpha);
                    rhs[3 * i + 2] = alpha * if s < 0 { self.lower[i] } else { self.upper[i] };
                }
            }
        }
        let x = a.factor()?.solve(&rhs);
        let mut it = QpIterate {
            y: (0..n).map(|i| x[3 * i]).collect(),
            u: (0..n).map(|i| x[3 * i + 1]).collect(),
            q: (0..n).map(|i| x[3 * i + 2]).collect(),
            m: vec![0.0; n],
            zeta: vec![0.0; n],
        };
        for i in 0..n {
            if sets.state[i] {
                it.y[i] = self.psi[i];
            }
            match sets.control[i] {
                -1 => it.u[i] = self.lower[i],
                1 => it.u[i] = self.upper[i],
                _ => {}
            }
        }
        let lq = self.grid.apply_neg_laplacian(&it.q);
        for i in 0..n {
            it.m[i] = if sets.state[i] { mu * (it.y[i] - yd[i]) + lq[i] + g[i] } else { 0.0 };
            it.zeta[i] = if sets.control[i] != 0 { alpha * it.u[i] - it.q[i] } else { 0.0 };
        }
        Ok(it)
    }

    fn update(&self, it: &QpIterate) -> ActiveSets {
        let st = self.grid.stencil();
        let alpha = self.spec.alpha;
        let n = self.n();
        ActiveSets {
            state: (0..n)
                .map(|i| {
                    let c = alpha * st.diag(i).powi(2) + self.spec.mu_j;
                    it.m[i] + c * (self.psi[i] - it.y[i]) > 0.0
                })
                .collect(),
            control: (0..n)
                .map(|i| {
                    // ζ + α(u_a - u) with ζ = αu - q on the candidate set
                    if alpha * self.lower[i] - it.q[i] > 0.0 {
                        -1
                    } else if alpha * self.upper[i] - it.q[i] < 0.0 {
                        1
                    } else {
                        0
                    }
                })
                .collect(),
        }
    }

    /// `Ok((iterate, iterations))` on convergence, otherwise the last iterate if there was one.
    /// A singular subproblem (state and control bound active on a whole stencil) ends the run.
    fn pdas(&self, mut sets: ActiveSets, max_iter: usize) -> Result<std::result::Result<(QpIterate, usize), Option<QpIterate>>> {
        let mut seen = HashSet::new();
        let mut last = None;
        let mut k = 0;
        loop {
            k += 1;
            let it = match self.solve_linear(&sets) {
                Ok(it) => it,
                Err(Error::Singular { .. }) => return Ok(Err(last)),
                Err(e) => return Err(e),
            };
            let next = self.update(&it);
            if next == sets {
                return Ok(Ok((it, k)));
            }
            seen.insert(sets);
            if k >= max_iter || seen.contains(&next) {
                return Ok(Err(Some(it)));
            }
            last = Some(it);
            sets = next;
        }
    }

    /// Minimizer of the quadratic piece of the penalized objective selected by `sets`:
    /// `γ/2 ‖(ψ - y)⁺‖²` on state nodes and `γ/2 dist(u, [u_a, u_b])²` on control nodes.
    fn solve_penalized(&self, sets: &ActiveSets, gamma: f64) -> Result<Vec<f64>> {
        let n = self.n();
        let st = self.grid.stencil();
        let b = self.grid.bandwidth();
        let (mu, alpha) = (self.spec.mu_j, self.spec.alpha);
        let (yd, g) = (self.spec.y_d.values(), self.spec.g.values());
        let mut a = BandMatrix::zeros(3 * n, 3 * b + 2, 3 * b + 2);
        let mut rhs = vec![0.0; 3 * n];
        for i in 0..n {
            for (j, v) in st.row(i) {
                a.set(3 * i, 3 * j, v);
                a.set(3 * i + 1, 3 * j + 2, v);
            }
            a.set(3 * i, 3 * i + 1, -1.0);
            let pen = if sets.state[i] { gamma } else { 0.0 };
            a.set(3 * i + 1, 3 * i, mu + pen);
            rhs[3 * i + 1] = mu * yd[i] - g[i] + pen * self.psi[i];
            a.set(3 * i + 2, 3 * i + 2, 1.0);
            match sets.control[i] {
                0 => a.set(3 * i + 2, 3 * i + 1, -alpha),
                s => {
                    a.set(3 * i + 2, 3 * i + 1, -alpha - gamma);
                    rhs[3 * i + 2] = -gamma * if s < 0 { self.lower[i] } else { self.upper[i] };
                }
            }
        }
        let x = a.factor()?.solve(&rhs);
        Ok((0..n).map(|i| x[3 * i]).collect())
    }

    fn penalty_sets(&self, y: &[f64], u: &[f64]) -> ActiveSets {
        ActiveSets {
            state: (0..self.n()).map(|i| y[i] < self.psi[i]).collect(),
            control: (0..self.n())
                .map(|i| if u[i] < self.lower[i] { -1 } else if u[i] > self.upper[i] { 1 } else { 0 })
                .collect(),
        }
    }

    /// Penalized objective and its weighted directional derivative along `d`.
    fn penalized(&self, y: &[f64], d: Option<&[f64]>, gamma: f64) -> (f64, f64) {
        let st = self.grid.stencil();
        let w = self.grid.weights();
        let (mu, alpha) = (self.spec.mu_j, self.spec.alpha);
        let (yd, g) = (self.spec.y_d.values(), self.spec.g.values());
        let u = st.apply(y);
        let ld = d.map(|d| st.apply(d));
        let (mut val, mut slope) = (0.0, 0.0);
        for i in 0..self.n() {
            let sv = (self.psi[i] - y[i]).max(0.0);
            let cv = (self.lower[i] - u[i]).max(0.0) - (u[i] - self.upper[i]).max(0.0);
            val += w[i]
                * (0.5 * mu * (y[i] - yd[i]).powi(2) + g[i] * y[i] + 0.5 * alpha * u[i] * u[i]
                    + 0.5 * gamma * (sv * sv + cv * cv));
            if let (Some(d), Some(ld)) = (d, &ld) {
                let gy = mu * (y[i] - yd[i]) + g[i] - gamma * sv;
                let q = alpha * u[i] - gamma * cv;
                slope += w[i] * (gy * d[i] + q * ld[i]);
            }
        }
        (val, slope)
    }

    /// Semismooth Newton with Armijo backtracking on the penalized objective,
    /// which is convex and piecewise quadratic, so the iteration converges from any `y`.
    fn newton_penalized(&self, y: &mut Vec<f64>, gamma: f64, max_iter: usize) -> Result<usize> {
        let st = self.grid.stencil();
        for k in 1..=max_iter {
            let sets = self.penalty_sets(y, &st.apply(y));
            let target = self.solve_penalized(&sets, gamma)?;
            let d: Vec<f64> = target.iter().zip(y.iter()).map(|(t, v)| t - v).collect();
            let (p0, slope) = self.penalized(y, Some(&d), gamma);
            if slope >= 0.0 || d.iter().all(|v| v.abs() <= f64::EPSILON * (1.0 + target.iter().fold(0.0_f64, |m, t| m.max(t.abs())))) {
                return Ok(k);
            }
            let mut step = 1.0;
            loop {
                let trial: Vec<f64> = y.iter().zip(&d).map(|(v, dv)| v + step * dv).collect();
                if self.penalized(&trial, None, gamma).0 <= p0 + 1e-4 * step * slope || step < 1e-12 {
                    *y = trial;
                    break;
                }
                step *= 0.5;
            }
            if step == 1.0 && self.penalty_sets(y, &st.apply(y)) == sets {
                return Ok(k);
            }
        }
        Ok(max_iter)
    }

    /// PDAS globalized by Moreau-Yosida path following: when the exact iteration
    /// cycles, minimize the penalized problem for growing `γ` and restart PDAS
    /// from the penalty's active sets until it converges.
    fn solve(&self, start: ActiveSets, max_iter: usize) -> Result<Option<(QpIterate, usize, bool)>> {
        let last = match self.pdas(start, max_iter)? {
            Ok((it, k)) => return Ok(Some((it, k, false))),
            Err(last) => last,
        };
        let st = self.grid.stencil();
        let scale = (0..self.n()).fold(0.0_f64, |m, i| m.max(self.spec.alpha * st.diag(i).powi(2))) + self.spec.mu_j;
        let mut y = last.map_or_else(|| self.psi.to_vec(), |it| it.y);
        let mut total = max_iter;
        for e in -2..=14 {
            let gamma = scale * 10f64.powi(e);
            total += self.newton_penalized(&mut y, gamma, max_iter)?;
            let sets = self.penalty_sets(&y, &st.apply(&y));
            match self.pdas(sets, 20)? {
                Ok((it, k)) => return Ok(Some((it, total + k, true))),
                Err(_) => total += 20,
            }
        }
        Ok(None)
    }

    fn kkt_residual(&self, it: &QpIterate) -> f64 {
        let st = self.grid.stencil();
        let (mu, alpha) = (self.spec.mu_j, self.spec.alpha);
        let (yd, g) = (self.spec.y_d.values(), self.spec.g.values());
        let ly = st.apply(&it.y);
        let aly = st.apply_abs(&it.y);
        let lq = st.apply(&it.q);
        let alq = st.apply_abs(&it.q);
        let mut r: f64 = 0.0;
        for i in 0..self.n() {
            r = r.max((ly[i] - it.u[i]).abs() / (aly[i] + it.u[i].abs()).max(1.0));
            let grad = mu * (it.y[i] - yd[i]) + lq[i] + g[i];
            let scale = (mu * (it.y[i].abs() + yd[i].abs()) + alq[i] + g[i].abs()).max(1.0);
            let m = grad.max(0.0);
            r = r.max((grad - m).abs() / scale);
            let slack = it.y[i] - self.psi[i];
            r = r.max(-slack).max((m * slack).abs() / scale);
            let zeta = alpha * it.u[i] - it.q[i];
            let cscale = (alpha * it.u[i].abs() + it.q[i].abs()).max(1.0);
            let (dl, du) = (it.u[i] - self.lower[i], self.upper[i] - it.u[i]);
            r = r.max(-dl).max(-du);
            // ζ >= 0 only at the lower bound, ζ <= 0 only at the upper bound
            let zeta_violation = if zeta > 0.0 { zeta * dl.min(1.0) } else { -zeta * du.min(1.0) };
            r = r.max(zeta_violation.abs() / cscale);
        }
        r
    }
}

/// Minimize `J(y, -Δ_h y)` over `{y >= ψ, u_a <= -Δ_h y <= u_b}`.
/// Every local solution of the control problem with a subharmonic obstacle
/// and convex `j` is a solution of this QP and vice versa.
pub fn solve_subharmonic(
    spec: &ObjectiveSpec,
    psi: &Obstacle,
    bounds: &ControlBounds,
    opts: &QpOptions,
) -> Result<(Solution, QpDiagnostics)> {
    let grid = psi.grid();
    if spec.grid() != grid || bounds.lower.len() != grid.len() {
        return Err(Error::GridMismatch("objective, obstacle and bounds".into()));
    }
    if !classify_subharmonic(psi) {
        return Err(Error::Precondition("the obstacle is not subharmonic".into()));
    }
    if spec.mu_j < 0.0 {
        return Err(Error::Precondition("j is not convex".into()));
    }
    let qp = Qp { grid, spec, psi: psi.values().values(), lower: &bounds.lower, upper: &bounds.upper };
    let n = grid.len();
    let standard = ActiveSets { state: vec![false; n], control: vec![0; n] };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![standard.clone()];
    for _ in 0..opts.random_starts {
        starts.push(ActiveSets {
            state: (0..n).map(|_| rng.gen_bool(0.5)).collect(),
            control: (0..n)
                .map(|i| match rng.gen_range(0..3) {
                    0 if bounds.lower[i].is_finite() => -1,
                    1 if bounds.upper[i].is_finite() => 1,
                    _ => 0,
                })
                .collect(),
        });
    }
    let max_iter = opts.max_iter.max(1);
    let runs: Vec<Result<Option<(QpIterate, usize, bool)>>> =
        starts.into_par_iter().map(|s| qp.solve(s, max_iter).or(Ok(None))).collect();
    let mut results = Vec::new();
    let (mut fallbacks, mut globalized) = (0, 0);
    for (k, r) in runs.into_iter().enumerate() {
        match r? {
            Some((it, iters, path)) => {
                globalized += usize::from(path);
                results.push((it, iters));
            }
            None if k == 0 => {
                return Err(Error::NonConvergence { what: "active-set QP solver", iterations: max_iter })
            }
            None => fallbacks += 1,
        }
    }
    let mut spread: f64 = 0.0;
    for a in 0..results.len() {
        for b in a + 1..results.len() {
            let d: Vec<f64> = results[a].0.y.iter().zip(&results[b].0.y).map(|(x, y)| x - y).collect();
            spread = spread.max(crate::grid::weighted_dot(grid.weights(), &d, &d).sqrt());
        }
    }
    let iterations = results.iter().map(|r| r.1).collect();
    let (best, _) = results.swap_remove(0);
    let kkt = qp.kkt_residual(&best);
    let u = GridFn::from_values(grid, best.u)?;
    let y = GridFn::from_values(grid, best.y)?;
    let state = solve_obstacle(&u, psi)?;
    let consistency = (&state.y - &y).norm_linf();
    let j = objective(spec, &y, &u)?;
    Ok((
        Solution { u, y, objective: j },
        QpDiagnostics { iterations, fallbacks, globalized, kkt_residual: kkt, spread, state_consistency: consistency },
    ))
}

#[derive(Clone, Debug)]
pub struct DescentOptions {
    pub max_iter: usize,
    pub sigma: f64,
    pub backtrack: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub tol_opt: f64,
    /// Random cone directions added to the Bouligand test.
    pub sample_directions: usize,
    pub seed: u64,
    /// Try local truncations of the control once first-order stationarity is reached.
    pub escape: bool,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            sigma: 1e-4,
            backtrack: 0.5,
            initial_step: 1.0,
            min_step: 1e-14,
            tol_opt: TOL_OPT,
            sample_directions: 8,
            seed: 0,
            escape: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub step: f64,
    /// `‖P(u - ∇) - u‖`, the projected-gradient stationarity measure.
    pub pg_norm: f64,
    /// Sampled Bouligand gap when it was evaluated at this iterate.
    pub gap: Option<f64>,
    pub escaped: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DescentDiagnostics {
    pub converged: bool,
    pub line_search_failed: bool,
    pub iterations: usize,
    pub escapes: usize,
    pub final_gap: Option<BouligandReport>,
    pub sigma: f64,
    pub backtrack: f64,
    pub initial_step: f64,
    pub trace: Vec<TraceRow>,
}

/// Adjoint of the differentiable branch: `-Δ_h p = j'(y)` away from the
/// masked nodes, `p = 0` on them.
fn branch_adjoint(sol: &ObstacleSolution, jp: &GridFn, mask_biactive: bool) -> Result<GridFn> {
    let grid = sol.grid();
    let mask: Vec<bool> = sol
        .class
        .iter()
        .map(|c| match c {
            NodeClass::StrictlyActive => true,
            NodeClass::Biactive => mask_biactive,
            NodeClass::Inactive => false,
        })
        .collect();
    let rhs: Vec<f64> = jp.values().iter().zip(&mask).map(|(&v, &m)| if m { 0.0 } else { v }).collect();
    let p = grid.band_matrix(Some(&mask)).factor()?.solve(&rhs);
    GridFn::from_values(grid, p)
}

/// Steepest descent of the smooth branch restricted to directions along which
/// the linearized state stays above the obstacle: `min (g,h) + ½‖h‖²` subject
/// to `slack_i + (S₀ h)_i >= 0` on a working set of nodes, where `S₀` solves
/// `-Δ_h δ = h` with `δ = 0` on strictly active nodes. The working set starts
/// with the biactive nodes, on which `S'(u; h) = S₀ h` and the directional
/// derivative is exactly `(g, h)`, and grows by every node the current
/// direction would push through the obstacle, so that full steps are not cut
/// off by contact. The dual is a small nonnegative QP with one multiplier per
/// working node.
fn contact_projected_direction(sol: &ObstacleSolution, grad: &GridFn) -> Result<Option<GridFn>> {
    const MAX_WORKING: usize = 256;
    let grid = sol.grid();
    let n = grid.len();
    let slack = sol.slack.values();
    let mask: Vec<bool> = sol.class.iter().map(|c| *c == NodeClass::StrictlyActive).collect();
    let lu = grid.band_matrix(Some(&mask)).factor()?;
    let s0 = |h: &[f64]| {
        let rhs: Vec<f64> = h.iter().zip(&mask).map(|(&v, &m)| if m { 0.0 } else { v }).collect();
        lu.solve(&rhs)
    };
    let w = grid.weights();
    let sg = s0(grad.values());
    let mut working: Vec<usize> = (0..n).filter(|&i| sol.class[i] == NodeClass::Biactive).collect();
    if working.is_empty() || working.len() > MAX_WORKING {
        return Ok(None);
    }
    // Riesz representers of h ↦ (S₀ h)_k and their images under S₀
    let mut reps: Vec<Vec<f64>> = Vec::new();
    let mut images: Vec<Vec<f64>> = Vec::new();
    let nu = loop {
        for &k in &working[reps.len()..] {
            let mut e = vec![0.0; n];
            e[k] = 1.0 / w[k];
            let r = s0(&e);
            images.push(s0(&r));
            reps.push(r);
        }
        // m[k][i] = (S₀ r_k)_i is symmetric positive definite
        let m: Vec<Vec<f64>> = images.iter().map(|img| working.iter().map(|&i| img[i]).collect()).collect();
        let q: Vec<f64> = working.iter().map(|&i| slack[i] - sg[i]).collect();
        let nu = nonneg_qp(&m, &q)?;
        // δ = S₀ h = -S₀ g + Σ ν_k S₀ r_k
        let mut delta: Vec<f64> = sg.iter().map(|v| -v).collect();
        for (img, &v) in images.iter().zip(&nu) {
            for (d, x) in delta.iter_mut().zip(img) {
                *d += v * x;
            }
        }
        let blocked: Vec<usize> = (0..n)
            .filter(|&i| !mask[i] && !working.contains(&i) && slack[i] + delta[i] < 0.0)
            .collect();
        if blocked.is_empty() || working.len() + blocked.len() > MAX_WORKING {
            break nu;
        }
        working.extend(blocked);
    };
    let mut h: Vec<f64> = grad.values().iter().map(|v| -v).collect();
    for (r, &v) in reps.iter().zip(&nu) {
        for (hi, ri) in h.iter_mut().zip(r) {
            *hi += v * ri;
        }
    }
    Ok(Some(GridFn::from_values(grid, h)?))
}

struct Point {
    u: GridFn,
    state: ObstacleSolution,
    j: f64,
}

fn evaluate(spec: &ObjectiveSpec, psi: &Obstacle, u: GridFn) -> Result<Point> {
    let state = solve_obstacle(&u, psi)?;
    let j = objective(spec, &state.y, &u)?;
    Ok(Point { u, state, j })
}

fn normalized(h: GridFn) -> Option<GridFn> {
    let n = h.norm_l2();
    (n > 0.0).then(|| (1.0 / n) * &h)
}

/// Candidate controls that switch the control off, or push it down, on small
/// balls around the nodes closest to contact. Switching off is also combined
/// with a small downward shift elsewhere, which lets the state settle onto the
/// obstacle inside the ball.
fn escape_candidates(pt: &Point, bounds: &ControlBounds) -> Vec<GridFn> {
    let grid = pt.u.grid();
    let slack = pt.state.slack.values();
    let mut order: Vec<usize> = (0..slack.len()).collect();
    order.sort_by(|&a, &b| slack[a].total_cmp(&slack[b]));
    let scale = pt.u.norm_linf().max(1.0);
    let mut out = Vec::new();
    for &k in order.iter().take(8) {
        let centre = grid.point(k).to_vec();
        let mut r = grid.h();
        while r <= 0.25 {
            let inside = |p: &[f64]| p.iter().zip(&centre).map(|(a, b)| (a - b).powi(2)).sum::<f64>() < r * r;
            let mut cut = pt.u.clone();
            let mut shift = pt.u.clone();
            for i in 0..grid.len() {
                if inside(grid.point(i)) {
                    cut.values_mut()[i] = 0.0;
                    shift.values_mut()[i] -= scale;
                }
            }
            out.push(bounds.project(&cut));
            out.push(bounds.project(&shift));
            for e in 0..=8 {
                let kappa = scale * 10f64.powf(-3.0 + 0.25 * e as f64);
                let lowered = GridFn::from_fn(grid, |p| if inside(p) { 0.0 } else { -kappa });
                out.push(bounds.project(&(&cut + &lowered)));
            }
            r *= 2.0;
        }
    }
    out
}

/// Projected descent from an admissible `u0`.
pub fn solve_general(
    spec: &ObjectiveSpec,
    psi: &Obstacle,
    bounds: &ControlBounds,
    u0: &GridFn,
    opts: &DescentOptions,
) -> Result<(Solution, DescentDiagnostics)> {
    bounds.check_admissible(u0)?;
    let grid = psi.grid().clone();
    let alpha = spec.alpha;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pt = evaluate(spec, psi, u0.clone())?;
    let mut diag = DescentDiagnostics {
        converged: false,
        line_search_failed: false,
        iterations: 0,
        escapes: 0,
        final_gap: None,
        sigma: opts.sigma,
        backtrack: opts.backtrack,
        initial_step: opts.initial_step,
        trace: Vec::new(),
    };
    let mut escaped_here = false;
    for iter in 0..opts.max_iter {
        diag.iterations = iter;
        let jp = spec.j_prime(&pt.state.y);
        let p = branch_adjoint(&pt.state, &jp, false)?;
        let grad = &p + &(alpha * &pt.u);
        let target = bounds.project(&(&pt.u - &grad));
        let d = &target - &pt.u;
        let pg_norm = d.norm_l2();
        let mut row = TraceRow { iter, objective: pt.j, step: 0.0, pg_norm, gap: None, escaped: false };

        if pg_norm > opts.tol_opt {
            let slope = grad.dot(&d);
            let mut s = opts.initial_step;
            let mut accepted = None;
            while s >= opts.min_step {
                let cand = evaluate(spec, psi, bounds.project(&(&pt.u - &(s * &grad))))?;
                let du = &cand.u - &pt.u;
                if cand.j <= pt.j + opts.sigma * grad.dot(&du).min(s * slope) && cand.j < pt.j {
                    accepted = Some(cand);
                    break;
                }
                s *= opts.backtrack;
            }
            if accepted.is_none() {
                // the step was cut off by contact; follow the cone-projected direction instead
                if let Some(h) = contact_projected_direction(&pt.state, &grad)? {
                    let mut t = opts.initial_step;
                    while t >= opts.min_step {
                        let cand = evaluate(spec, psi, bounds.project(&(&pt.u + &(t * &h))))?;
                        let du = &cand.u - &pt.u;
                        if cand.j <= pt.j + opts.sigma * grad.dot(&du) && cand.j < pt.j {
                            accepted = Some(cand);
                            s = t;
                            break;
                        }
                        t *= opts.backtrack;
                    }
                }
            }
            if let Some(c) = accepted {
                row.step = s;
                diag.trace.push(row);
                pt = c;
                escaped_here = false;
                continue;
            }
        }

        // Stopping test, or the surrogate gradient failed to give descent.
        let mut dirs: Vec<GridFn> = Vec::new();
        dirs.extend(normalized(d.clone()));
        let p_act = branch_adjoint(&pt.state, &jp, true)?;
        let g_act = &p_act + &(alpha * &pt.u);
        dirs.extend(normalized(project_to_cone(bounds, &pt.u, &g_act.map(|v| -v))));
        if let Some(h) = contact_projected_direction(&pt.state, &grad)? {
            dirs.extend(normalized(project_to_cone(bounds, &pt.u, &h)));
        }
        for _ in 0..opts.sample_directions {
            let h = GridFn::from_values(&grid, (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
            dirs.extend(normalized(project_to_cone(bounds, &pt.u, &h)));
        }
        let report = bouligand_gap_at(spec, &pt.state, &pt.u, bounds, &dirs)?;
        row.gap = Some(report.min);
        if report.min < -opts.tol_opt {
            let k = report.values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|x| x.0).unwrap();
            let h = &dirs[k];
            let mut s = opts.initial_step;
            let mut accepted = None;
            while s >= opts.min_step {
                let cand = evaluate(spec, psi, bounds.project(&(&pt.u + &(s * h))))?;
                if cand.j <= pt.j + opts.sigma * s * report.min && cand.j < pt.j {
                    accepted = Some(cand);
                    break;
                }
                s *= opts.backtrack;
            }
            diag.final_gap = Some(report);
            match accepted {
                Some(c) => {
                    row.step = s;
                    diag.trace.push(row);
                    pt = c;
                    escaped_here = false;
                    continue;
                }
                None => {
                    diag.line_search_failed = true;
                    diag.trace.push(row);
                    break;
                }
            }
        }
        diag.final_gap = Some(report);
        if opts.escape && !escaped_here {
            escaped_here = true;
            let cands = escape_candidates(&pt, bounds);
            let evals: Vec<Result<Point>> = cands.into_par_iter().map(|u| evaluate(spec, psi, u)).collect();
            let mut best: Option<Point> = None;
            for e in evals {
                let e = e?;
                if best.as_ref().is_none_or(|b| e.j < b.j) {
                    best = Some(e);
                }
            }
            if let Some(b) = best.filter(|b| b.j < pt.j - opts.tol_opt) {
                row.escaped = true;
                diag.escapes += 1;
                diag.trace.push(row);
                pt = b;
                continue;
            }
        }
        diag.converged = true;
        diag.trace.push(row);
        break;
    }
    let Point { u, state, j } = pt;
    Ok((Solution { u, y: state.y, objective: j }, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::poisson_solve;

    #[test]
    fn unconstrained_tracking_matches_linear_solve() {
        let g = Grid::interval(31);
        let yd = poisson_solve(&GridFn::constant(&g, 1.0));
        let alpha = 1e-3;
        let spec = ObjectiveSpec::new(1.0, yd.clone(), GridFn::zeros(&g), alpha).unwrap();
        let psi = Obstacle::constant(&g, -10.0);
        let (sol, d) = solve_subharmonic(&spec, &psi, &ControlBounds::unbounded(&g), &QpOptions::default()).unwrap();
        // (mu + α L²) y = mu y_D
        let l2y = g.apply_neg_laplacian(&g.apply_neg_laplacian(sol.y.values()));
        let r = (0..g.len()).map(|i| (sol.y.values()[i] + alpha * l2y[i] - yd.values()[i]).abs()).fold(0.0, f64::max);
        assert!(r < 1e-9, "residual {r}");
        assert!(d.kkt_residual < 1e-9);
    }

    #[test]
    fn non_subharmonic_obstacle_is_rejected() {
        let g = Grid::interval(15);
        let spec = ObjectiveSpec::linear(GridFn::zeros(&g), 1.0).unwrap();
        let psi = Obstacle::from_fn(&g, |p| p[0] * (1.0 - p[0]));
        assert!(solve_subharmonic(&spec, &psi, &ControlBounds::unbounded(&g), &QpOptions::default()).is_err());
    }
}

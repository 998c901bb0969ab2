//! Objective, strong-stationarity bundles and first-order checks.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFn};
use crate::linalg::BandMatrix;
use crate::sensitivity::directional_derivative;
use crate::tol::TOL_STAT;
use crate::vi::{solve_obstacle, ControlBounds, NodeClass, Obstacle, ObstacleSolution};

/// `J(y, u) = (mu_j/2) ‖y - y_D‖² + (g, y) + (α/2) ‖u‖²`.
#[derive(Clone, Debug)]
pub struct ObjectiveSpec {
    pub mu_j: f64,
    pub y_d: GridFn,
    pub g: GridFn,
    pub alpha: f64,
}

impl ObjectiveSpec {
    pub fn new(mu_j: f64, y_d: GridFn, g: GridFn, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(mu_j >= 0.0) {
            return Err(Error::InvalidParameter(format!("need alpha > 0 and mu_j >= 0, got {alpha}, {mu_j}")));
        }
        if y_d.grid() != g.grid() {
            return Err(Error::GridMismatch("y_D and g".into()));
        }
        Ok(Self { mu_j, y_d, g, alpha })
    }

    /// Linear `j(y) = (g, y)`.
    pub fn linear(g: GridFn, alpha: f64) -> Result<Self> {
        let y_d = GridFn::zeros(g.grid());
        Self::new(0.0, y_d, g, alpha)
    }

    pub fn grid(&self) -> &Grid {
        self.g.grid()
    }

    pub fn j(&self, y: &GridFn) -> f64 {
        let d = y - &self.y_d;
        0.5 * self.mu_j * d.dot(&d) + self.g.dot(y)
    }

    /// `j'(y)` as an `L²` density.
    pub fn j_prime(&self, y: &GridFn) -> GridFn {
        y.zip_map(&self.y_d, |a, b| self.mu_j * (a - b)) + self.g.clone()
    }
}

pub fn objective(spec: &ObjectiveSpec, y: &GridFn, u: &GridFn) -> Result<f64> {
    if y.grid() != spec.grid() || u.grid() != spec.grid() {
        return Err(Error::GridMismatch("objective arguments".into()));
    }
    Ok(spec.j(y) + 0.5 * spec.alpha * u.dot(u))
}

/// `J(y0 + dy, u0 + du) - J(y0, u0)` evaluated from the increments, so that
/// tiny gaps are not lost to cancellation.
pub fn objective_delta(spec: &ObjectiveSpec, y0: &GridFn, dy: &GridFn, u0: &GridFn, du: &GridFn) -> f64 {
    let mu = spec.mu_j;
    let state = if mu != 0.0 {
        let t = dy.zip_map(&(y0 - &spec.y_d), |d, e| d + 2.0 * e);
        0.5 * mu * dy.dot(&t)
    } else {
        0.0
    };
    let ctrl = du.zip_map(u0, |d, u| d + 2.0 * u);
    state + spec.g.dot(dy) + 0.5 * spec.alpha * du.dot(&ctrl)
}

/// `(ū, ȳ, λ̄, p̄, ν̄, η̄)` with everything needed to re-evaluate it.
#[derive(Clone, Debug)]
pub struct StationarityBundle {
    pub objective: ObjectiveSpec,
    pub obstacle: Obstacle,
    pub bounds: ControlBounds,
    pub u_bar: GridFn,
    /// `ȳ`, `λ̄` and the contact classification.
    pub state: ObstacleSolution,
    pub p_bar: GridFn,
    pub nu_bar: GridFn,
    pub eta_bar: GridFn,
}

impl StationarityBundle {
    pub fn y_bar(&self) -> &GridFn {
        &self.state.y
    }

    pub fn lambda_bar(&self) -> &GridFn {
        &self.state.lambda
    }

    pub fn grid(&self) -> &Grid {
        self.u_bar.grid()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BoundState {
    Free,
    Lower,
    Upper,
    Pinned,
}

fn bound_state(bounds: &ControlBounds, u: &GridFn, i: usize) -> BoundState {
    match (bounds.at_lower(u, i), bounds.at_upper(u, i)) {
        (false, false) => BoundState::Free,
        (true, false) => BoundState::Lower,
        (false, true) => BoundState::Upper,
        (true, true) => BoundState::Pinned,
    }
}

/// Build the bundle at `ū`.
///
/// On nodes where the control is free, `p̄ = -α ū`. Where a bound is active the
/// adjoint equation `L p̄ = j'(ȳ)` is solved instead (with `p̄ = 0` on strictly
/// active nodes) and `ν̄ = α ū + p̄` absorbs the control equation; its sign is
/// then checked against the bound that is active.
pub fn assemble_bundle(
    spec: &ObjectiveSpec,
    u_bar: &GridFn,
    psi: &Obstacle,
    bounds: &ControlBounds,
) -> Result<StationarityBundle> {
    let grid = u_bar.grid().clone();
    if spec.grid() != &grid || psi.grid() != &grid || bounds.lower.len() != grid.len() {
        return Err(Error::GridMismatch("bundle inputs".into()));
    }
    bounds.check_admissible(u_bar)?;
    let state = solve_obstacle(u_bar, psi)?;
    let jp = spec.j_prime(&state.y);
    let alpha = spec.alpha;
    let n = grid.len();
    let bs: Vec<BoundState> = (0..n).map(|i| bound_state(bounds, u_bar, i)).collect();
    let mut p: Vec<f64> = u_bar.values().iter().map(|u| -alpha * u).collect();
    if bs.iter().any(|b| *b != BoundState::Free) {
        let st = grid.stencil();
        let known: Vec<bool> = (0..n)
            .map(|i| bs[i] == BoundState::Free || state.class[i] == NodeClass::StrictlyActive)
            .collect();
        let mut rhs = jp.values().to_vec();
        for i in 0..n {
            if known[i] {
                if bs[i] != BoundState::Free {
                    p[i] = 0.0;
                }
                rhs[i] = p[i] * st.diag(i);
            }
        }
        let m: BandMatrix = grid.band_matrix(Some(&known));
        let sol = m.factor()?.solve(&rhs);
        for i in 0..n {
            if !known[i] {
                p[i] = sol[i];
            }
        }
    }
    let mut nu = vec![0.0; n];
    for i in 0..n {
        if bs[i] == BoundState::Free {
            continue;
        }
        nu[i] = alpha * u_bar.values()[i] + p[i];
        let violation = match bs[i] {
            BoundState::Lower => -nu[i],
            BoundState::Upper => nu[i],
            _ => 0.0,
        };
        if violation > TOL_STAT {
            return Err(Error::NotStronglyStationary { node: i, violation });
        }
    }
    let lp = grid.apply_neg_laplacian(&p);
    let eta: Vec<f64> =
        (0..n).map(|i| if state.is_active(i) { jp.values()[i] - lp[i] } else { 0.0 }).collect();
    Ok(StationarityBundle {
        objective: spec.clone(),
        obstacle: psi.clone(),
        bounds: bounds.clone(),
        u_bar: u_bar.clone(),
        state,
        p_bar: GridFn::from_values(&grid, p)?,
        nu_bar: GridFn::from_values(&grid, nu)?,
        eta_bar: GridFn::from_values(&grid, eta)?,
    })
}

/// Maximal violations of the five lines of the strong-stationarity system.
///
/// The two equations are measured componentwise relative to
/// `max(1, magnitude of their terms)`; the cone conditions are absolute.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct StationarityResiduals {
    /// `-Δ_h p̄ + η̄ - j'(ȳ) = 0`.
    pub adjoint: f64,
    /// `α ū + p̄ - ν̄ = 0`.
    pub control: f64,
    /// `p̄ = 0` on strictly active, `p̄ >= 0` on biactive nodes.
    pub adjoint_cone: f64,
    /// `η̄ = 0` on inactive, `η̄ >= 0` on biactive nodes.
    pub multiplier_cone: f64,
    /// Sign of `ν̄` against the active control bound.
    pub control_cone: f64,
}

impl StationarityResiduals {
    pub fn max(&self) -> f64 {
        [self.adjoint, self.control, self.adjoint_cone, self.multiplier_cone, self.control_cone]
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn is_strongly_stationary(&self) -> bool {
        self.max() <= TOL_STAT
    }
}

pub fn check_strong_stationarity(b: &StationarityBundle) -> StationarityResiduals {
    let grid = b.grid();
    let st = grid.stencil();
    let n = grid.len();
    let jp = b.objective.j_prime(b.y_bar());
    let (p, eta, nu, u) = (b.p_bar.values(), b.eta_bar.values(), b.nu_bar.values(), b.u_bar.values());
    let lp = grid.apply_neg_laplacian(p);
    let lp_abs = st.apply_abs(p);
    let alpha = b.objective.alpha;
    let mut r = StationarityResiduals {
        adjoint: 0.0,
        control: 0.0,
        adjoint_cone: 0.0,
        multiplier_cone: 0.0,
        control_cone: 0.0,
    };
    for i in 0..n {
        let j = jp.values()[i];
        let e1 = (lp[i] + eta[i] - j).abs() / (lp_abs[i] + eta[i].abs() + j.abs()).max(1.0);
        r.adjoint = r.adjoint.max(e1);
        let e2 = (alpha * u[i] + p[i] - nu[i]).abs() / (alpha * u[i].abs() + p[i].abs() + nu[i].abs()).max(1.0);
        r.control = r.control.max(e2);
        match b.state.class[i] {
            NodeClass::StrictlyActive => r.adjoint_cone = r.adjoint_cone.max(p[i].abs()),
            NodeClass::Biactive => {
                r.adjoint_cone = r.adjoint_cone.max(-p[i]);
                r.multiplier_cone = r.multiplier_cone.max(-eta[i]);
            }
            NodeClass::Inactive => r.multiplier_cone = r.multiplier_cone.max(eta[i].abs()),
        }
        let c = match bound_state(&b.bounds, &b.u_bar, i) {
            BoundState::Free => nu[i].abs(),
            BoundState::Lower => -nu[i],
            BoundState::Upper => nu[i],
            BoundState::Pinned => 0.0,
        };
        r.control_cone = r.control_cone.max(c);
    }
    r
}

/// Whether `h` lies in the tangent cone of the control bounds at `u`.
pub fn check_in_cone(bounds: &ControlBounds, u: &GridFn, h: &GridFn) -> Result<()> {
    for (i, &hi) in h.values().iter().enumerate() {
        let bad = match bound_state(bounds, u, i) {
            BoundState::Free => false,
            BoundState::Lower => hi < 0.0,
            BoundState::Upper => hi > 0.0,
            BoundState::Pinned => hi != 0.0,
        };
        if bad {
            return Err(Error::DirectionOutsideCone { node: i });
        }
    }
    Ok(())
}

/// Project a direction onto the tangent cone of the control bounds at `u`.
pub fn project_to_cone(bounds: &ControlBounds, u: &GridFn, h: &GridFn) -> GridFn {
    let mut out = h.clone();
    for (i, v) in out.values_mut().iter_mut().enumerate() {
        *v = match bound_state(bounds, u, i) {
            BoundState::Free => *v,
            BoundState::Lower => v.max(0.0),
            BoundState::Upper => v.min(0.0),
            BoundState::Pinned => 0.0,
        };
    }
    out
}

/// `⟨j'(ȳ), S'(ū; h)⟩ + α (ū, h)` and the derivative `S'(ū; h)`.
pub fn first_order_value(
    spec: &ObjectiveSpec,
    state: &ObstacleSolution,
    u_bar: &GridFn,
    h: &GridFn,
) -> Result<(f64, GridFn)> {
    let delta = directional_derivative(state, u_bar, h)?;
    let v = spec.j_prime(&state.y).dot(&delta) + spec.alpha * u_bar.dot(h);
    Ok((v, delta))
}

#[derive(Clone, Debug, Serialize)]
pub struct BouligandReport {
    pub values: Vec<f64>,
    /// `+inf` when no directions were given.
    pub min: f64,
}

/// Sampled Bouligand stationarity test at `ū`.
pub fn bouligand_gap(
    spec: &ObjectiveSpec,
    u_bar: &GridFn,
    psi: &Obstacle,
    bounds: &ControlBounds,
    directions: &[GridFn],
) -> Result<BouligandReport> {
    let state = solve_obstacle(u_bar, psi)?;
    bouligand_gap_at(spec, &state, u_bar, bounds, directions)
}

pub(crate) fn bouligand_gap_at(
    spec: &ObjectiveSpec,
    state: &ObstacleSolution,
    u_bar: &GridFn,
    bounds: &ControlBounds,
    directions: &[GridFn],
) -> Result<BouligandReport> {
    let mut values = Vec::with_capacity(directions.len());
    for h in directions {
        check_in_cone(bounds, u_bar, h)?;
        values.push(first_order_value(spec, state, u_bar, h)?.0);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(BouligandReport { values, min })
}

/// `(J(y,u) - J(ȳ,ū), ⟨p̄, λ-λ̄⟩ + ⟨η̄, y-ȳ⟩ + (ν̄, u-ū) + (mu_j/2)‖y-ȳ‖² + (α/2)‖u-ū‖²)`.
pub fn taylor_gap_identity(b: &StationarityBundle, u: &GridFn) -> Result<(f64, f64)> {
    let sol = solve_obstacle(u, &b.obstacle)?;
    let dy = &sol.slack - &b.state.slack;
    let du = u - &b.u_bar;
    let spec = &b.objective;
    let lhs = objective_delta(spec, b.y_bar(), &dy, &b.u_bar, &du);
    let dl = &sol.lambda - b.lambda_bar();
    let rhs = b.p_bar.dot(&dl)
        + b.eta_bar.dot(&dy)
        + b.nu_bar.dot(&du)
        + 0.5 * spec.mu_j * dy.dot(&dy)
        + 0.5 * spec.alpha * du.dot(&du);
    Ok((lhs, rhs))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct AuxResiduals {
    /// `⟨η̄, min(0, y - ȳ)⟩`.
    pub eta_min: f64,
    /// `⟨λ̄, min(0, y - ȳ)⟩`.
    pub lambda_min: f64,
    /// Difference of the two sides of the β-identity.
    pub beta_identity: f64,
    /// Sum of the magnitudes of all terms involved; residuals are judged against it.
    pub scale: f64,
}

impl AuxResiduals {
    pub fn max_abs(&self) -> f64 {
        self.eta_min.abs().max(self.lambda_min.abs()).max(self.beta_identity.abs())
    }
}

/// The identities that turn the Taylor expansion into second-order conditions:
/// `⟨η̄, min(0, y-ȳ)⟩ = 0`, `⟨λ̄, min(0, y-ȳ)⟩ = 0` and
/// `⟨p̄, λ-λ̄⟩ + ⟨η̄, y-ȳ⟩ = (p̄ + β(ȳ-ψ), λ) + ⟨η̄ + βλ̄, max(0, y-ȳ)⟩ + β(y-ȳ, λ-λ̄)`.
pub fn aux_identities_check(b: &StationarityBundle, u: &GridFn, beta: f64) -> Result<AuxResiduals> {
    let sol = solve_obstacle(u, &b.obstacle)?;
    let dy = &sol.slack - &b.state.slack;
    let neg = dy.map(|v| v.min(0.0));
    let pos = dy.map(|v| v.max(0.0));
    let dl = &sol.lambda - b.lambda_bar();
    let eta_min = b.eta_bar.dot(&neg);
    let lambda_min = b.lambda_bar().dot(&neg);
    let terms_lhs = [b.p_bar.dot(&dl), b.eta_bar.dot(&dy)];
    let shifted_p = &b.p_bar + &(beta * &b.state.slack);
    let shifted_eta = &b.eta_bar + &(beta * b.lambda_bar());
    let terms_rhs = [shifted_p.dot(&sol.lambda), shifted_eta.dot(&pos), beta * dy.dot(&dl)];
    let lhs: f64 = terms_lhs.iter().sum();
    let rhs: f64 = terms_rhs.iter().sum();
    let scale = terms_lhs.iter().chain(&terms_rhs).map(|t| t.abs()).sum::<f64>()
        + b.eta_bar.map(f64::abs).dot(&neg.map(f64::abs))
        + b.lambda_bar().map(f64::abs).dot(&neg.map(f64::abs));
    Ok(AuxResiduals { eta_min, lambda_min, beta_identity: lhs - rhs, scale })
}

/// Tolerance-aware bound check for a single node, exposed for samplers.
pub(crate) fn cone_sign(bounds: &ControlBounds, u: &GridFn, i: usize) -> Option<f64> {
    match bound_state(bounds, u, i) {
        BoundState::Free => None,
        BoundState::Lower => Some(1.0),
        BoundState::Upper => Some(-1.0),
        BoundState::Pinned => Some(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unconstrained_problem(n: usize) -> (ObjectiveSpec, GridFn, Obstacle, ControlBounds) {
        let g = Grid::interval(n);
        let c = 1.0 / 16.0;
        let ybar = |x: f64| x.powi(4) / 12.0 - x.powi(3) / 6.0 + x / 12.0;
        let spec = ObjectiveSpec::linear(GridFn::constant(&g, -2.0), 1.0).unwrap();
        let u = GridFn::from_fn(&g, |p| p[0] * (1.0 - p[0]));
        let psi = Obstacle::from_fn(&g, |p| ybar(p[0]) - c * p[0] * p[0]);
        (spec, u, psi, ControlBounds::unbounded(&g))
    }

    #[test]
    fn zero_bundle_has_zero_residuals() {
        let g = Grid::interval(9);
        let spec = ObjectiveSpec::linear(GridFn::zeros(&g), 1.0).unwrap();
        let b = assemble_bundle(&spec, &GridFn::zeros(&g), &Obstacle::constant(&g, -1.0), &ControlBounds::unbounded(&g))
            .unwrap();
        assert_eq!(check_strong_stationarity(&b).max(), 0.0);
    }

    #[test]
    fn reassembly_is_idempotent() {
        let (spec, u, psi, bounds) = unconstrained_problem(63);
        let a = assemble_bundle(&spec, &u, &psi, &bounds).unwrap();
        let b = assemble_bundle(&spec, &a.u_bar, &psi, &bounds).unwrap();
        assert_eq!(a.p_bar, b.p_bar);
        assert_eq!(a.eta_bar, b.eta_bar);
        assert_eq!(a.nu_bar, b.nu_bar);
    }

    #[test]
    fn perturbing_an_inactive_node_breaks_the_adjoint_equation() {
        let (spec, mut u, psi, bounds) = unconstrained_problem(63);
        assert!(check_strong_stationarity(&assemble_bundle(&spec, &u, &psi, &bounds).unwrap())
            .is_strongly_stationary());
        u.values_mut()[30] += 0.1;
        let r = check_strong_stationarity(&assemble_bundle(&spec, &u, &psi, &bounds).unwrap());
        assert_eq!(r.control, 0.0);
        assert!(r.adjoint > TOL_STAT);
    }

    #[test]
    fn objective_delta_matches_direct_difference() {
        let g = Grid::interval(31);
        let spec = ObjectiveSpec::new(
            1.5,
            GridFn::from_fn(&g, |p| p[0]),
            GridFn::from_fn(&g, |p| (2.0 * p[0]).cos()),
            0.7,
        )
        .unwrap();
        let y0 = GridFn::from_fn(&g, |p| p[0] * p[0]);
        let dy = GridFn::from_fn(&g, |p| 0.3 - p[0]);
        let u0 = GridFn::from_fn(&g, |p| p[0].exp());
        let du = GridFn::from_fn(&g, |p| p[0].sin());
        let direct = objective(&spec, &(&y0 + &dy), &(&u0 + &du)).unwrap() - objective(&spec, &y0, &u0).unwrap();
        assert!((direct - objective_delta(&spec, &y0, &dy, &u0, &du)).abs() < 1e-13);
    }

    #[test]
    fn lower_bound_with_positive_gradient_is_stationary() {
        // u = 0 at the bound ua = 0 with p̄ > 0 pushing downwards: ν̄ = p̄ >= 0
        let g = Grid::interval(15);
        let spec = ObjectiveSpec::linear(GridFn::constant(&g, 1.0), 1.0).unwrap();
        let bounds = ControlBounds::new(vec![0.0; g.len()], vec![f64::INFINITY; g.len()]).unwrap();
        let b = assemble_bundle(&spec, &GridFn::zeros(&g), &Obstacle::constant(&g, -5.0), &bounds).unwrap();
        assert!(b.nu_bar.min() > 0.0);
        assert!(check_strong_stationarity(&b).is_strongly_stationary());
        // the opposite sign has no admissible multiplier
        let spec = ObjectiveSpec::linear(GridFn::constant(&g, -1.0), 1.0).unwrap();
        let err = assemble_bundle(&spec, &GridFn::zeros(&g), &Obstacle::constant(&g, -5.0), &bounds).unwrap_err();
        assert!(matches!(err, Error::NotStronglyStationary { .. }));
    }
}

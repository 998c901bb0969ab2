//! Three strongly stationary points that are not local minimizers.
//!
//! * `ce1`: the whole interval is strictly active, `ū = 0`, `λ̄ = x^r`, and a
//!   singular `j'(ȳ) = -x^{-γ}` rewards lifting the state off the obstacle.
//! * `ce2`: the state touches the obstacle only at `x = 0`, `p̄ = -x(1-x)`,
//!   and switching the control off on `(0,t)` lowers `J` by about `(c - 8c²) t²`.
//! * `ce3`: the radial analogue of `ce2` on the unit disc, with contact at the
//!   origin only.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFn};
use crate::stationarity::{
    assemble_bundle, check_strong_stationarity, objective_delta, ObjectiveSpec, StationarityBundle,
    StationarityResiduals,
};
use crate::tol::TOL_STAT;
use crate::vi::{solve_obstacle, ControlBounds, Obstacle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterexampleId {
    Ce1,
    Ce2,
    Ce3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum Params {
    Ce1 { r: f64, gamma: f64 },
    Ce2 { c: f64 },
    Ce3 { c: f64 },
}

impl Params {
    pub fn id(&self) -> CounterexampleId {
        match self {
            Params::Ce1 { .. } => CounterexampleId::Ce1,
            Params::Ce2 { .. } => CounterexampleId::Ce2,
            Params::Ce3 { .. } => CounterexampleId::Ce3,
        }
    }

    /// `r = 2, γ = 1/4` and `c = 1/16`.
    pub fn default_for(id: CounterexampleId) -> Self {
        match id {
            CounterexampleId::Ce1 => Params::Ce1 { r: 2.0, gamma: 0.25 },
            CounterexampleId::Ce2 => Params::Ce2 { c: 0.0625 },
            CounterexampleId::Ce3 => Params::Ce3 { c: 0.0625 },
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Params::Ce1 { r, gamma } => r > 1.5 && gamma > 2.0 - r && gamma < 0.5,
            Params::Ce2 { c } | Params::Ce3 { c } => c > 0.0 && c < 0.125,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "{self:?}: need r > 3/2 and 2 - r < γ < 1/2 for ce1, 0 < c < 1/8 otherwise"
            )))
        }
    }
}

#[derive(Clone, Debug)]
pub struct CounterexampleScenario {
    pub params: Params,
    pub grid: Grid,
    pub spec: ObjectiveSpec,
    pub psi: Obstacle,
    pub bounds: ControlBounds,
    pub u_bar: GridFn,
    /// Closed-form `ȳ`, `p̄` and `λ̄` sampled at the nodes.
    pub y_bar: GridFn,
    pub p_bar: GridFn,
    pub lambda_bar: GridFn,
}

fn ce2_y_bar(x: f64) -> f64 {
    x.powi(4) / 12.0 - x.powi(3) / 6.0 + x / 12.0
}

fn ce3_y_bar(r: f64) -> f64 {
    r.powi(4) / 16.0 - r * r / 4.0 + 3.0 / 16.0
}

/// `α = 1` and no control bounds in all three scenarios.
pub fn build(params: Params, n: usize) -> Result<CounterexampleScenario> {
    params.validate()?;
    let grid = match params.id() {
        CounterexampleId::Ce3 => Grid::new(crate::grid::GridKind::Radial, n)?,
        _ => Grid::new(crate::grid::GridKind::Interval, n)?,
    };
    let f = |h: &dyn Fn(f64) -> f64| GridFn::from_fn(&grid, |p| h(p[0]));
    let (g, psi, u_bar, y_bar, p_bar, lambda_bar) = match params {
        Params::Ce1 { r, gamma } => {
            let k = (r + 2.0) * (r + 1.0);
            let ybar = move |x: f64| (x - x.powf(r + 2.0)) / k;
            (
                f(&|x| -x.powf(-gamma)),
                Obstacle::from_fn(&grid, |p| ybar(p[0])),
                GridFn::zeros(&grid),
                f(&ybar),
                GridFn::zeros(&grid),
                f(&|x| x.powf(r)),
            )
        }
        Params::Ce2 { c } => (
            GridFn::constant(&grid, -2.0),
            Obstacle::from_fn(&grid, |p| ce2_y_bar(p[0]) - c * p[0] * p[0]),
            f(&|x| x * (1.0 - x)),
            f(&ce2_y_bar),
            f(&|x| -x * (1.0 - x)),
            GridFn::zeros(&grid),
        ),
        Params::Ce3 { c } => (
            GridFn::constant(&grid, -4.0),
            Obstacle::from_fn(&grid, |p| ce3_y_bar(p[0]) - c * p[0] * p[0]),
            f(&|r| 1.0 - r * r),
            f(&ce3_y_bar),
            f(&|r| r * r - 1.0),
            GridFn::zeros(&grid),
        ),
    };
    Ok(CounterexampleScenario {
        params,
        spec: ObjectiveSpec::linear(g, 1.0)?,
        psi,
        bounds: ControlBounds::unbounded(&grid),
        u_bar,
        y_bar,
        p_bar,
        lambda_bar,
        grid,
    })
}

impl CounterexampleScenario {
    pub fn id(&self) -> CounterexampleId {
        self.params.id()
    }

    /// The perturbed control `u_t`.
    pub fn u_t(&self, t: f64) -> GridFn {
        match self.params {
            Params::Ce1 { r, .. } => GridFn::from_fn(&self.grid, |p| if p[0] < t { t.powf(r) + p[0].powf(r) } else { 0.0 }),
            Params::Ce2 { c } => {
                let shift = 2.0 * c * (t * t - 2.0 * t) / (1.0 - t).powi(2);
                GridFn::from_fn(&self.grid, |p| if p[0] < t { 0.0 } else { p[0] * (1.0 - p[0]) + shift })
            }
            Params::Ce3 { .. } => GridFn::from_fn(&self.grid, |p| if p[0] < t { 0.0 } else { 1.0 - p[0] * p[0] }),
        }
    }

    /// Closed-form `y_t = S(u_t)`, known for `ce2` only.
    pub fn y_t_closed(&self, t: f64) -> Option<GridFn> {
        let Params::Ce2 { c } = self.params else { return None };
        let (a, b) = ((t * t - 2.0 * t) / (1.0 - t).powi(2), t * t / (1.0 - t).powi(2));
        Some(GridFn::from_fn(&self.grid, |p| {
            let x = p[0];
            if x < t {
                ce2_y_bar(x) - c * x * x
            } else {
                ce2_y_bar(x) + c * (1.0 - x) * (a * x + b)
            }
        }))
    }

    /// `ŷ_t = ψ + (t^r/2)(t x - x²)` on `[0, t]`, a lower bound for `y_t` in `ce1`.
    pub fn y_hat_t(&self, t: f64) -> Option<GridFn> {
        let Params::Ce1 { r, .. } = self.params else { return None };
        let psi = self.psi.values();
        Some(GridFn::from_fn(&self.grid, |p| p[0]).zip_map(psi, |x, ps| {
            if x <= t {
                ps + 0.5 * t.powf(r) * (t * x - x * x)
            } else {
                ps
            }
        }))
    }

    pub fn bundle(&self) -> Result<StationarityBundle> {
        assemble_bundle(&self.spec, &self.u_bar, &self.psi, &self.bounds)
    }

    /// Default perturbation sizes. `ce1` only decreases `J` once `u_t` is
    /// supported on a handful of nodes near `x = 0`, so its grid reaches down to `3e-4`.
    pub fn default_t_grid(&self) -> Vec<f64> {
        match self.id() {
            CounterexampleId::Ce1 => vec![3e-4, 5e-4, 7e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1],
            CounterexampleId::Ce2 => logspace(1e-2, 0.3, 8),
            CounterexampleId::Ce3 => vec![0.05, 0.1, 0.15, 0.2, 0.3],
        }
    }
}

/// `n` points from `a` to `b`, geometrically spaced.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n).map(|k| (la + (lb - la) * k as f64 / (n - 1) as f64).exp()).collect()
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ClosedForm {
    /// The exact gap of the continuous problem.
    Exact(f64),
    /// An upper bound for the continuous gap.
    UpperBound(f64),
    /// Only the sign is predicted (negative for small `t`).
    Negative,
}

impl ClosedForm {
    pub fn value(&self) -> Option<f64> {
        match *self {
            ClosedForm::Exact(v) | ClosedForm::UpperBound(v) => Some(v),
            ClosedForm::Negative => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Gap {
    pub t: f64,
    /// `J(S(u_t), u_t) - J(S(ū), ū)` on the grid.
    pub numeric: f64,
    pub closed_form: ClosedForm,
    /// `‖u_t - ū‖`.
    pub control_dist: f64,
}

/// Continuous gap of `ce2`, exact for every `t ∈ (0, 1)`.
pub fn ce2_gap_closed(c: f64, t: f64) -> f64 {
    let int_u2 = t.powi(5) / 5.0 - t.powi(4) / 2.0 + t.powi(3) / 3.0;
    let int_u = t * t / 2.0 - t.powi(3) / 3.0;
    -0.5 * int_u2 - 2.0 * c * int_u + 2.0 * c * c * (t * t - 2.0 * t).powi(2) / (1.0 - t).powi(3)
}

/// Upper bound `π (4ct² - t²/2 + t⁴/2 - t⁶/6)` for the gap of `ce3`.
pub fn ce3_gap_bound(c: f64, t: f64) -> f64 {
    PI * (4.0 * c * t * t - t * t / 2.0 + t.powi(4) / 2.0 - t.powi(6) / 6.0)
}

fn gap_with(scn: &CounterexampleScenario, base: &crate::vi::ObstacleSolution, t: f64) -> Result<Gap> {
    if !(t > 0.0 && t <= 0.5) {
        return Err(Error::InvalidParameter(format!("t = {t} outside (0, 1/2]")));
    }
    let ut = scn.u_t(t);
    let sol = solve_obstacle(&ut, &scn.psi)?;
    let du = &ut - &scn.u_bar;
    // y = ψ + slack on both sides, so the state increment is the slack increment
    let dy = &sol.slack - &base.slack;
    let numeric = objective_delta(&scn.spec, &base.y, &dy, &scn.u_bar, &du);
    let closed_form = match scn.params {
        Params::Ce1 { .. } => ClosedForm::Negative,
        Params::Ce2 { c } => ClosedForm::Exact(ce2_gap_closed(c, t)),
        Params::Ce3 { c } => ClosedForm::UpperBound(ce3_gap_bound(c, t)),
    };
    Ok(Gap { t, numeric, closed_form, control_dist: du.norm_l2() })
}

pub fn gap(scn: &CounterexampleScenario, t: f64) -> Result<Gap> {
    let base = solve_obstacle(&scn.u_bar, &scn.psi)?;
    gap_with(scn, &base, t)
}

#[derive(Clone, Debug, Serialize)]
pub struct NonOptimalityReport {
    pub params: Params,
    pub n: usize,
    pub residuals: StationarityResiduals,
    pub gaps: Vec<Gap>,
    /// Some `t` has `gap < -10 tol_stat ‖u_t - ū‖²`.
    pub decrease_found: bool,
    /// `‖u_t - ū‖` is increasing in `t` along the grid.
    pub shrinking: bool,
    pub confirmed: bool,
    /// Least-squares fit of `gap ≈ a t² + b t³` (`a` is the reported coefficient).
    pub fitted_t2: Option<f64>,
}

/// Least-squares coefficients `(a, b)` of `v ≈ a t² + b t³`.
pub fn fit_t2_t3(ts: &[f64], vs: &[f64]) -> Option<(f64, f64)> {
    let (mut s22, mut s23, mut s33, mut r2, mut r3) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&t, &v) in ts.iter().zip(vs) {
        let (p2, p3) = (t * t, t * t * t);
        s22 += p2 * p2;
        s23 += p2 * p3;
        s33 += p3 * p3;
        r2 += p2 * v;
        r3 += p3 * v;
    }
    let det = s22 * s33 - s23 * s23;
    if ts.len() < 2 || det.abs() <= f64::EPSILON * s22 * s33 {
        return None;
    }
    Some(((r2 * s33 - r3 * s23) / det, (s22 * r3 - s23 * r2) / det))
}

pub fn verify_nonoptimality(scn: &CounterexampleScenario, t_grid: &[f64]) -> Result<NonOptimalityReport> {
    let bundle = scn.bundle()?;
    let residuals = check_strong_stationarity(&bundle);
    let base = &bundle.state;
    let gaps = t_grid.par_iter().map(|&t| gap_with(scn, base, t)).collect::<Result<Vec<_>>>()?;
    let decrease_found = gaps.iter().any(|g| g.numeric < -10.0 * TOL_STAT * g.control_dist.powi(2));
    let mut sorted = gaps.clone();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    let shrinking = sorted.windows(2).all(|w| w[0].control_dist < w[1].control_dist);
    let fitted_t2 = if scn.id() == CounterexampleId::Ce2 {
        let small: Vec<&Gap> = sorted.iter().take(3).collect();
        let ts: Vec<f64> = small.iter().map(|g| g.t).collect();
        let vs: Vec<f64> = small.iter().map(|g| g.numeric).collect();
        fit_t2_t3(&ts, &vs).map(|f| f.0)
    } else {
        None
    };
    Ok(NonOptimalityReport {
        params: scn.params,
        n: scn.grid.n(),
        residuals,
        confirmed: decrease_found && shrinking,
        decrease_found,
        shrinking,
        gaps,
        fitted_t2,
    })
}

/// `y_t >= ŷ_t - tol` on `(0, t)` and `‖y_t - ȳ‖² >= 0.95 t^{2r+5}/120` for a given `y_t`.
pub fn ce1_lower_bound_holds(scn: &CounterexampleScenario, t: f64, y_t: &GridFn) -> Result<bool> {
    let Params::Ce1 { r, .. } = scn.params else {
        return Err(Error::Precondition("the lower bound is specific to ce1".into()));
    };
    let y_hat = scn.y_hat_t(t).expect("ce1");
    let pointwise = (0..scn.grid.len())
        .filter(|&i| scn.grid.point(i)[0] < t)
        .all(|i| y_t.values()[i] >= y_hat.values()[i] - TOL_STAT * t.powf(r + 2.0));
    let d = y_t - &scn.y_bar;
    Ok(pointwise && d.dot(&d) >= 0.95 * t.powf(2.0 * r + 5.0) / 120.0)
}

pub fn ce1_lower_bound_check(scn: &CounterexampleScenario, t: f64) -> Result<bool> {
    let y_t = solve_obstacle(&scn.u_t(t), &scn.psi)?.y;
    ce1_lower_bound_holds(scn, t, &y_t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_ranges_are_enforced() {
        assert!(build(Params::Ce1 { r: 1.4, gamma: 0.4 }, 63).is_err());
        assert!(build(Params::Ce1 { r: 2.0, gamma: -0.1 }, 63).is_err());
        assert!(build(Params::Ce2 { c: 0.125 }, 63).is_err());
        assert!(build(Params::Ce3 { c: 0.0 }, 63).is_err());
    }

    #[test]
    fn ce2_closed_gap_has_the_predicted_coefficient() {
        let c = 0.0625;
        let t = 1e-4;
        assert!((ce2_gap_closed(c, t) / (t * t) - (-c + 8.0 * c * c)).abs() < 1e-3);
    }

    #[test]
    fn fit_recovers_a_cubic() {
        let ts = [0.01, 0.02, 0.04];
        let vs: Vec<f64> = ts.iter().map(|t| -0.5 * t * t + 2.0 * t * t * t).collect();
        let (a, b) = fit_t2_t3(&ts, &vs).unwrap();
        assert!((a + 0.5).abs() < 1e-10 && (b - 2.0).abs() < 1e-8);
    }

    #[test]
    fn ce1_formula_at_r_two() {
        let s = build(Params::Ce1 { r: 2.0, gamma: 0.25 }, 63).unwrap();
        let x = s.grid.point(10)[0];
        assert!((s.psi.values().values()[10] - (x - x.powi(4)) / 12.0).abs() < 1e-15);
    }
}

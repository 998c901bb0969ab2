//! Partially optimal controls: for an attainable state `y`, the cheapest
//! control producing it, its multiplier, and the associated inequalities.
//!
//! On contact nodes the transform uses `Δ_h y`. In the continuum `Δy = Δψ`
//! almost everywhere on the contact set; on a grid this holds at contact
//! nodes whose neighbours are in contact too, while at the edge of the
//! contact set only `Δ_h y` keeps `S(u_y) = y` exact.

use crate::grid::GridFn;
use crate::stationarity::{ObjectiveSpec, StationarityBundle};
use crate::vi::{Obstacle, ObstacleSolution};

/// `-Δ_h y` of the solution's state.
fn neg_lap_state(sol: &ObstacleSolution) -> Vec<f64> {
    sol.grid().apply_neg_laplacian(sol.y.values())
}

/// `u_y = min(0, -Δ_h y)` on contact nodes and `-Δ_h y` elsewhere.
pub fn partially_optimal_control(sol: &ObstacleSolution) -> GridFn {
    let ly = neg_lap_state(sol);
    let v = ly.iter().enumerate().map(|(i, &l)| if sol.is_active(i) { l.min(0.0) } else { l }).collect();
    GridFn::from_values(sol.grid(), v).expect("sizes match")
}

/// `λ_y = max(0, -Δ_h y)` on contact nodes and `0` elsewhere, so that `-Δ_h y = u_y + λ_y`.
pub fn partially_optimal_multiplier(sol: &ObstacleSolution) -> GridFn {
    let ly = neg_lap_state(sol);
    let v = ly.iter().enumerate().map(|(i, &l)| if sol.is_active(i) { l.max(0.0) } else { 0.0 }).collect();
    GridFn::from_values(sol.grid(), v).expect("sizes match")
}

/// `(‖u‖² - ‖u_y‖², ‖u - u_y‖²)` where `sol` solves the obstacle problem for `u`.
pub fn energy_inequality_check(u: &GridFn, sol: &ObstacleSolution) -> (f64, f64) {
    let uy = partially_optimal_control(sol);
    let d = u - &uy;
    // ‖u‖² - ‖u_y‖² = (u - u_y, u + u_y)
    (d.dot(&(u + &uy)), d.dot(&d))
}

/// Largest violation of `0 <= -ū ⊥ λ̄ >= 0` on the contact set of `ȳ`.
pub fn double_complementarity_check(b: &StationarityBundle) -> f64 {
    let (u, l) = (b.u_bar.values(), b.lambda_bar().values());
    (0..u.len())
        .filter(|&i| b.state.is_active(i))
        .map(|i| u[i].max(0.0).max(-l[i]).max((-u[i]).max(0.0).min(l[i].max(0.0))))
        .fold(0.0, f64::max)
}

/// `(α/2) ∫_{y > ψ} max(0, -Δ_h ψ)²`.
pub fn inactive_obstacle_term(spec: &ObjectiveSpec, sol: &ObstacleSolution, psi: &Obstacle) -> f64 {
    let w = sol.grid().weights();
    let lap = psi.laplacian().values();
    0.5 * spec.alpha
        * (0..w.len()).filter(|&i| !sol.is_active(i)).map(|i| w[i] * (-lap[i]).max(0.0).powi(2)).sum::<f64>()
}

/// Objective of the state-constrained reformulation,
/// `j(y) + (α/2) ‖u_y‖² + (α/2) ∫_{y > ψ} max(0, -Δ_h ψ)²`.
pub fn reformulated_objective(spec: &ObjectiveSpec, sol: &ObstacleSolution, psi: &Obstacle) -> f64 {
    let uy = partially_optimal_control(sol);
    spec.j(&sol.y) + 0.5 * spec.alpha * uy.dot(&uy) + inactive_obstacle_term(spec, sol, psi)
}

//! Numerical tolerances shared across modules.

/// KKT residual accepted from the obstacle solver.
pub const TOL_KKT: f64 = 1e-10;
/// Contact threshold on `y - ψ`, and positivity threshold on `λ`.
pub const TOL_ACT: f64 = 1e-8;
/// Strong-stationarity residual threshold.
pub const TOL_STAT: f64 = 1e-7;
/// Bouligand-gap threshold used by the descent method.
pub const TOL_OPT: f64 = 1e-6;
/// Minimum curvature on sampled critical directions.
pub const CURVATURE_MARGIN: f64 = 1e-8;

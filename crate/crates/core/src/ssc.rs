//! Second-order sufficient conditions.
//!
//! Each certificate searches a finite grid of constants for a witness of the
//! nodal sign conditions and, for the local variants, evaluates the curvature
//! on sampled critical directions. A certificate is evidence at the stated
//! sample size, not a proof: the critical cone is infinite.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::grid::{poincare_constant, poisson_solve, GridFn};
use crate::stationarity::{
    cone_sign, objective_delta, project_to_cone, ObjectiveSpec, StationarityBundle,
};
use crate::sensitivity::directional_derivative;
use crate::tol::{CURVATURE_MARGIN, TOL_ACT, TOL_STAT};
use crate::vi::{solve_obstacle, ControlBounds, NodeClass, Obstacle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    CompatLocal,
    CompatGlobal,
    EnhancedLocal,
    EnhancedGlobal,
    SubharmonicConvex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    NotCertified,
    Inapplicable,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct Witness {
    pub beta: f64,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CurvatureSample {
    pub sampled: usize,
    pub critical: usize,
    /// `+inf` if no sampled direction was critical.
    pub min_curvature: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SscReport {
    pub theorem: Theorem,
    pub verdict: Verdict,
    /// The certifying constants, or the grid point with the smallest violation.
    pub witness: Option<Witness>,
    pub mu: f64,
    pub omega: Option<f64>,
    /// Violation of each hypothesis at `witness` (0 means satisfied).
    pub residuals: BTreeMap<String, f64>,
    pub curvature: Option<CurvatureSample>,
    /// Strict scalar inequality: the global optimum is unique with quadratic growth.
    pub unique_global: bool,
}

impl SscReport {
    fn new(theorem: Theorem, mu: f64, omega: Option<f64>) -> Self {
        Self {
            theorem,
            verdict: Verdict::NotCertified,
            witness: None,
            mu,
            omega,
            residuals: BTreeMap::new(),
            curvature: None,
            unique_global: false,
        }
    }

    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

#[derive(Clone, Debug)]
pub struct SscOptions {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    /// Random directions drawn for the curvature test.
    pub samples: usize,
    /// Coordinate directions `±e_i` are added when the grid has at most this many nodes.
    pub coordinate_limit: usize,
    pub seed: u64,
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let (la, lb) = (a.log10(), b.log10());
    (0..n).map(|k| 10f64.powf(la + (lb - la) * k as f64 / (n - 1) as f64)).collect()
}

impl SscOptions {
    /// `β ∈ {0} ∪ {2^k α ω 10⁻³ : k = 0..20}`, `γ, δ ∈ logspace(1e-4, 1, 13)`.
    pub fn for_bundle(b: &StationarityBundle) -> Result<Self> {
        let omega = poincare_constant(b.grid())?;
        let base = b.objective.alpha * omega * 1e-3;
        let mut beta = vec![0.0];
        beta.extend((0..=20).map(|k| base * 2f64.powi(k)));
        Ok(Self {
            beta,
            gamma: logspace(1e-4, 1.0, 13),
            delta: logspace(1e-4, 1.0, 13),
            samples: 500,
            coordinate_limit: 64,
            seed: 0,
        })
    }
}

fn max_violation(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, |m, v| m.max(-v))
}

/// `μ + 2βω - β²/α`.
fn scalar_condition(mu: f64, beta: f64, omega: f64, alpha: f64) -> f64 {
    mu + 2.0 * beta * omega - beta * beta / alpha
}

struct Search {
    best: Option<(f64, Witness, BTreeMap<String, f64>)>,
}

impl Search {
    fn new() -> Self {
        Self { best: None }
    }

    /// Returns true when every residual passes.
    fn offer(&mut self, w: Witness, residuals: BTreeMap<String, f64>) -> bool {
        let worst = residuals.values().copied().fold(0.0, f64::max);
        let pass = worst <= TOL_STAT;
        if self.best.as_ref().is_none_or(|(b, _, _)| worst < *b) {
            self.best = Some((worst, w, residuals));
        }
        pass
    }

    fn finish(self, report: &mut SscReport) {
        if let Some((_, w, r)) = self.best {
            report.witness = Some(w);
            report.residuals = r;
        }
    }
}

fn map<const N: usize>(entries: [(&str, f64); N]) -> BTreeMap<String, f64> {
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Which first-order terms a sampled direction must annihilate to count as critical.
#[derive(Clone, Copy)]
enum Criticality {
    Full,
    EtaOnly,
}

/// Normalized cone directions for the curvature test.
fn sample_directions(b: &StationarityBundle, opts: &SscOptions) -> Vec<GridFn> {
    let grid = b.grid();
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut dirs = Vec::new();
    let push = |h: GridFn, dirs: &mut Vec<GridFn>| {
        let h = project_to_cone(&b.bounds, &b.u_bar, &h);
        let nh = h.norm_l2();
        if nh > 0.0 {
            dirs.push((1.0 / nh) * &h);
        }
    };
    let (n_state, n_rough) = (opts.samples / 4, opts.samples / 4);
    let n_smooth = opts.samples - n_state - n_rough;
    for _ in 0..n_rough {
        push(GridFn::from_values(grid, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(), &mut dirs);
    }
    for _ in 0..n_smooth {
        let modes: Vec<(f64, f64, f64, f64)> = (0..6)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.5..12.0), rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3)))
            .collect();
        let h = GridFn::from_fn(grid, |p| {
            let (x, y) = (p[0], p.get(1).copied().unwrap_or(0.0));
            modes.iter().map(|&(a, k, phi, th)| a * (k * (x * th.cos() + y * th.sin()) + phi).sin()).sum()
        });
        push(h, &mut dirs);
    }
    // h = -Δ_h δ with δ in the critical state cone, so that S'(ū; h) = δ
    for _ in 0..n_state {
        let noise = GridFn::from_values(grid, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut d = poisson_solve(&noise);
        for (i, v) in d.values_mut().iter_mut().enumerate() {
            match b.state.class[i] {
                NodeClass::StrictlyActive => *v = 0.0,
                NodeClass::Biactive => *v = v.max(0.0),
                NodeClass::Inactive => {}
            }
        }
        push(d.laplacian().map(|v| -v), &mut dirs);
    }
    if n <= opts.coordinate_limit {
        for i in 0..n {
            for s in [1.0, -1.0] {
                let mut e = GridFn::zeros(grid);
                e.values_mut()[i] = s;
                if cone_sign(&b.bounds, &b.u_bar, i).is_none_or(|c| c * s > 0.0) {
                    push(e, &mut dirs);
                }
            }
        }
    }
    dirs
}

fn curvature_test(b: &StationarityBundle, opts: &SscOptions, kind: Criticality) -> Result<CurvatureSample> {
    let dirs = sample_directions(b, opts);
    let spec = &b.objective;
    let evaluated: Vec<Result<Option<f64>>> = dirs
        .par_iter()
        .map(|h| {
            let d = directional_derivative(&b.state, &b.u_bar, h)?;
            let eta_term = b.eta_bar.dot(&d).abs();
            let critical = match kind {
                Criticality::EtaOnly => eta_term <= TOL_STAT,
                Criticality::Full => {
                    let ld = d.laplacian().map(|v| -v);
                    let p_term = b.p_bar.dot(&(&ld - h)).abs();
                    let nu_term = b.nu_bar.dot(h).abs();
                    eta_term <= TOL_STAT && p_term <= TOL_STAT && nu_term <= TOL_STAT
                }
            };
            Ok(critical.then(|| spec.mu_j * d.dot(&d) + spec.alpha * h.dot(h)))
        })
        .collect();
    let mut sample = CurvatureSample { sampled: dirs.len(), critical: 0, min_curvature: f64::INFINITY };
    for r in evaluated {
        if let Some(q) = r? {
            sample.critical += 1;
            sample.min_curvature = sample.min_curvature.min(q);
        }
    }
    Ok(sample)
}

fn attach_curvature(report: &mut SscReport, b: &StationarityBundle, opts: &SscOptions, kind: Criticality) -> Result<()> {
    let c = curvature_test(b, opts, kind)?;
    report.curvature = Some(c);
    let curv_ok = c.min_curvature >= CURVATURE_MARGIN;
    report.residuals.insert(
        "curvature".into(),
        if c.min_curvature.is_finite() { (CURVATURE_MARGIN - c.min_curvature).max(0.0) } else { 0.0 },
    );
    if !curv_ok {
        report.verdict = Verdict::NotCertified;
    }
    Ok(())
}

/// `p̄ + β(ȳ-ψ) >= 0` on `{0 < ȳ-ψ < γ}` and `η̄ + βλ̄ >= 0`, plus curvature on critical directions.
pub fn certify_compat_local(b: &StationarityBundle, opts: &SscOptions) -> Result<SscReport> {
    let mut report = SscReport::new(Theorem::CompatLocal, b.objective.mu_j, None);
    let (p, s, eta, lam) = (b.p_bar.values(), b.state.slack.values(), b.eta_bar.values(), b.lambda_bar().values());
    let n = p.len();
    let mut search = Search::new();
    let mut found = None;
    'outer: for &beta in &opts.beta {
        let eta_v = max_violation((0..n).map(|i| eta[i] + beta * lam[i]));
        for &gamma in opts.gamma.iter().rev() {
            let p_v = max_violation((0..n).filter(|&i| s[i] > TOL_ACT && s[i] < gamma).map(|i| p[i] + beta * s[i]));
            let w = Witness { beta, gamma: Some(gamma), delta: None };
            if search.offer(w, map([("adjoint_sign", p_v), ("multiplier_sign", eta_v)])) {
                found = Some(w);
                report.residuals = map([("adjoint_sign", p_v), ("multiplier_sign", eta_v)]);
                break 'outer;
            }
        }
    }
    match found {
        Some(w) => {
            report.witness = Some(w);
            report.verdict = Verdict::Certified;
            attach_curvature(&mut report, b, opts, Criticality::Full)?;
        }
        None => search.finish(&mut report),
    }
    Ok(report)
}

/// Global variant: sign conditions on all of the domain and `μ + 2βω - β²/α >= 0`.
pub fn certify_compat_global(b: &StationarityBundle, opts: &SscOptions) -> Result<SscReport> {
    let omega = poincare_constant(b.grid())?;
    let (mu, alpha) = (b.objective.mu_j, b.objective.alpha);
    let mut report = SscReport::new(Theorem::CompatGlobal, mu, Some(omega));
    let (p, s, eta, lam) = (b.p_bar.values(), b.state.slack.values(), b.eta_bar.values(), b.lambda_bar().values());
    let n = p.len();
    let mut search = Search::new();
    let mut found: Option<(Witness, BTreeMap<String, f64>, bool)> = None;
    for &beta in &opts.beta {
        let p_v = max_violation((0..n).map(|i| p[i] + beta * s[i]));
        let eta_v = max_violation((0..n).map(|i| eta[i] + beta * lam[i]));
        let sc = scalar_condition(mu, beta, omega, alpha);
        let res = map([("adjoint_sign", p_v), ("multiplier_sign", eta_v), ("scalar", (-sc).max(0.0))]);
        let w = Witness { beta, gamma: None, delta: None };
        if search.offer(w, res.clone()) {
            let strict = sc > TOL_STAT;
            if found.as_ref().is_none_or(|f| strict && !f.2) {
                found = Some((w, res, strict));
            }
        }
    }
    match found {
        Some((w, r, strict)) => {
            report.verdict = Verdict::Certified;
            report.witness = Some(w);
            report.residuals = r;
            report.unique_global = strict;
        }
        None => search.finish(&mut report),
    }
    Ok(report)
}

fn enhanced_gate(b: &StationarityBundle) -> f64 {
    let lap = b.obstacle.laplacian().values();
    max_violation((0..lap.len()).map(|i| b.bounds.upper[i] - (-lap[i]).max(0.0)))
}

/// `η̄ + β 1_{ȳ=ψ} max(0, -Δ_h ψ)`, nodally.
fn enhanced_eta(b: &StationarityBundle, beta: f64) -> Vec<f64> {
    let lap = b.obstacle.laplacian().values();
    (0..lap.len())
        .map(|i| b.eta_bar.values()[i] + if b.state.is_active(i) { beta * (-lap[i]).max(0.0) } else { 0.0 })
        .collect()
}

/// `-αū + β(ȳ-ψ) >= 0` on `{0 < ȳ-ψ < γ, Δψ < 0, 0 < ū < -(2+δ)Δψ}`,
/// `η̄ + β 1_{ȳ=ψ} max(0,-Δψ) >= 0`, and curvature on `{h : S'(ū;h) ⊥ η̄}`.
pub fn certify_enhanced_local(b: &StationarityBundle, opts: &SscOptions) -> Result<SscReport> {
    let mut report = SscReport::new(Theorem::EnhancedLocal, b.objective.mu_j, None);
    let gate = enhanced_gate(b);
    if gate > 0.0 {
        report.verdict = Verdict::Inapplicable;
        report.residuals = map([("gate", gate)]);
        return Ok(report);
    }
    let alpha = b.objective.alpha;
    let (u, s) = (b.u_bar.values(), b.state.slack.values());
    let lap = b.obstacle.laplacian().values();
    let n = u.len();
    let mut search = Search::new();
    let mut found = None;
    'outer: for &beta in &opts.beta {
        let eta_v = max_violation(enhanced_eta(b, beta).into_iter());
        for &gamma in opts.gamma.iter().rev() {
            for &delta in &opts.delta {
                let set = (0..n).filter(|&i| {
                    s[i] > TOL_ACT && s[i] < gamma && lap[i] < 0.0 && u[i] > 0.0 && u[i] < -(2.0 + delta) * lap[i]
                });
                let c_v = max_violation(set.map(|i| -alpha * u[i] + beta * s[i]));
                let res = map([("control_sign", c_v), ("multiplier_sign", eta_v)]);
                let w = Witness { beta, gamma: Some(gamma), delta: Some(delta) };
                if search.offer(w, res.clone()) {
                    found = Some((w, res));
                    break 'outer;
                }
            }
        }
    }
    match found {
        Some((w, r)) => {
            report.verdict = Verdict::Certified;
            report.witness = Some(w);
            report.residuals = r;
            attach_curvature(&mut report, b, opts, Criticality::EtaOnly)?;
        }
        None => search.finish(&mut report),
    }
    Ok(report)
}

/// `ū ∉ (0, -2Δψ)` on `{ȳ > ψ, Δψ < 0}`, the enhanced multiplier sign and `μ + 2βω - β²/α >= 0`.
pub fn certify_enhanced_global(b: &StationarityBundle, opts: &SscOptions) -> Result<SscReport> {
    let omega = poincare_constant(b.grid())?;
    let (mu, alpha) = (b.objective.mu_j, b.objective.alpha);
    let mut report = SscReport::new(Theorem::EnhancedGlobal, mu, Some(omega));
    let gate = enhanced_gate(b);
    if gate > 0.0 {
        report.verdict = Verdict::Inapplicable;
        report.residuals = map([("gate", gate)]);
        return Ok(report);
    }
    let (u, s) = (b.u_bar.values(), b.state.slack.values());
    let lap = b.obstacle.laplacian().values();
    // distance by which ū sits inside the excluded interval, worst node
    let exclusion = (0..u.len())
        .filter(|&i| s[i] > TOL_ACT && lap[i] < 0.0)
        .map(|i| u[i].min(-2.0 * lap[i] - u[i]))
        .fold(0.0, f64::max);
    if exclusion > TOL_STAT {
        report.residuals = map([("interval_exclusion", exclusion)]);
        return Ok(report);
    }
    let mut search = Search::new();
    let mut found: Option<(Witness, BTreeMap<String, f64>, bool)> = None;
    for &beta in &opts.beta {
        let eta_v = max_violation(enhanced_eta(b, beta).into_iter());
        let sc = scalar_condition(mu, beta, omega, alpha);
        let res = map([("interval_exclusion", exclusion), ("multiplier_sign", eta_v), ("scalar", (-sc).max(0.0))]);
        let w = Witness { beta, gamma: None, delta: None };
        if search.offer(w, res.clone()) {
            let strict = sc > TOL_STAT && mu > 0.0;
            if found.as_ref().is_none_or(|f| strict && !f.2) {
                found = Some((w, res, strict));
            }
        }
    }
    match found {
        Some((w, r, strict)) => {
            report.verdict = Verdict::Certified;
            report.witness = Some(w);
            report.residuals = r;
            report.unique_global = strict;
        }
        None => search.finish(&mut report),
    }
    Ok(report)
}

/// `Δ_h ψ >= -tol_act` at every node, with `Δ_h` acting on the nodal values
/// and zero boundary data as in the state equation. On a contact node
/// `-Δ_h y <= -Δ_h ψ` holds for exactly this operator, so it is the one that
/// makes every state reachable by `u_y = -Δ_h y` (closed-form Laplacians that
/// see positive boundary values of `ψ` do not).
pub fn classify_subharmonic(psi: &Obstacle) -> bool {
    state_laplacian(psi).iter().all(|&v| v >= -TOL_ACT)
}

fn state_laplacian(psi: &Obstacle) -> Vec<f64> {
    psi.values().laplacian().into_values()
}

/// Subharmonic obstacle and convex `j`: any Bouligand-stationary point is the
/// unique global solution, with global quadratic growth.
pub fn certify_subharmonic_convex(spec: &ObjectiveSpec, psi: &Obstacle, _bounds: &ControlBounds) -> SscReport {
    let mut report = SscReport::new(Theorem::SubharmonicConvex, spec.mu_j, None);
    let lap_v = max_violation(state_laplacian(psi).into_iter());
    let convex_v = (-spec.mu_j).max(0.0);
    report.residuals = map([("obstacle_laplacian", lap_v), ("convexity", convex_v)]);
    if classify_subharmonic(psi) && spec.mu_j >= 0.0 {
        report.verdict = Verdict::Certified;
        report.unique_global = true;
    }
    report
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct GrowthReport {
    pub samples: usize,
    /// Smallest `J(u) - J(ū)` found.
    pub min_increase: f64,
    /// Smallest `2 (J(u) - J(ū)) / ‖u - ū‖²`.
    pub growth_constant: f64,
}

/// Random admissible perturbations of `ū` of `L²` size up to `radius`
/// (unbounded when `radius` is infinite, in which case sizes up to 10·‖ū‖+1 are drawn).
pub fn growth_sweep(b: &StationarityBundle, radius: f64, samples: usize, seed: u64) -> Result<GrowthReport> {
    let grid = b.grid();
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = if radius.is_finite() { radius } else { 10.0 * b.u_bar.norm_l2() + 1.0 };
    let mut controls = Vec::with_capacity(samples);
    for _ in 0..samples {
        let dir = GridFn::from_values(grid, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let r = cap * rng.gen_range(0.0f64..1.0).powf(2.0).max(1e-6);
        let nd = dir.norm_l2();
        let u = b.bounds.project(&(&b.u_bar + &((r / nd) * &dir)));
        controls.push(u);
    }
    let vals: Vec<Result<(f64, f64)>> = controls
        .par_iter()
        .map(|u| {
            let sol = solve_obstacle(u, &b.obstacle)?;
            let du = u - &b.u_bar;
            let dy = &sol.slack - &b.state.slack;
            let inc = objective_delta(&b.objective, b.y_bar(), &dy, &b.u_bar, &du);
            Ok((inc, du.dot(&du)))
        })
        .collect();
    let mut rep = GrowthReport { samples, min_increase: f64::INFINITY, growth_constant: f64::INFINITY };
    for v in vals {
        let (inc, d2) = v?;
        rep.min_increase = rep.min_increase.min(inc);
        if d2 > 0.0 {
            rep.growth_constant = rep.growth_constant.min(2.0 * inc / d2);
        }
    }
    Ok(rep)
}

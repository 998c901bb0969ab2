//! Worked examples with known answers, one or two per operation.

use std::f64::consts::PI;

use obstacle_control::counterexamples::{build, ce1_lower_bound_holds, gap, CounterexampleId, Params};
use obstacle_control::grid::{inner, poisson_solve};
use obstacle_control::optimizer::{solve_general, solve_subharmonic, DescentOptions, QpOptions};
use obstacle_control::sensitivity::directional_derivative;
use obstacle_control::ssc::{
    certify_compat_global, certify_compat_local, certify_enhanced_global, classify_subharmonic, SscOptions,
};
use obstacle_control::stationarity::{
    assemble_bundle, bouligand_gap, check_strong_stationarity, objective, taylor_gap_identity, ObjectiveSpec,
};
use obstacle_control::structure::{partially_optimal_control, partially_optimal_multiplier, reformulated_objective};
use obstacle_control::vi::NodeClass;
use obstacle_control::{solve_obstacle, ControlBounds, Grid, GridFn, Obstacle};

fn max_diff(a: &GridFn, b: &GridFn) -> f64 {
    (a - b).norm_linf()
}

#[test]
fn sine_is_a_discrete_eigenvector() {
    let grid = Grid::interval(3);
    let h = grid.h();
    let f = GridFn::from_fn(&grid, |p| (PI * p[0]).sin());
    let expected = f.map(|v| -(2.0 / (h * h)) * (1.0 - (PI * h).cos()) * v);
    assert!(max_diff(&f.laplacian(), &expected) < 1e-12);
}

#[test]
fn poisson_reproduces_the_closed_form_states() {
    let grid = Grid::interval(255);
    let y = poisson_solve(&GridFn::constant(&grid, 2.0));
    assert!(max_diff(&y, &GridFn::from_fn(&grid, |p| p[0] * (1.0 - p[0]))) < 1e-12);

    let y = poisson_solve(&GridFn::from_fn(&grid, |p| p[0] * (1.0 - p[0])));
    let exact = GridFn::from_fn(&grid, |p| {
        let x = p[0];
        x.powi(4) / 12.0 - x.powi(3) / 6.0 + x / 12.0
    });
    assert!(max_diff(&y, &exact) < grid.h().powi(2));

    let disc = Grid::radial(255);
    let y = poisson_solve(&GridFn::from_fn(&disc, |p| 1.0 - p[0] * p[0]));
    let exact = GridFn::from_fn(&disc, |p| {
        let r = p[0];
        r.powi(4) / 16.0 - r * r / 4.0 + 3.0 / 16.0
    });
    assert!(max_diff(&y, &exact) < 10.0 * disc.h());
}

#[test]
fn quadrature_measures_the_domains() {
    let line = Grid::interval(1023);
    let one = GridFn::constant(&line, 1.0);
    assert!((inner(&one, &one).unwrap() - 1.0).abs() < 1e-2);
    let disc = Grid::radial(1023);
    let one = GridFn::constant(&disc, 1.0);
    assert!((inner(&one, &one).unwrap() - PI).abs() < 1e-2);
}

#[test]
fn ce2_obstacle_is_touched_only_at_the_origin() {
    let scn = build(Params::Ce2 { c: 0.0625 }, 511).unwrap();
    let sol = solve_obstacle(&scn.u_bar, &scn.psi).unwrap();
    assert!(max_diff(&sol.y, &scn.y_bar) < scn.grid.h().powi(2));
    assert!(sol.lambda.norm_linf() < 1e-8);
}

#[test]
fn lipschitz_estimate_is_sharp_without_contact() {
    let grid = Grid::interval(63);
    let psi = Obstacle::constant(&grid, -10.0);
    let u1 = GridFn::from_fn(&grid, |p| (3.0 * p[0]).sin());
    let u2 = GridFn::from_fn(&grid, |p| p[0] - 0.5);
    let (lhs, rhs) = obstacle_control::vi::lipschitz_l1_check(&u1, &u2, &psi).unwrap();
    assert!((lhs - (&u1 - &u2).norm_l1()).abs() < 1e-10);
    assert!((rhs - 2.0 * lhs).abs() < 1e-10);
}

#[test]
fn comparison_of_constant_loads() {
    let grid = Grid::interval(63);
    let psi = Obstacle::constant(&grid, -10.0);
    let (u1, u2) = (GridFn::zeros(&grid), GridFn::constant(&grid, 1.0));
    assert!(obstacle_control::vi::comparison_check(&u1, &u2, &psi).unwrap());
    let d = &solve_obstacle(&u2, &psi).unwrap().y - &solve_obstacle(&u1, &psi).unwrap().y;
    assert!(max_diff(&d, &poisson_solve(&u2)) < 1e-13);
    assert!(d.min() > 0.0);
}

#[test]
fn derivative_is_poisson_when_nothing_touches() {
    let grid = Grid::interval(63);
    let psi = Obstacle::constant(&grid, -10.0);
    let u = GridFn::zeros(&grid);
    let h = GridFn::from_fn(&grid, |p| (5.0 * p[0]).cos());
    let sol = solve_obstacle(&u, &psi).unwrap();
    let d = directional_derivative(&sol, &u, &h).unwrap();
    assert!(max_diff(&d, &poisson_solve(&h)) < 1e-12);
}

#[test]
fn derivative_matches_finite_differences_on_a_contact_region() {
    let grid = Grid::interval(255);
    let psi = Obstacle::from_fn(&grid, |p| 0.5 * (PI * p[0]).sin() - 0.4);
    let u = GridFn::zeros(&grid);
    let h = GridFn::constant(&grid, 1.0);
    let sol = solve_obstacle(&u, &psi).unwrap();
    assert!(sol.count(NodeClass::Inactive) < grid.len());
    let d = directional_derivative(&sol, &u, &h).unwrap();
    let t = 1e-5;
    let moved = solve_obstacle(&(&u + &(t * &h)), &psi).unwrap();
    let fd = (&moved.slack - &sol.slack).map(|v| v / t);
    assert!(max_diff(&d, &fd) < 1e-3);
}

#[test]
fn objective_of_ce2() {
    let scn = build(Params::Ce2 { c: 0.0625 }, 2047).unwrap();
    // -2 ∫ȳ + ½‖ū‖² with ∫ȳ = 1/60 and ‖ū‖² = 1/30
    let j = objective(&scn.spec, &scn.y_bar, &scn.u_bar).unwrap();
    assert!((j - (-2.0 / 60.0 + 0.5 / 30.0)).abs() < 1e-5);
    let zero = GridFn::zeros(&scn.grid);
    assert_eq!(objective(&scn.spec, &scn.y_bar, &zero).unwrap(), scn.spec.j(&scn.y_bar));
}

#[test]
fn counterexample_bundles_carry_the_closed_form_multipliers() {
    let ce2 = build(Params::Ce2 { c: 0.0625 }, 1023).unwrap();
    let b = ce2.bundle().unwrap();
    assert!(max_diff(&b.p_bar, &ce2.p_bar) < 1e-5);
    assert!(b.eta_bar.norm_linf() < 1e-4 && b.nu_bar.norm_linf() == 0.0);
    assert!(check_strong_stationarity(&b).is_strongly_stationary());

    let ce3 = build(Params::Ce3 { c: 0.0625 }, 1023).unwrap();
    let b = ce3.bundle().unwrap();
    assert!(max_diff(&b.p_bar, &ce3.p_bar) < 1e-2);

    let ce1 = build(Params::default_for(CounterexampleId::Ce1), 1023).unwrap();
    let b = ce1.bundle().unwrap();
    assert_eq!(b.p_bar.norm_linf(), 0.0);
    assert!(b.state.class.iter().all(|&c| c == NodeClass::StrictlyActive));
    assert!(check_strong_stationarity(&b).is_strongly_stationary());
}

#[test]
fn bouligand_gaps_vanish_at_ce2() {
    let scn = build(Params::Ce2 { c: 0.0625 }, 255).unwrap();
    let dirs: Vec<GridFn> = (1..20).map(|k| GridFn::from_fn(&scn.grid, |p| (k as f64 * p[0]).sin())).collect();
    let r = bouligand_gap(&scn.spec, &scn.u_bar, &scn.psi, &scn.bounds, &dirs).unwrap();
    assert!(r.min >= -1e-7, "{}", r.min);
    let none = bouligand_gap(&scn.spec, &scn.u_bar, &scn.psi, &scn.bounds, &[]).unwrap();
    assert!(none.min.is_infinite());
}

#[test]
fn ce2_expansion_at_t_one_fifth() {
    let scn = build(Params::Ce2 { c: 0.0625 }, 1023).unwrap();
    let b = scn.bundle().unwrap();
    let (lhs, rhs) = taylor_gap_identity(&b, &scn.u_t(0.2)).unwrap();
    assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    let (lhs, rhs) = taylor_gap_identity(&b, &scn.u_bar).unwrap();
    assert_eq!((lhs, rhs), (0.0, 0.0));
}

#[test]
fn ce2_closed_form_state_agrees_with_the_solver() {
    let scn = build(Params::Ce2 { c: 0.0625 }, 2047).unwrap();
    for t in [0.05, 0.2] {
        let y = solve_obstacle(&scn.u_t(t), &scn.psi).unwrap().y;
        assert!(max_diff(&y, &scn.y_t_closed(t).unwrap()) < 1e-5, "t = {t}");
    }
}

#[test]
fn ce2_gap_shrinks_with_t() {
    let scn = build(Params::Ce2 { c: 0.0625 }, 1023).unwrap();
    let small = gap(&scn, 1e-3).unwrap();
    assert!(small.numeric.abs() < 1e-6);
    assert!(small.numeric < 0.0);
}

#[test]
fn structure_of_the_ce1_point() {
    let scn = build(Params::default_for(CounterexampleId::Ce1), 1023).unwrap();
    let sol = solve_obstacle(&scn.u_bar, &scn.psi).unwrap();
    assert!(partially_optimal_control(&sol).norm_linf() < 1e-8);
    let lam = partially_optimal_multiplier(&sol);
    assert!(max_diff(&lam, &scn.lambda_bar) < 1e-5);
    // fully active, so the extra term of the reformulation vanishes
    let direct = objective(&scn.spec, &sol.y, &partially_optimal_control(&sol)).unwrap();
    assert!((reformulated_objective(&scn.spec, &sol, &scn.psi) - direct).abs() < 1e-12);
}

#[test]
fn ce1_lower_bound_rejects_a_corrupted_state() {
    let scn = build(Params::default_for(CounterexampleId::Ce1), 4095).unwrap();
    let t = 0.2;
    let y = solve_obstacle(&scn.u_t(t), &scn.psi).unwrap().y;
    assert!(ce1_lower_bound_holds(&scn, t, &y).unwrap());
    let bad = GridFn::from_fn(&scn.grid, |p| if p[0] < t { -1e-3 } else { 0.0 });
    assert!(!ce1_lower_bound_holds(&scn, t, &(&y + &bad)).unwrap());
}

#[test]
fn sign_conditions_certify_a_trivial_bundle() {
    let grid = Grid::interval(31);
    let spec = ObjectiveSpec::linear(GridFn::zeros(&grid), 1.0).unwrap();
    let psi = Obstacle::constant(&grid, -10.0);
    let b = assemble_bundle(&spec, &GridFn::zeros(&grid), &psi, &ControlBounds::unbounded(&grid)).unwrap();
    let opts = SscOptions::for_bundle(&b).unwrap();
    let local = certify_compat_local(&b, &opts).unwrap();
    assert!(local.is_certified());
    assert_eq!(local.witness.unwrap().beta, 0.0);
    assert!(certify_compat_global(&b, &opts).unwrap().is_certified());
    assert!(certify_enhanced_global(&b, &opts).unwrap().is_certified());
}

#[test]
fn subharmonic_classification() {
    let grid = Grid::interval(63);
    assert!(classify_subharmonic(&Obstacle::from_fn(&grid, |p| p[0] * p[0] - p[0])));
    assert!(classify_subharmonic(&Obstacle::constant(&grid, 0.0)));
    let ce1 = build(Params::default_for(CounterexampleId::Ce1), 63).unwrap();
    assert!(!classify_subharmonic(&ce1.psi));
}

#[test]
fn qp_with_inactive_constraint_is_biharmonic() {
    let grid = Grid::interval(63);
    let spec = ObjectiveSpec::linear(GridFn::constant(&grid, -1.0), 1.0).unwrap();
    let psi = Obstacle::constant(&grid, 0.0);
    let (sol, diag) = solve_subharmonic(&spec, &psi, &ControlBounds::unbounded(&grid), &QpOptions::default()).unwrap();
    let expected = poisson_solve(&poisson_solve(&GridFn::constant(&grid, 1.0)));
    assert!(max_diff(&sol.y, &expected) < 1e-10);
    assert!(sol.y.min() >= 0.0);
    assert!(diag.kkt_residual < 1e-8);
}

#[test]
fn descent_escapes_the_ce2_stationary_point() {
    let scn = build(Params::Ce2 { c: 0.0625 }, 255).unwrap();
    let j_bar = objective(&scn.spec, &scn.y_bar, &scn.u_bar).unwrap();
    let (sol, _) = solve_general(&scn.spec, &scn.psi, &scn.bounds, &scn.u_bar, &DescentOptions::default()).unwrap();
    assert!(sol.objective < j_bar - 1e-6, "{} vs {j_bar}", sol.objective);
}

#[test]
fn descent_on_a_tracking_problem_terminates_stationary() {
    let grid = Grid::interval(63);
    let psi = Obstacle::from_fn(&grid, |p| 0.5 * (PI * p[0]).sin() - 0.4);
    let y_d = psi.values().map(|v| v.max(0.0));
    let spec = ObjectiveSpec::new(1.0, y_d, GridFn::zeros(&grid), 1.0).unwrap();
    let bounds = ControlBounds::unbounded(&grid);
    let (_, diag) = solve_general(&spec, &psi, &bounds, &GridFn::zeros(&grid), &DescentOptions::default()).unwrap();
    assert!(diag.converged);
    assert!(diag.final_gap.unwrap().min >= -1e-6);
}

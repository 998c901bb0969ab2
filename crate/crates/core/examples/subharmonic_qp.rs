//! With a subharmonic obstacle the control problem is a convex QP in the state.

use obstacle_control::optimizer::{solve_subharmonic, QpOptions};
use obstacle_control::stationarity::ObjectiveSpec;
use obstacle_control::{ControlBounds, Grid, GridFn, Obstacle};

fn main() -> obstacle_control::Result<()> {
    let grid = Grid::interval(1023);
    let psi = Obstacle::from_fn(&grid, |p| 0.5 * (p[0] * p[0] - p[0]) - 0.01);
    let y_d = GridFn::from_fn(&grid, |p| (6.0 * p[0]).sin() * 0.05);
    let spec = ObjectiveSpec::new(1.0, y_d, GridFn::zeros(&grid), 1e-4)?;
    let bounds = ControlBounds::new(vec![-5.0; grid.len()], vec![5.0; grid.len()])?;

    let opts = QpOptions { random_starts: 4, seed: 3, ..QpOptions::default() };
    let (sol, diag) = solve_subharmonic(&spec, &psi, &bounds, &opts)?;
    println!("J*                 {:.10}", sol.objective);
    println!("iterations/start   {:?}", diag.iterations);
    println!("path-followed      {} of {}", diag.globalized, diag.iterations.len());
    println!("spread of states   {:.2e}", diag.spread);
    println!("‖S(u*) - y*‖∞      {:.2e}", diag.state_consistency);
    println!("control range      [{:.4}, {:.4}]", sol.u.min(), sol.u.max());
    Ok(())
}

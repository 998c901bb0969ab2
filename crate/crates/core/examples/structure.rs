//! Replacing a control by its partially optimal version keeps the state and lowers the cost.

use obstacle_control::stationarity::{objective, ObjectiveSpec};
use obstacle_control::structure::{energy_inequality_check, partially_optimal_control};
use obstacle_control::{solve_obstacle, Grid, GridFn, Obstacle};

fn main() -> obstacle_control::Result<()> {
    let grid = Grid::square(63);
    let psi = Obstacle::from_fn(&grid, |p| 0.01 - (p[0] - 0.5).powi(2) - (p[1] - 0.5).powi(2));
    let u = GridFn::from_fn(&grid, |p| -6.0 + 4.0 * (9.0 * p[0] * p[1]).sin());
    let sol = solve_obstacle(&u, &psi)?;
    let uy = partially_optimal_control(&sol);
    let again = solve_obstacle(&uy, &psi)?;

    let spec = ObjectiveSpec::new(1.0, GridFn::zeros(&grid), GridFn::constant(&grid, -1.0), 0.5)?;
    let (lhs, rhs) = energy_inequality_check(&u, &sol);
    println!("‖S(u_y) - S(u)‖∞      {:.2e}", (&again.y - &sol.y).norm_linf());
    println!("J(y, u)               {:.8}", objective(&spec, &sol.y, &u)?);
    println!("J(y, u_y)             {:.8}", objective(&spec, &sol.y, &uy)?);
    println!("‖u‖² - ‖u_y‖² = {lhs:.6} >= ‖u - u_y‖² = {rhs:.6}");
    Ok(())
}

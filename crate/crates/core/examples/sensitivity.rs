//! Directional derivative of the control-to-state map against difference quotients.

use obstacle_control::sensitivity::directional_derivative;
use obstacle_control::{solve_obstacle, Grid, GridFn, Obstacle};

fn main() -> obstacle_control::Result<()> {
    let grid = Grid::interval(511);
    let psi = Obstacle::from_fn(&grid, |p| 0.02 - (p[0] - 0.4).powi(2));
    let u = GridFn::from_fn(&grid, |p| -4.0 * (3.0 * p[0]).cos());
    let h = GridFn::from_fn(&grid, |p| (7.0 * p[0]).sin());

    let sol = solve_obstacle(&u, &psi)?;
    let d = directional_derivative(&sol, &u, &h)?;
    for t in [1e-1, 1e-2, 1e-3, 1e-4] {
        let moved = solve_obstacle(&(&u + &(t * &h)), &psi)?;
        let fd = (&moved.slack - &sol.slack).map(|v| v / t);
        println!("t = {t:.0e}  ‖(S(u+th) - S(u))/t - S'(u;h)‖∞ = {:.3e}", (&fd - &d).norm_linf());
    }
    Ok(())
}

//! Smallest eigenvalue of `-Δ_h` on each grid against its continuous limit.

use obstacle_control::grid::poincare_constant;
use obstacle_control::Grid;

fn main() -> obstacle_control::Result<()> {
    let j0: f64 = 2.404_825_557_695_773;
    let cases = [
        ("interval", Grid::interval(1023), std::f64::consts::PI.powi(2)),
        ("square", Grid::square(127), 2.0 * std::f64::consts::PI.powi(2)),
        ("disc", Grid::radial(1023), j0 * j0),
    ];
    for (name, grid, exact) in cases {
        let omega = poincare_constant(&grid)?;
        println!("{name:<9} ω_h = {omega:.8}  limit {exact:.8}  rel. error {:.2e}", (omega - exact).abs() / exact);
    }
    Ok(())
}

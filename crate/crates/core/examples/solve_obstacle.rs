//! A membrane pushed down by a load and held up by a parabolic obstacle.

use obstacle_control::vi::NodeClass;
use obstacle_control::{solve_obstacle, Grid, GridFn, Obstacle};

fn main() -> obstacle_control::Result<()> {
    let grid = Grid::interval(255);
    let psi = Obstacle::from_fn(&grid, |p| 0.05 - (p[0] - 0.5).powi(2));
    let u = GridFn::constant(&grid, -3.0);
    let sol = solve_obstacle(&u, &psi)?;

    let contact: Vec<f64> = (0..grid.len()).filter(|&i| sol.is_active(i)).map(|i| grid.point(i)[0]).collect();
    println!("contact set   [{:.4}, {:.4}]", contact.first().unwrap(), contact.last().unwrap());
    println!("strictly act. {}", sol.count(NodeClass::StrictlyActive));
    println!("biactive      {}", sol.count(NodeClass::Biactive));
    println!("max λ         {:.6}", sol.lambda.max());
    println!("kkt residual  {:.2e}", sol.kkt_residual);
    println!("method        {:?} after {} iterations", sol.diagnostics.method, sol.diagnostics.iterations);
    Ok(())
}

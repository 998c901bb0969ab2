//! Projected descent started at a strongly stationary point that is not a minimizer.

use obstacle_control::counterexamples::{build, Params};
use obstacle_control::optimizer::{solve_general, DescentOptions};
use obstacle_control::stationarity::objective;

fn main() -> obstacle_control::Result<()> {
    let scn = build(Params::Ce2 { c: 0.0625 }, 511)?;
    let j_bar = objective(&scn.spec, &scn.y_bar, &scn.u_bar)?;
    let (sol, diag) = solve_general(&scn.spec, &scn.psi, &scn.bounds, &scn.u_bar, &DescentOptions::default())?;
    println!("J(ū)        {j_bar:.10}");
    println!("J(u*)       {:.10}", sol.objective);
    println!("iterations  {}, escapes {}, converged {}", diag.iterations, diag.escapes, diag.converged);
    if let Some(g) = &diag.final_gap {
        println!("Bouligand gap at u*: {:.3e}", g.min);
    }
    Ok(())
}

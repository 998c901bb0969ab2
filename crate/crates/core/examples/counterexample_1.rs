//! Fully active stationary point with a singular linear cost.

use obstacle_control::counterexamples::{build, ce1_lower_bound_check, verify_nonoptimality, Params};

fn main() -> obstacle_control::Result<()> {
    let scn = build(Params::Ce1 { r: 2.0, gamma: 0.25 }, 4095)?;
    let report = verify_nonoptimality(&scn, &scn.default_t_grid())?;
    println!("stationarity residual {:.2e}", report.residuals.max());
    for g in &report.gaps {
        let bound = ce1_lower_bound_check(&scn, g.t)?;
        println!("t = {:.1e}  gap {:+.3e}  ‖u_t - ū‖ {:.3e}  lower bound {bound}", g.t, g.numeric, g.control_dist);
    }
    println!("not a local minimizer: {}", report.confirmed);
    Ok(())
}

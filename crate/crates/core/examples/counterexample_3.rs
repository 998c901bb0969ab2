//! Radial point contact at the origin of the unit disc.

use obstacle_control::counterexamples::{build, verify_nonoptimality, Params};

fn main() -> obstacle_control::Result<()> {
    let scn = build(Params::Ce3 { c: 0.0625 }, 2047)?;
    let report = verify_nonoptimality(&scn, &scn.default_t_grid())?;
    for g in &report.gaps {
        println!("t = {:.2}  gap {:+.4e}  bound {:?}", g.t, g.numeric, g.closed_form.value());
    }
    println!("not a local minimizer: {}", report.confirmed);
    Ok(())
}

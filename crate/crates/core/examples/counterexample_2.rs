//! Point contact at the boundary: the gap against its closed form and the fitted t² coefficient.

use obstacle_control::counterexamples::{build, verify_nonoptimality, Params};

fn main() -> obstacle_control::Result<()> {
    for c in [0.0625, 0.12499] {
        let scn = build(Params::Ce2 { c }, 2047)?;
        let report = verify_nonoptimality(&scn, &scn.default_t_grid())?;
        println!("c = {c}: confirmed {}, fitted t² coefficient {:?}, predicted -c + 8c² = {}", report.confirmed, report.fitted_t2, -c + 8.0 * c * c);
        for g in &report.gaps {
            println!("    t = {:.3e}  numeric {:+.6e}  closed form {:?}", g.t, g.numeric, g.closed_form.value());
        }
    }
    Ok(())
}

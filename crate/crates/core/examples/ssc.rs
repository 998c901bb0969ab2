//! Sufficient-condition certificates: one that applies and one that is rejected.

use obstacle_control::counterexamples::{build, Params};
use obstacle_control::ssc::{certify_compat_local, certify_enhanced_global, certify_subharmonic_convex, SscOptions};
use obstacle_control::stationarity::ObjectiveSpec;
use obstacle_control::{ControlBounds, Grid, GridFn, Obstacle};

fn main() -> obstacle_control::Result<()> {
    let grid = Grid::interval(255);
    let psi = Obstacle::from_fn(&grid, |p| p[0] * p[0] - p[0]);
    let spec = ObjectiveSpec::new(1.0, GridFn::constant(&grid, 0.1), GridFn::zeros(&grid), 1e-2)?;
    let report = certify_subharmonic_convex(&spec, &psi, &ControlBounds::unbounded(&grid));
    println!("subharmonic obstacle: {:?}", report.verdict);

    // a stationary point that is not a local minimizer
    let scn = build(Params::Ce2 { c: 0.0625 }, 1023)?;
    let b = scn.bundle()?;
    let opts = SscOptions::for_bundle(&b)?;
    for report in [certify_compat_local(&b, &opts)?, certify_enhanced_global(&b, &opts)?] {
        println!("{:?}: {:?}", report.theorem, report.verdict);
        for (name, r) in &report.residuals {
            println!("    {name:<20} {r:.3e}");
        }
    }
    Ok(())
}

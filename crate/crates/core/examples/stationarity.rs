//! Multipliers of a strongly stationary point and the exact second-order expansion of `J` around it.

use obstacle_control::counterexamples::{build, Params};
use obstacle_control::stationarity::{check_strong_stationarity, taylor_gap_identity};
use obstacle_control::GridFn;

fn main() -> obstacle_control::Result<()> {
    let scn = build(Params::Ce2 { c: 0.0625 }, 1023)?;
    let b = scn.bundle()?;
    let res = check_strong_stationarity(&b);
    println!("residuals {res:#?}");
    println!("strongly stationary: {}", res.is_strongly_stationary());
    println!("‖p̄ - closed form‖∞ = {:.2e}", (&b.p_bar - &scn.p_bar).norm_linf());

    let h = GridFn::from_fn(&scn.grid, |p| (3.0 * p[0]).sin());
    for s in [1.0, 0.1, 0.01] {
        let (lhs, rhs) = taylor_gap_identity(&b, &(&scn.u_bar + &(s * &h)))?;
        println!("step {s:5}: J(u) - J(ū) = {lhs:+.6e}, expansion = {rhs:+.6e}");
    }
    Ok(())
}

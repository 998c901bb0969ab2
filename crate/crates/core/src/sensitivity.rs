//! Directional derivatives of the control-to-state map.
//!
//! `δ = S'(u; h)` minimizes `½ (L δ, δ) - (h, δ)` over the critical cone:
//! `δ = 0` on strictly active nodes, `δ >= 0` on biactive nodes, free elsewhere.

use crate::error::{Error, Result};
use crate::grid::GridFn;
use crate::vi::{solve_complementarity, Constraint, NodeClass, ObstacleSolution};

pub fn directional_derivative(sol: &ObstacleSolution, u: &GridFn, h: &GridFn) -> Result<GridFn> {
    let grid = sol.grid();
    if u.grid() != grid || h.grid() != grid {
        return Err(Error::GridMismatch("solution, control and direction".into()));
    }
    let cons: Vec<Constraint> = sol
        .class
        .iter()
        .map(|c| match c {
            NodeClass::Inactive => Constraint::Free,
            NodeClass::StrictlyActive => Constraint::Fixed(0.0),
            NodeClass::Biactive => Constraint::Lower(0.0),
        })
        .collect();
    let cp = solve_complementarity(grid, h.values(), &cons, None, 200, 100_000)?;
    GridFn::from_values(grid, cp.z)
}

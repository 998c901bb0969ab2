pub mod cli;
pub mod config;
pub mod counterexamples;
pub mod error;
pub mod expr;
pub mod grid;
mod linalg;
pub mod optimizer;
pub mod sensitivity;
pub mod ssc;
pub mod stationarity;
pub mod structure;
pub mod tol;
pub mod vi;

pub use error::{Error, Result};
pub use grid::{Grid, GridFn, GridKind};
pub use vi::{solve_obstacle, ControlBounds, Obstacle, ObstacleSolution};

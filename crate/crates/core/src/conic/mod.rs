//! Second-order cone programs: a small modelling layer, an interior-point
//! backend and a text export.

mod cbf;
mod program;
mod solve;

pub use cbf::{to_cbf, write_cbf};
pub use program::{Affine, ConicProgram, ConstraintId, LinearRow, SocConstraint};
pub use solve::{
    relative_violations, solve, solve_with, ConicSolution, SolveOptions, SolveStatus, DEFAULT_TOL,
};

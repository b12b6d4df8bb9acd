//! Sparse linear algebra and time marching.

mod banded;
mod coupled;
mod krylov;
mod sparse;
mod stepping;

pub use banded::BandedLu;
pub use coupled::{CoupledMethod, CoupledOptions, CoupledSolution, CoupledSystem};
pub use krylov::{linear_solve, linear_solve_from, SolverReport};
pub use sparse::SparseMatrix;
pub use stepping::{
    backward_field, forward_field, interior_slice, interior_spacetime, slice_from_interior, solve_backward,
    solve_forward, spacetime_from_interior, Propagator, StepSolve,
};

//! Time integration, Newton iteration and Krylov solves.

pub mod bdf;
pub mod linear;
pub mod newton;
pub mod transient;

use crate::assembly::AssemblyError;
use linear::LinearSolveError;
use thiserror::Error;

pub use bdf::{bdf_advance, BdfIntegrator, BdfOrder, SemiDiscrete, ThermalState};
pub use linear::{solve_linear_system, LinearSolverConfig, Preconditioner};
pub use newton::{newton_solve, NewtonConfig, NewtonOutcome, NonlinearSystem};
pub use transient::{run_transient, RunError, RunFailure, RunOutput};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Linear(#[from] LinearSolveError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("Newton did not converge after {iterations} iterations (residual {residual:.3e}, initial {initial_residual:.3e})")]
    NewtonNotConverged {
        iterations: usize,
        residual: f64,
        initial_residual: f64,
        last_iterate: Vec<f64>,
    },
    #[error("time history: {0}")]
    History(String),
    #[error("vector length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("temperature {value} at node {node} is not admissible (t = {time} s)")]
    InvalidState { node: usize, value: f64, time: f64 },
}

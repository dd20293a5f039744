//! The boundary-value problem, its homotopy family, and the solvers.

pub mod assembly;
pub mod homotopy;
pub mod newton;
pub mod spec;

pub use assembly::{evaluate, homotopy_residual, linearize, Evaluation, LinearizedOperator};
pub use homotopy::{continue_homotopy, continue_homotopy_with, parse_trace_jsonl, write_trace_jsonl, TraceRecord};
pub use newton::{newton_solve, HomotopyState, LinearSolver, SolveError};
pub use spec::{
    consistent_data, manufactured_data, prepare_background, Background, HypothesisFlags, ProblemSpec, SolverPolicy,
};

//! Branch and bound with convex QP relaxations.

pub mod bnb;
pub mod qp;

pub use bnb::{branch_and_bound, solve_problem, BnbNode, BnbOptions, BranchingHints, NodeOutcome, SolveReport, SolveStatus, TraceEntry};
pub use qp::{solve_qp_relaxation, solve_with_bounds, KktResiduals, QpResult, QpStatus};

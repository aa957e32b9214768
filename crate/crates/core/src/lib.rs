//! Ridge-following solver for min-max problems posed as variational
//! inequalities on a box, with baseline methods, built-in test problems and
//! run diagnostics.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod direction;
pub mod dynamics;
pub mod error;
pub mod objectives;
pub mod verify;
pub mod vi;

pub use direction::{admissible_pair, compute_direction, ideal_direction, CoordSet, Direction, EpochState};
pub use dynamics::{
    detect_exit, epoch_transition, euler_step, ridge_correction, run_backward, run_stonr, solve_stonr, ExitEvent,
    ExitKind, SolverConfig, TerminalStatus, Trajectory, TrajectoryRecord,
};
pub use error::{Result, SolverError};
pub use objectives::{builtin, builtin_problem, perturb, PerturbationKind, PerturbationSpec};
pub use vi::{min_max_to_vi, vi_gap, BoxDomain, MinMaxObjective, Role, Tolerances, ViProblem};

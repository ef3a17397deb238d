//! Jump trajectory optimization: single rigid body dynamics coupled with the
//! leg kinematics, a fixed contact schedule, friction and drivetrain torque
//! limits, solved by an in-repo augmented Lagrangian method.

mod banded;
mod init;
mod problem;
mod residuals;
mod schedule;
mod solver;
mod validate;
mod vars;

pub use init::initial_guess;
pub use problem::{
    build_problem, ground_height, standing_height, DesiredState, JumpProblem, JumpSpec, TorqueBound, Weights,
};
pub use residuals::{
    constraints, cost_residuals, eval_constraints, eval_cost, knot_torques, torque_estimate, Block, Csr, Residuals,
    RowMeta,
};
pub use schedule::ContactSchedule;
pub use solver::{
    solve, solve_from, solve_with, Backend, InnerSolver, JumpSolution, Lbfgs, LevenbergMarquardt, SolveStatus,
    SolverConfig, SolverReport, Subproblem,
};
pub use validate::{row_violation, validate_solution, validator_residuals, BlockStats, LabeledResidual, ViolationReport};
pub use vars::{DecisionVariables, VarLayout};

use thiserror::Error;

use crate::robot::ModelError;

#[derive(Debug, Error)]
pub enum TrajoptError {
    #[error("invalid contact schedule: {0}")]
    Schedule(String),
    #[error("schedule has no stance knots")]
    NoStance,
    #[error("invalid problem: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("solver stopped after {iterations} outer iterations with violation {violation:.3e}")]
    NotConverged {
        iterations: usize,
        violation: f64,
        /// Best iterate and its independent violation report.
        solution: Box<JumpSolution>,
    },
    #[error("solver produced non-finite values")]
    NonFinite,
}

//! Joint impedance tracking of planned jumps and a prioritized whole-body
//! balance controller for standing on the toe.

mod plan;
mod qp;
mod tracker;
mod wbc;

pub use plan::{tiptoe_plan, PhasePlan, PlanPhase, TaskRef, TiptoeController, TiptoeTimings, WbcFailure};
pub use qp::{Qp, QpError, QpSolution};
pub use tracker::{jump_tracker, JumpReference, JumpTracker};
pub use wbc::{resolve_hierarchy, wbc_solve, ContactSpec, Hierarchy, TaskKind, TaskSpec, WbcCommand};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("no active contacts")]
    NoContacts,
    #[error("task stack: {0}")]
    Task(String),
    #[error("required centre of pressure {cop:.4} m is outside the support [{min:.4}, {max:.4}] m")]
    OutsideSupport { cop: f64, min: f64, max: f64 },
    #[error("force program infeasible: {0}")]
    Infeasible(String),
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("invalid reference: {0}")]
    Reference(String),
    #[error("gains: {0}")]
    Gains(String),
}

/// Per-joint stiffness and damping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceGains {
    pub kp: DVector<f64>,
    pub kd: DVector<f64>,
}

impl ImpedanceGains {
    pub fn new(kp: DVector<f64>, kd: DVector<f64>) -> Result<Self, ControlError> {
        if kp.len() != kd.len() {
            return Err(ControlError::Gains("kp and kd differ in length".into()));
        }
        if kp.iter().chain(kd.iter()).any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(ControlError::Gains("gains must be finite and nonnegative".into()));
        }
        Ok(Self { kp, kd })
    }

    pub fn uniform(n: usize, kp: f64, kd: f64) -> Self {
        Self {
            kp: DVector::from_element(n, kp),
            kd: DVector::from_element(n, kd),
        }
    }

    pub fn zero(n: usize) -> Self {
        Self::uniform(n, 0.0, 0.0)
    }

    /// Soft tracking for the jump: the feed-forward torque does the work and
    /// feedback only corrects drift. Hip, knee, ankle, toe.
    pub fn low_gain() -> Self {
        Self {
            kp: DVector::from_vec(vec![40.0, 40.0, 15.0, 8.0]),
            kd: DVector::from_vec(vec![1.0, 1.0, 0.4, 0.2]),
        }
    }

    /// Stiffer profile used under the balance controller.
    pub fn balance() -> Self {
        Self {
            kp: DVector::from_vec(vec![300.0, 300.0, 200.0, 120.0]),
            kd: DVector::from_vec(vec![8.0, 8.0, 5.0, 3.0]),
        }
    }

    /// Named profile: `low`, `balance` or `zero`.
    pub fn profile(name: &str, n_joints: usize) -> Result<Self, ControlError> {
        let g = match name {
            "low" => Self::low_gain(),
            "balance" => Self::balance(),
            "zero" => Self::zero(n_joints),
            other => return Err(ControlError::Gains(format!("unknown gain profile '{other}'"))),
        };
        if g.kp.len() != n_joints {
            return Err(ControlError::Gains(format!(
                "profile '{name}' has {} joints, model has {n_joints}",
                g.kp.len()
            )));
        }
        Ok(g)
    }
}

/// `τ = τ_ff + kp ∘ (q_des − q) + kd ∘ (q̇_des − q̇)`.
pub fn impedance_torque(
    q_des: &DVector<f64>,
    qd_des: &DVector<f64>,
    tau_ff: &DVector<f64>,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    gains: &ImpedanceGains,
) -> DVector<f64> {
    let n = q.len();
    assert!(
        [q_des.len(), qd_des.len(), tau_ff.len(), qd.len(), gains.kp.len(), gains.kd.len()]
            .iter()
            .all(|&l| l == n),
        "impedance_torque: dimension mismatch"
    );
    tau_ff + gains.kp.component_mul(&(q_des - q)) + gains.kd.component_mul(&(qd_des - qd))
}

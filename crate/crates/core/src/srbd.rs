//! Single rigid body dynamics: the whole robot as one body with constant
//! body-frame inertia, driven by contact forces and gravity.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub use crate::math::exp_map;
use crate::math::{orthonormality_error, orthonormalize, vee};

pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);
pub const G: f64 = 9.81;
pub const MAX_DT: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SrbdError {
    #[error("time step {0} outside (0, {MAX_DT}]")]
    TimeStep(f64),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("contact force and position counts differ ({forces} vs {positions})")]
    CountMismatch { forces: usize, positions: usize },
    #[error("inertia must be symmetric positive definite")]
    Inertia,
    #[error("mass must be positive")]
    Mass,
    #[error("rotation is not orthonormal (|RᵀR − I| = {0:.3e})")]
    NotOrthonormal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrbdState {
    pub p: Vector3<f64>,
    pub rot: Matrix3<f64>,
    pub v: Vector3<f64>,
    /// Body-frame angular velocity.
    pub omega: Vector3<f64>,
}

impl SrbdState {
    pub fn at_rest(p: Vector3<f64>) -> Self {
        Self {
            p,
            rot: Matrix3::identity(),
            v: Vector3::zeros(),
            omega: Vector3::zeros(),
        }
    }

    /// Row-major flattening of the rotation matrix.
    pub fn rot_vec(&self) -> [f64; 9] {
        let r = &self.rot;
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]]
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.rot.iter()).chain(self.v.iter()).chain(self.omega.iter()).all(|x| x.is_finite())
    }
}

/// World-frame contact forces, one per contact point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContactForceSet {
    pub forces: Vec<Vector3<f64>>,
}

impl ContactForceSet {
    pub fn zeros(n: usize) -> Self {
        Self {
            forces: vec![Vector3::zeros(); n],
        }
    }

    pub fn total(&self) -> Vector3<f64> {
        self.forces.iter().sum()
    }
}

/// Net moment of the contact forces about `p`, world frame.
pub fn net_moment(p: &Vector3<f64>, forces: &[Vector3<f64>], positions: &[Vector3<f64>]) -> Vector3<f64> {
    forces.iter().zip(positions).map(|(f, r)| (r - p).cross(f)).sum()
}

/// One semi-implicit Euler step without the final re-orthonormalization.
///
/// The gyroscopic term is applied by rotating the body angular momentum
/// through `Exp(-dt ω)`, which matches `-ω × Iω` to first order and keeps
/// `|Iω|` exact in torque-free motion.
pub fn srbd_step_raw(
    state: &SrbdState,
    forces: &[Vector3<f64>],
    positions: &[Vector3<f64>],
    mass: f64,
    inertia_body: &Matrix3<f64>,
    inertia_inv: &Matrix3<f64>,
    dt: f64,
) -> SrbdState {
    let f_sum: Vector3<f64> = forces.iter().sum();
    let v = state.v + (f_sum / mass + GRAVITY) * dt;
    let p = state.p + v * dt;
    let torque_body = state.rot.transpose() * net_moment(&state.p, forces, positions);
    let momentum = exp_map(&(-dt * state.omega)) * (inertia_body * state.omega) + torque_body * dt;
    let omega = inertia_inv * momentum;
    let rot = state.rot * exp_map(&(dt * omega));
    SrbdState { p, rot, v, omega }
}

fn check_inputs(
    state: &SrbdState,
    forces: &[Vector3<f64>],
    positions: &[Vector3<f64>],
    mass: f64,
    inertia_body: &Matrix3<f64>,
    dt: f64,
) -> Result<Matrix3<f64>, SrbdError> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(SrbdError::TimeStep(dt));
    }
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(SrbdError::Mass);
    }
    if forces.len() != positions.len() {
        return Err(SrbdError::CountMismatch {
            forces: forces.len(),
            positions: positions.len(),
        });
    }
    if forces.iter().any(|f| !f.iter().all(|x| x.is_finite())) {
        return Err(SrbdError::NonFinite("contact force"));
    }
    if positions.iter().any(|r| !r.iter().all(|x| x.is_finite())) {
        return Err(SrbdError::NonFinite("contact position"));
    }
    if !state.is_finite() {
        return Err(SrbdError::NonFinite("state"));
    }
    if (inertia_body - inertia_body.transpose()).amax() > 1e-12 * inertia_body.amax() {
        return Err(SrbdError::Inertia);
    }
    inertia_body
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(SrbdError::Inertia)
}

/// Propagates the body one step and re-orthonormalizes the rotation.
pub fn srbd_step(
    state: &SrbdState,
    forces: &ContactForceSet,
    contact_positions: &[Vector3<f64>],
    mass: f64,
    inertia_body: &Matrix3<f64>,
    dt: f64,
) -> Result<SrbdState, SrbdError> {
    let inv = check_inputs(state, &forces.forces, contact_positions, mass, inertia_body, dt)?;
    let mut next = srbd_step_raw(state, &forces.forces, contact_positions, mass, inertia_body, &inv, dt);
    next.rot = orthonormalize(&next.rot);
    Ok(next)
}

/// `vee(½(R_err − R_errᵀ))` with `R_err = R_desᵀ R`: the axis scaled by
/// `sin θ` of the relative rotation.
pub fn rotation_error(r_des: &Matrix3<f64>, r: &Matrix3<f64>) -> Result<Vector3<f64>, SrbdError> {
    for m in [r_des, r] {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(SrbdError::NonFinite("rotation"));
        }
        let e = orthonormality_error(m);
        if e > 1e-6 {
            return Err(SrbdError::NotOrthonormal(e));
        }
    }
    Ok(rotation_error_unchecked(r_des, r))
}

/// Same as [`rotation_error`] without the orthonormality check. Linear in `r`.
pub fn rotation_error_unchecked(r_des: &Matrix3<f64>, r: &Matrix3<f64>) -> Vector3<f64> {
    let e = r_des.transpose() * r;
    vee(&((e - e.transpose()) * 0.5))
}

/// Kinetic plus potential energy of the body.
pub fn energy(state: &SrbdState, mass: f64, inertia_body: &Matrix3<f64>) -> f64 {
    0.5 * mass * state.v.norm_squared() + 0.5 * state.omega.dot(&(inertia_body * state.omega)) - mass * GRAVITY.dot(&state.p)
}

/// World-frame angular momentum about the CoM.
pub fn angular_momentum(state: &SrbdState, inertia_body: &Matrix3<f64>) -> Vector3<f64> {
    state.rot * inertia_body * state.omega
}

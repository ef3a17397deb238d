//! Articulated planar simulator with penalty ground contact, used to replay
//! planned jumps and to exercise the balance controller.
//!
//! The ground is the plane `z = 0`. Contact forces come from a spring-damper
//! along the normal and a stick spring-damper along the ground capped at
//! `μ f_n`. Both are treated linearly implicitly inside the semi-implicit
//! Euler step, which keeps the light toe link stable at the default rate.

mod dynamics;
mod log;
mod phases;
mod rollout;

pub use dynamics::{ChainFrames, PlanarChain, BASE_DOF};
pub use log::{read_log_csv, write_log_csv, LogSample, RolloutLog};
pub use phases::{detect_phases, detect_phases_from, Phase, PhaseKind, FLIGHT_FORCE_THRESHOLD, PHASE_HYSTERESIS};
pub use rollout::{rollout, Actuation, BacklashInjection, Controller, RolloutConfig, CONTROL_RATE_HZ};

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::robot::RobotModel;

/// Largest physics step accepted by [`Simulator::step`].
pub const MAX_SIM_DT: f64 = 2e-4;
pub const DEFAULT_SIM_DT: f64 = 1e-4;
/// Motor rotor inertia before the actuator's internal gearbox, kg·m².
/// Nominal value; the reflected inertia is what keeps the toe from being
/// a near-massless link.
pub const DEFAULT_ROTOR_INERTIA: f64 = 6.0e-5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("time step {0} outside (0, {MAX_SIM_DT}]")]
    TimeStep(f64),
    #[error("unsupported model: {0}")]
    Unsupported(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite joint torque at step {step} (t = {t:.4} s, joint {joint})")]
    NonFiniteTorque { step: usize, t: f64, joint: usize },
    #[error("mass matrix is not positive definite; state: {state}")]
    MassMatrix { state: String },
    #[error("state became non-finite at t = {0:.4} s")]
    Diverged(f64),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("log csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Generalized state of the planar robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Torso (x, z, pitch).
    pub base: Vector3<f64>,
    pub base_vel: Vector3<f64>,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub t: f64,
    /// Ground x where each contact stuck; `None` while not touching.
    pub anchors: Vec<Option<f64>>,
}

impl SimState {
    pub fn new(base: Vector3<f64>, q: DVector<f64>, n_contacts: usize) -> Self {
        let n = q.len();
        Self {
            base,
            base_vel: Vector3::zeros(),
            q,
            qd: DVector::zeros(n),
            t: 0.0,
            anchors: vec![None; n_contacts],
        }
    }

    pub fn position(&self) -> DVector<f64> {
        let mut v = DVector::zeros(BASE_DOF + self.q.len());
        v.fixed_rows_mut::<3>(0).copy_from(&self.base);
        v.rows_mut(BASE_DOF, self.q.len()).copy_from(&self.q);
        v
    }

    pub fn velocity(&self) -> DVector<f64> {
        let mut v = DVector::zeros(BASE_DOF + self.qd.len());
        v.fixed_rows_mut::<3>(0).copy_from(&self.base_vel);
        v.rows_mut(BASE_DOF, self.qd.len()).copy_from(&self.qd);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.base.iter().chain(self.base_vel.iter()).chain(self.q.iter()).chain(self.qd.iter()).all(|x| x.is_finite())
    }
}

/// Penalty ground contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactModel {
    pub k_n: f64,
    pub d_n: f64,
    pub mu: f64,
    pub k_t: f64,
    pub d_t: f64,
}

impl Default for ContactModel {
    fn default() -> Self {
        Self {
            k_n: 1e5,
            d_n: 3e3,
            mu: 0.7,
            k_t: 5e4,
            d_t: 1.5e3,
        }
    }
}

impl ContactModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.k_n) && ok(self.d_n) && ok(self.mu) && ok(self.k_t) && self.d_t >= 0.0) {
            return Err(SimError::Invalid(format!("contact model {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMode {
    Floating,
    /// Torso welded to the world.
    Pinned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub contact: ContactModel,
    pub dt: f64,
    pub base: BaseMode,
    pub rotor_inertia: f64,
    /// Penalty beyond the joint range.
    pub limit_stiffness: f64,
    pub limit_damping: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            contact: ContactModel::default(),
            dt: DEFAULT_SIM_DT,
            base: BaseMode::Floating,
            rotor_inertia: DEFAULT_ROTOR_INERTIA,
            limit_stiffness: 1e3,
            limit_damping: 2.0,
        }
    }
}

/// Ground reaction at one contact point, world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactForce {
    pub normal: f64,
    pub tangential: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: SimState,
    pub forces: Vec<ContactForce>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tangent {
    Stick,
    Slide(f64),
}

#[derive(Debug, Clone)]
struct ContactRow {
    point: Vector2<f64>,
    jac: DMatrix<f64>,
    /// Constant and slope of the normal law in the new normal velocity.
    c_n: f64,
    e_n: f64,
    c_t: f64,
    e_t: f64,
    pressing: bool,
    tangent: Tangent,
    anchor: f64,
}

/// Planar robot plus simulation parameters. Cheap to share between rollouts.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub chain: PlanarChain,
    pub params: SimParams,
    /// Reflected rotor inertia in joint space.
    pub armature: DMatrix<f64>,
    free: Vec<usize>,
}

impl Simulator {
    pub fn new(model: &RobotModel, params: SimParams) -> Result<Self, SimError> {
        if !(params.dt > 0.0 && params.dt <= MAX_SIM_DT) {
            return Err(SimError::TimeStep(params.dt));
        }
        params.contact.validate()?;
        if !(params.rotor_inertia >= 0.0 && params.limit_stiffness >= 0.0 && params.limit_damping >= 0.0) {
            return Err(SimError::Invalid("rotor inertia and limit gains must be nonnegative".into()));
        }
        let chain = PlanarChain::new(model)?;
        let nj = chain.n_joints();
        let armature = if params.rotor_inertia > 0.0 && model.actuators.len() == model.drivetrain.motor_count {
            // evaluated once at the stand pose; the small change with the
            // linkage angle is ignored
            let q_ref = model.pose("stand").cloned().unwrap_or_else(|| DVector::zeros(nj));
            let jac = model.drivetrain.jacobian(&q_ref);
            let reflected = DVector::from_iterator(
                model.actuators.len(),
                model.actuators.iter().map(|a| params.rotor_inertia * a.internal_gear_ratio.powi(2)),
            );
            jac.transpose() * DMatrix::from_diagonal(&reflected) * jac
        } else {
            DMatrix::zeros(nj, nj)
        };
        let free = match params.base {
            BaseMode::Floating => (0..chain.n_dof()).collect(),
            BaseMode::Pinned => (BASE_DOF..chain.n_dof()).collect(),
        };
        Ok(Self {
            chain,
            params,
            armature,
            free,
        })
    }

    pub fn n_joints(&self) -> usize {
        self.chain.n_joints()
    }

    pub fn n_contacts(&self) -> usize {
        self.chain.n_contacts()
    }

    /// Torso placed at horizontal position `x` with the lowest contact on the ground.
    pub fn standing_state(&self, q: &DVector<f64>, x: f64, pitch: f64) -> SimState {
        let mut s = SimState::new(Vector3::new(x, 0.0, pitch), q.clone(), self.n_contacts());
        let frames = self.frames(&s);
        let lowest = (0..self.n_contacts())
            .map(|i| self.chain.contact_point(&frames, i).y)
            .fold(f64::INFINITY, f64::min);
        if lowest.is_finite() {
            s.base.y = -lowest;
        }
        s
    }

    pub fn frames(&self, state: &SimState) -> ChainFrames {
        self.chain.frames(&state.position(), &state.velocity())
    }

    /// Mass matrix including the reflected rotor inertia.
    pub fn mass_and_bias(&self, frames: &ChainFrames) -> (DMatrix<f64>, DVector<f64>) {
        let (mut m, h) = self.chain.mass_and_bias(frames);
        let nj = self.n_joints();
        let mut block = m.view_mut((BASE_DOF, BASE_DOF), (nj, nj));
        block += &self.armature;
        (m, h)
    }

    pub fn kinetic_energy(&self, state: &SimState) -> f64 {
        let (m, _) = self.mass_and_bias(&self.frames(state));
        let u = self.pinned_velocity(state);
        0.5 * u.dot(&(m * &u))
    }

    pub fn energy(&self, state: &SimState) -> f64 {
        self.kinetic_energy(state) + self.chain.potential_energy(&self.frames(state))
    }

    /// Generalized velocity with the base zeroed when pinned.
    fn pinned_velocity(&self, state: &SimState) -> DVector<f64> {
        let mut u = state.velocity();
        if self.params.base == BaseMode::Pinned {
            u.fixed_rows_mut::<3>(0).fill(0.0);
        }
        u
    }

    /// Joint torques that hold the current posture against gravity when the
    /// base is pinned.
    pub fn gravity_torques(&self, state: &SimState) -> DVector<f64> {
        self.chain.gravity_forces(&state.position()).rows(BASE_DOF, self.n_joints()).into_owned()
    }

    pub fn com(&self, state: &SimState) -> Vector2<f64> {
        self.chain.com(&self.frames(state))
    }

    pub fn contact_points(&self, state: &SimState) -> Vec<Vector2<f64>> {
        let frames = self.frames(state);
        (0..self.n_contacts()).map(|i| self.chain.contact_point(&frames, i)).collect()
    }

    fn limit_torques(&self, state: &SimState) -> DVector<f64> {
        let (k, d) = (self.params.limit_stiffness, self.params.limit_damping);
        DVector::from_fn(self.n_joints(), |j, _| {
            let (q, qd) = (state.q[j], state.qd[j]);
            if q > self.chain.q_max[j] {
                -k * (q - self.chain.q_max[j]) - d * qd
            } else if q < self.chain.q_min[j] {
                -k * (q - self.chain.q_min[j]) - d * qd
            } else {
                0.0
            }
        })
    }

    fn solve_free(&self, a: &DMatrix<f64>, b: &DVector<f64>, state: &SimState) -> Result<DVector<f64>, SimError> {
        let nf = self.free.len();
        let af = DMatrix::from_fn(nf, nf, |i, j| a[(self.free[i], self.free[j])]);
        let bf = DVector::from_fn(nf, |i, _| b[self.free[i]]);
        let chol = af.cholesky().ok_or_else(|| SimError::MassMatrix {
            state: format!("{state:?}"),
        })?;
        let xf = chol.solve(&bf);
        let mut x = DVector::zeros(a.nrows());
        for (i, &k) in self.free.iter().enumerate() {
            x[k] = xf[i];
        }
        Ok(x)
    }

    /// One semi-implicit Euler step with joint torques `tau`.
    pub fn step(&self, state: &SimState, tau: &DVector<f64>) -> Result<StepOutput, SimError> {
        let nj = self.n_joints();
        if tau.len() != nj {
            return Err(SimError::Dimension {
                expected: nj,
                got: tau.len(),
            });
        }
        if state.q.len() != nj || state.qd.len() != nj || state.anchors.len() != self.n_contacts() {
            return Err(SimError::Dimension {
                expected: nj,
                got: state.q.len(),
            });
        }
        if let Some(joint) = tau.iter().position(|t| !t.is_finite()) {
            return Err(SimError::NonFiniteTorque {
                step: 0,
                t: state.t,
                joint,
            });
        }
        let dt = self.params.dt;
        let cm = self.params.contact;
        let pos = state.position();
        let vel = self.pinned_velocity(state);
        let frames = self.chain.frames(&pos, &vel);
        let (m, h) = self.mass_and_bias(&frames);
        let mut gen = -h;
        {
            let mut joints = gen.rows_mut(BASE_DOF, nj);
            joints += tau;
            joints += self.limit_torques(state);
        }
        let momentum = &m * &vel;

        let mut rows: Vec<ContactRow> = (0..self.n_contacts())
            .map(|i| {
                let point = self.chain.contact_point(&frames, i);
                let depth = -point.y;
                let anchor = state.anchors[i].unwrap_or(point.x);
                ContactRow {
                    point,
                    jac: self.chain.contact_jacobian(&frames, i),
                    c_n: cm.k_n * depth,
                    e_n: cm.d_n + dt * cm.k_n,
                    c_t: -cm.k_t * (point.x - anchor),
                    e_t: cm.d_t + dt * cm.k_t,
                    pressing: depth > 0.0,
                    tangent: Tangent::Stick,
                    anchor,
                }
            })
            .collect();

        let mut u_new = vel.clone();
        for _ in 0..12 {
            let mut a = m.clone();
            let mut b = &momentum + &gen * dt;
            for r in rows.iter().filter(|r| r.pressing) {
                let jx = r.jac.row(0).transpose();
                let jz = r.jac.row(1).transpose();
                a += &jz * jz.transpose() * (dt * r.e_n);
                b += &jz * (dt * r.c_n);
                match r.tangent {
                    Tangent::Stick => {
                        a += &jx * jx.transpose() * (dt * r.e_t);
                        b += &jx * (dt * r.c_t);
                    }
                    Tangent::Slide(f) => b += &jx * (dt * f),
                }
            }
            u_new = self.solve_free(&a, &b, state)?;
            let mut changed = false;
            for r in rows.iter_mut().filter(|r| r.pressing) {
                let v = point_velocity(&r.jac, &u_new);
                let f_n = r.c_n - r.e_n * v.y;
                if f_n <= 0.0 {
                    r.pressing = false;
                    changed = true;
                    continue;
                }
                let stick = r.c_t - r.e_t * v.x;
                let cap = cm.mu * f_n;
                let next = if stick.abs() <= cap {
                    Tangent::Stick
                } else {
                    Tangent::Slide(cap.copysign(stick))
                };
                if std::mem::discriminant(&next) != std::mem::discriminant(&r.tangent) {
                    changed = true;
                }
                if let (Tangent::Slide(old), Tangent::Slide(new)) = (r.tangent, next) {
                    if (old - new).abs() > 1e-9 * (1.0 + new.abs()) {
                        changed = true;
                    }
                }
                r.tangent = next;
            }
            if !changed {
                break;
            }
        }

        // forces from the contact laws at the implicit velocity, then one
        // explicit update with exactly those forces
        let mut forces = vec![ContactForce::default(); rows.len()];
        let mut external = gen.clone();
        for (r, f) in rows.iter().zip(forces.iter_mut()) {
            if !r.pressing {
                continue;
            }
            let v = point_velocity(&r.jac, &u_new);
            let f_n = (r.c_n - r.e_n * v.y).max(0.0);
            let cap = cm.mu * f_n;
            let f_t = (r.c_t - r.e_t * v.x).clamp(-cap, cap);
            *f = ContactForce {
                normal: f_n,
                tangential: f_t,
            };
            external += r.jac.transpose() * Vector2::new(f_t, f_n);
        }
        let accel = self.solve_free(&m, &external, state)?;
        let u_next = &vel + accel * dt;
        let pos_next = &pos + &u_next * dt;

        let mut next = SimState {
            base: Vector3::new(pos_next[0], pos_next[1], pos_next[2]),
            base_vel: Vector3::new(u_next[0], u_next[1], u_next[2]),
            q: pos_next.rows(BASE_DOF, nj).into_owned(),
            qd: u_next.rows(BASE_DOF, nj).into_owned(),
            t: state.t + dt,
            anchors: vec![None; rows.len()],
        };
        for (i, (r, f)) in rows.iter().zip(&forces).enumerate() {
            let v = point_velocity(&r.jac, &u_next);
            let x_new = r.point.x + dt * v.x;
            let z_new = r.point.y + dt * v.y;
            if f.normal > 0.0 || z_new < 0.0 {
                let slipping = f.tangential.abs() >= cm.mu * f.normal && f.normal > 0.0;
                next.anchors[i] = Some(if slipping {
                    x_new + f.tangential / cm.k_t
                } else if r.pressing {
                    r.anchor
                } else {
                    x_new
                });
            }
        }
        if !next.is_finite() {
            return Err(SimError::Diverged(next.t));
        }
        Ok(StepOutput { state: next, forces })
    }
}

fn point_velocity(jac: &DMatrix<f64>, u: &DVector<f64>) -> Vector2<f64> {
    Vector2::new(jac.row(0).dot(&u.transpose()), jac.row(1).dot(&u.transpose()))
}

/// Single step with default parameters apart from the contact model and `dt`.
pub fn sim_step(
    state: &SimState,
    joint_torques: &DVector<f64>,
    model: &RobotModel,
    contact: &ContactModel,
    dt: f64,
) -> Result<StepOutput, SimError> {
    let sim = Simulator::new(
        model,
        SimParams {
            contact: *contact,
            dt,
            ..SimParams::default()
        },
    )?;
    sim.step(state, joint_torques)
}

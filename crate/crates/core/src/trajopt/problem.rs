use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::robot::RobotModel;
use crate::srbd::{SrbdState, G};

use super::schedule::ContactSchedule;
use super::vars::VarLayout;
use super::TrajoptError;

/// Diagonal tracking weights for `[p, orientation error, v, ω]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub diag: [f64; 12],
}

impl Weights {
    pub fn uniform(position: f64, orientation: f64, velocity: f64, angular_velocity: f64) -> Self {
        let mut diag = [0.0; 12];
        diag[0..3].fill(position);
        diag[3..6].fill(orientation);
        diag[6..9].fill(velocity);
        diag[9..12].fill(angular_velocity);
        Self { diag }
    }
}

impl Default for Weights {
    fn default() -> Self {
        Self::uniform(100.0, 50.0, 10.0, 5.0)
    }
}

/// Right-hand side of the motor torque block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TorqueBound {
    /// `J_θ(q)ᵀ τ_motor_max` from the drivetrain.
    Coactuated,
    /// Same as `Coactuated` except one joint gets a constant bound.
    FixedJoint { joint: usize, limit: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesiredState {
    pub p: Vector3<f64>,
    pub rot: Matrix3<f64>,
    pub v: Vector3<f64>,
    pub omega: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct JumpProblem {
    pub model: RobotModel,
    pub schedule: ContactSchedule,
    pub weights: Weights,
    pub desired: Vec<DesiredState>,
    pub mu: f64,
    pub torque_bound: TorqueBound,
    pub initial_state: SrbdState,
    pub initial_q: DVector<f64>,
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    pub inertia_inv: Matrix3<f64>,
    /// Torso height when standing flat-footed.
    pub standing_height: f64,
    /// Requested rise of the torso above `standing_height` at the last knot.
    pub apex_rise: f64,
    /// Torso height and joints of the nominal takeoff used for seeding.
    pub takeoff_height: f64,
    pub takeoff_q: DVector<f64>,
    pub takeoff_x: f64,
    /// Variables held at their initial-guess value by the solver.
    pub fixed: Vec<bool>,
}

impl JumpProblem {
    pub fn layout(&self) -> VarLayout {
        VarLayout::new(self.model.n_joints(), self.model.n_contacts(), self.schedule.n_knots())
    }

    pub fn n_knots(&self) -> usize {
        self.schedule.n_knots()
    }

    pub fn dt(&self) -> f64 {
        self.schedule.dt
    }

    pub fn weight(&self) -> f64 {
        self.mass * G
    }

    /// Absolute torso height demanded at the last knot, if airborne.
    pub fn apex_target(&self) -> Option<f64> {
        self.schedule
            .has_flight()
            .then_some(self.standing_height + self.apex_rise)
    }

    pub fn torque_capacity(&self, q: &DVector<f64>) -> DVector<f64> {
        let mut cap = self.model.drivetrain.capacity_unchecked(q);
        if let TorqueBound::FixedJoint { joint, limit } = self.torque_bound {
            cap[joint] = limit;
        }
        cap
    }

    pub fn torque_capacity_gradient(&self, q: &DVector<f64>) -> nalgebra::DMatrix<f64> {
        let mut g = self.model.drivetrain.capacity_gradient(q);
        if let TorqueBound::FixedJoint { joint, .. } = self.torque_bound {
            g.row_mut(joint).fill(0.0);
        }
        g
    }
}

/// Parameters for a vertical jump (or a hover when `apex` is zero).
#[derive(Debug, Clone, PartialEq)]
pub struct JumpSpec {
    /// Torso rise above the standing height at the top of the flight.
    pub apex: f64,
    pub stance_duration: f64,
    pub dt: f64,
    pub mu: f64,
    /// Fraction of the stance after which the heel leaves the ground.
    pub heel_release_fraction: f64,
    pub weights: Weights,
    pub torque_bound: TorqueBound,
    /// Named start pose; `crouch` for jumps and `stand` for hovers by default.
    pub start_pose: Option<String>,
}

impl Default for JumpSpec {
    fn default() -> Self {
        Self {
            apex: 0.3,
            stance_duration: 0.4,
            dt: 0.01,
            mu: 0.7,
            heel_release_fraction: 0.75,
            weights: Weights::default(),
            torque_bound: TorqueBound::Coactuated,
            start_pose: None,
        }
    }
}

impl JumpSpec {
    pub fn hover() -> Self {
        Self {
            apex: 0.0,
            ..Self::default()
        }
    }

    pub fn is_hover(&self) -> bool {
        self.apex <= 0.0
    }

    pub fn stance_knots(&self) -> usize {
        (self.stance_duration / self.dt).round() as usize
    }

    fn start_q(&self, model: &RobotModel) -> Result<DVector<f64>, TrajoptError> {
        let name = self
            .start_pose
            .clone()
            .unwrap_or_else(|| if self.is_hover() { "stand" } else { "crouch" }.to_string());
        model
            .pose(&name)
            .cloned()
            .ok_or_else(|| TrajoptError::InvalidSpec(format!("model has no pose named '{name}'")))
    }

    /// Contact schedule sized so the ballistic arc from the nominal takeoff
    /// reaches the apex at the last knot.
    pub fn schedule(&self, model: &RobotModel) -> Result<ContactSchedule, TrajoptError> {
        if !(self.dt > 0.0) || !(self.stance_duration > 0.0) {
            return Err(TrajoptError::InvalidSpec("dt and stance duration must be positive".into()));
        }
        let n_stance = self.stance_knots();
        if n_stance == 0 {
            return Err(TrajoptError::NoStance);
        }
        if self.is_hover() {
            return Ok(ContactSchedule::stance_only(model.n_contacts(), n_stance + 1, self.dt));
        }
        let stand = standing_height(model)?;
        let (takeoff_z, _, _) = nominal_takeoff(model, &self.start_q(model)?)?;
        let rise = stand + self.apex - takeoff_z;
        let v_takeoff = (2.0 * G * rise.max(0.0)).sqrt();
        let n_flight = ((v_takeoff / (G * self.dt)).ceil() as usize).max(1);
        let heel = (self.heel_release_fraction * n_stance as f64).round() as usize;
        Ok(ContactSchedule::jump(model, self.dt, n_stance, n_flight, heel))
    }

    pub fn build(&self, model: &RobotModel) -> Result<JumpProblem, TrajoptError> {
        let schedule = self.schedule(model)?;
        build_problem(
            model,
            schedule,
            &self.start_q(model)?,
            self.apex,
            self.weights,
            self.mu,
            self.torque_bound,
        )
    }
}

/// Torso height with the given joints and every contact point at or above
/// the ground, the lowest one touching it.
pub fn ground_height(model: &RobotModel, q: &DVector<f64>) -> Result<f64, TrajoptError> {
    let pts = model.forward_kinematics(&Vector3::zeros(), &Matrix3::identity(), q)?;
    Ok(-pts.iter().map(|r| r.z).fold(f64::INFINITY, f64::min))
}

pub fn standing_height(model: &RobotModel) -> Result<f64, TrajoptError> {
    let q = model
        .pose("stand")
        .ok_or_else(|| TrajoptError::InvalidSpec("model has no 'stand' pose".into()))?;
    ground_height(model, q)
}

/// Torso height, torso x and joints at the nominal takeoff, with the toe
/// contacts where they are in the start pose.
fn nominal_takeoff(model: &RobotModel, start_q: &DVector<f64>) -> Result<(f64, f64, DVector<f64>), TrajoptError> {
    let q = model.pose("takeoff").cloned().unwrap_or_else(|| start_q.clone());
    let toe = model.contacts_in_group(crate::robot::ContactGroup::Toe);
    let first = *toe.first().ok_or_else(|| TrajoptError::InvalidSpec("model has no toe contacts".into()))?;
    let start = model.forward_kinematics(&Vector3::zeros(), &Matrix3::identity(), start_q)?;
    let at_takeoff = model.forward_kinematics(&Vector3::zeros(), &Matrix3::identity(), &q)?;
    let toe_x_world = start[first].x;
    let x = toe_x_world - at_takeoff[first].x;
    let z = -toe.iter().map(|&i| at_takeoff[i].z).fold(f64::INFINITY, f64::min);
    Ok((z, x, q))
}

/// Crouch-to-extend push with an acceleration that falls linearly to zero
/// at takeoff, preceded by a hold, then a ballistic arc.
fn desired_trajectory(
    schedule: &ContactSchedule,
    p0: &Vector3<f64>,
    takeoff_z: f64,
    takeoff_x: f64,
    apex_z: Option<f64>,
) -> Vec<DesiredState> {
    let n = schedule.n_knots();
    let dt = schedule.dt;
    let hold = |p: Vector3<f64>| DesiredState {
        p,
        rot: Matrix3::identity(),
        v: Vector3::zeros(),
        omega: Vector3::zeros(),
    };
    let Some(apex_z) = apex_z else {
        return vec![hold(*p0); n];
    };
    let stance_t = schedule.stance_knots() as f64 * dt;
    let lift = (takeoff_z - p0.z).max(1e-3);
    let v_to = (2.0 * G * (apex_z - takeoff_z).max(0.0)).sqrt().max(0.1);
    let push_t = (1.5 * lift / v_to).min(stance_t);
    let a0 = 2.0 * v_to / push_t;
    let hold_t = stance_t - push_t;
    let dx_per_dz = (takeoff_x - p0.x) / lift;
    (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            let (z, vz) = if t <= hold_t {
                (p0.z, 0.0)
            } else if t <= stance_t {
                let s = t - hold_t;
                (p0.z + a0 * (s * s / 2.0 - s * s * s / (6.0 * push_t)), a0 * (s - s * s / (2.0 * push_t)))
            } else {
                let s = t - stance_t;
                let z_end = p0.z + a0 * push_t * push_t / 3.0;
                let v_end = a0 * push_t / 2.0;
                (z_end + v_end * s - 0.5 * G * s * s, v_end - G * s)
            };
            let (x, vx) = if t <= stance_t {
                (p0.x + dx_per_dz * (z - p0.z), dx_per_dz * vz)
            } else {
                (p0.x + dx_per_dz * lift, 0.0)
            };
            DesiredState {
                p: Vector3::new(x, p0.y, z),
                rot: Matrix3::identity(),
                v: Vector3::new(vx, 0.0, vz),
                omega: Vector3::zeros(),
            }
        })
        .collect()
}

/// Assembles a jump problem starting at rest in `start_q` with the flat
/// foot on the ground. `apex` is the torso rise above standing height.
pub fn build_problem(
    model: &RobotModel,
    schedule: ContactSchedule,
    start_q: &DVector<f64>,
    apex: f64,
    weights: Weights,
    mu: f64,
    torque_bound: TorqueBound,
) -> Result<JumpProblem, TrajoptError> {
    schedule.validate(model.n_contacts())?;
    if !(mu > 0.0) {
        return Err(TrajoptError::InvalidSpec("friction coefficient must be positive".into()));
    }
    if weights.diag.iter().any(|w| !(*w >= 0.0)) {
        return Err(TrajoptError::InvalidSpec("weights must be nonnegative".into()));
    }
    if apex < 0.0 {
        return Err(TrajoptError::InvalidSpec("apex must not be below the standing height".into()));
    }
    if schedule.has_flight() && apex == 0.0 {
        return Err(TrajoptError::InvalidSpec("a flight phase needs a positive apex".into()));
    }
    if let TorqueBound::FixedJoint { joint, limit } = torque_bound {
        if joint >= model.n_joints() || !(limit >= 0.0) {
            return Err(TrajoptError::InvalidSpec("fixed torque bound needs a valid joint and limit".into()));
        }
    }
    model.check_dims(start_q)?;

    let standing = standing_height(model)?;
    let z0 = ground_height(model, start_q)?;
    let p0 = Vector3::new(0.0, 0.0, z0);
    let (takeoff_z, takeoff_x, takeoff_q) = nominal_takeoff(model, start_q)?;
    let apex_z = schedule.has_flight().then_some(standing + apex);
    let desired = desired_trajectory(&schedule, &p0, takeoff_z, takeoff_x, apex_z);

    let crouch = model.pose("crouch").unwrap_or(start_q);
    let inertia = model.composite_inertia(crouch)?;
    let inertia_inv = inertia
        .try_inverse()
        .ok_or_else(|| TrajoptError::InvalidSpec("composite inertia is singular".into()))?;

    let layout = VarLayout::new(model.n_joints(), model.n_contacts(), schedule.n_knots());
    let mut fixed = vec![false; layout.len()];
    for idx in layout.knot(0)..layout.q(0) + model.n_joints() {
        fixed[idx] = true;
    }
    for k in 0..schedule.n_knots() {
        for i in 0..model.n_contacts() {
            let f = layout.force(k, i);
            if !schedule.is_active(k, i) {
                fixed[f..f + 3].fill(true);
            } else if model.planar {
                fixed[f + 1] = true;
            }
        }
    }

    Ok(JumpProblem {
        model: model.clone(),
        schedule,
        weights,
        desired,
        mu,
        torque_bound,
        initial_state: SrbdState::at_rest(p0),
        initial_q: start_q.clone(),
        mass: model.total_mass(),
        inertia,
        inertia_inv,
        standing_height: standing,
        apex_rise: apex,
        takeoff_height: takeoff_z,
        takeoff_q,
        takeoff_x,
        fixed,
    })
}

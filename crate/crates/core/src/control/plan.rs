//! Timed contact/task schedules and the tiptoe balance procedure: rise on
//! the flat foot, move the body until the centre of mass sits over the toe,
//! then drop the heel contact, lock the knee and lift the body onto the toe.

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::robot::{ContactGroup, RobotModel};
use crate::sim::{Controller, SimParams, SimState, Simulator, BASE_DOF};

use super::wbc::{wbc_solve, ContactSpec, TaskKind, TaskSpec, WbcCommand};
use super::{impedance_torque, ControlError, ImpedanceGains};

/// A task whose target moves from `from` to `to` over `ramp` seconds after
/// the phase starts, then holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRef {
    pub kind: TaskKind,
    pub priority: u32,
    pub from: DVector<f64>,
    pub to: DVector<f64>,
    pub ramp: f64,
    pub kp: f64,
    pub kd: f64,
}

impl TaskRef {
    fn hold(kind: TaskKind, priority: u32, at: DVector<f64>) -> Self {
        Self {
            kind,
            priority,
            from: at.clone(),
            to: at,
            ramp: 0.0,
            kp: 100.0,
            kd: 20.0,
        }
    }

    fn moving(kind: TaskKind, priority: u32, from: DVector<f64>, to: DVector<f64>, ramp: f64) -> Self {
        Self {
            from,
            to,
            ramp,
            ..Self::hold(kind, priority, DVector::zeros(0))
        }
    }

    /// Smoothstep interpolation and its rate at `dt` seconds into the phase.
    fn sample(&self, dt: f64) -> TaskSpec {
        let (s, ds) = if self.ramp <= 0.0 || dt >= self.ramp {
            (1.0, 0.0)
        } else {
            let u = (dt / self.ramp).max(0.0);
            (u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u) / self.ramp)
        };
        let delta = &self.to - &self.from;
        TaskSpec {
            kind: self.kind,
            priority: self.priority,
            target: &self.from + &delta * s,
            target_vel: delta * ds,
            kp: self.kp,
            kd: self.kd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanPhase {
    pub name: String,
    pub t_start: f64,
    pub contacts: ContactSpec,
    pub tasks: Vec<TaskRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub phases: Vec<PlanPhase>,
    /// End of the last phase.
    pub t_end: f64,
    pub warnings: Vec<String>,
}

impl PhasePlan {
    pub fn validate(&self) -> Result<(), ControlError> {
        if self.phases.is_empty() {
            return Err(ControlError::Plan("no phases".into()));
        }
        let starts: Vec<f64> = self.phases.iter().map(|p| p.t_start).chain([self.t_end]).collect();
        if starts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ControlError::Plan("phase times must be strictly increasing".into()));
        }
        if let Some(p) = self.phases.iter().find(|p| p.contacts.active.is_empty()) {
            return Err(ControlError::Plan(format!("phase '{}' has no contacts", p.name)));
        }
        Ok(())
    }

    pub fn phase_index(&self, t: f64) -> usize {
        self.phases.iter().rposition(|p| t >= p.t_start).unwrap_or(0)
    }

    pub fn phase_at(&self, t: f64) -> &PlanPhase {
        &self.phases[self.phase_index(t)]
    }

    /// Contact set and task stack in force at time `t`.
    pub fn tasks_at(&self, t: f64) -> (&ContactSpec, Vec<TaskSpec>) {
        let p = self.phase_at(t);
        (&p.contacts, p.tasks.iter().map(|r| r.sample(t - p.t_start)).collect())
    }

    pub fn heel_release_time(&self, heel: &[usize]) -> Option<f64> {
        self.phases
            .iter()
            .find(|p| !p.contacts.active.iter().any(|c| heel.contains(c)))
            .map(|p| p.t_start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiptoeTimings {
    pub rise_duration: f64,
    pub shift_duration: f64,
    /// Time on the toe after the heel contact is dropped.
    pub hold_duration: f64,
    pub rise_height: f64,
    /// Forward body motion in the shift phase; `None` puts the centre of
    /// mass over the middle of the toe contacts.
    pub shift_distance: Option<f64>,
    /// Body lift after the heel contact is dropped. With the knee held this
    /// raises the heel off the ground.
    pub tiptoe_rise: f64,
    pub tiptoe_ramp: f64,
    pub release_heel: bool,
    pub mu: f64,
}

impl Default for TiptoeTimings {
    fn default() -> Self {
        Self {
            rise_duration: 1.0,
            shift_duration: 1.5,
            hold_duration: 10.0,
            rise_height: 0.02,
            shift_distance: None,
            tiptoe_rise: 0.03,
            tiptoe_ramp: 1.0,
            release_heel: true,
            mu: 0.7,
        }
    }
}

const PRIO_ORIENTATION: u32 = 1;
const PRIO_POSITION: u32 = 2;
const PRIO_KNEE: u32 = 3;
const PRIO_POSTURE: u32 = 4;

/// Joints that keep the listed contacts at `targets` with the torso at `base`.
fn stance_ik(
    sim: &Simulator,
    base: &Vector3<f64>,
    q0: &DVector<f64>,
    contacts: &[usize],
    targets: &[Vector2<f64>],
) -> DVector<f64> {
    let nj = sim.n_joints();
    let mut state = SimState::new(*base, q0.clone(), sim.n_contacts());
    for _ in 0..50 {
        let frames = sim.frames(&state);
        let mut jac = DMatrix::zeros(2 * contacts.len(), nj);
        let mut err = DVector::zeros(2 * contacts.len());
        for (r, (&c, t)) in contacts.iter().zip(targets).enumerate() {
            let p = sim.chain.contact_point(&frames, c);
            err.fixed_rows_mut::<2>(2 * r).copy_from(&(t - p));
            jac.view_mut((2 * r, 0), (2, nj))
                .copy_from(&sim.chain.contact_jacobian(&frames, c).columns(BASE_DOF, nj));
        }
        if err.amax() < 1e-12 {
            break;
        }
        let Ok(step) = jac.pseudo_inverse(1e-10) else { break };
        state.q += step * err;
    }
    state.q
}

/// Three-phase tiptoe procedure starting from the model's `stand` pose at
/// x = 0 with the foot flat.
pub fn tiptoe_plan(model: &RobotModel, timings: &TiptoeTimings) -> Result<PhasePlan, ControlError> {
    let t = timings;
    for (name, v) in [
        ("rise_duration", t.rise_duration),
        ("shift_duration", t.shift_duration),
        ("hold_duration", t.hold_duration),
        ("mu", t.mu),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(ControlError::Plan(format!("{name} must be positive")));
        }
    }
    if !(t.tiptoe_ramp >= 0.0 && t.rise_height >= 0.0 && t.tiptoe_rise >= 0.0) {
        return Err(ControlError::Plan("ramps and rise heights must be nonnegative".into()));
    }
    let sim = Simulator::new(model, SimParams::default()).map_err(|e| ControlError::Plan(e.to_string()))?;
    let q_stand = model
        .pose("stand")
        .cloned()
        .ok_or_else(|| ControlError::Plan("model has no 'stand' pose".into()))?;
    let knee = model
        .joint_index("knee")
        .ok_or_else(|| ControlError::Plan("model has no joint named 'knee'".into()))?;
    let toe = model.contacts_in_group(ContactGroup::Toe);
    let heel = model.contacts_in_group(ContactGroup::Heel);
    if toe.is_empty() {
        return Err(ControlError::Plan("model has no toe contacts".into()));
    }
    let all: Vec<usize> = toe.iter().chain(&heel).copied().collect();

    let start = sim.standing_state(&q_stand, 0.0, 0.0);
    let feet = sim.contact_points(&start);
    let targets: Vec<Vector2<f64>> = all.iter().map(|&c| feet[c]).collect();
    let body0 = Vector2::new(start.base.x, start.base.y);
    let body1 = body0 + Vector2::new(0.0, t.rise_height);
    let q1 = stance_ik(&sim, &Vector3::new(body1.x, body1.y, 0.0), &q_stand, &all, &targets);

    let toe_mid = toe.iter().map(|&c| feet[c].x).sum::<f64>() / toe.len() as f64;
    let com_x_at = |x: f64, q_guess: &DVector<f64>| {
        let base = Vector3::new(x, body1.y, 0.0);
        let q = stance_ik(&sim, &base, q_guess, &all, &targets);
        let com = sim.com(&SimState::new(base, q.clone(), sim.n_contacts()));
        (com.x, q)
    };
    let mut warnings = Vec::new();
    let (shift, q2) = match t.shift_distance {
        Some(d) => (d, com_x_at(body1.x + d, &q1).1),
        None => {
            // secant on the body offset that centres the CoM over the toe
            let (mut xa, mut ca) = (body1.x, com_x_at(body1.x, &q1).0 - toe_mid);
            let (mut xb, (cb0, mut qb)) = (body1.x + 0.05, com_x_at(body1.x + 0.05, &q1));
            let mut cb = cb0 - toe_mid;
            for _ in 0..20 {
                if cb.abs() < 1e-6 || (cb - ca).abs() < 1e-12 {
                    break;
                }
                let xn = xb - cb * (xb - xa) / (cb - ca);
                let (cn, qn) = com_x_at(xn, &qb);
                (xa, ca) = (xb, cb);
                (xb, cb, qb) = (xn, cn - toe_mid, qn);
            }
            (xb - body1.x, qb)
        }
    };
    if shift == 0.0 {
        warnings.push("shift distance is zero: the shift phase holds still".to_string());
    }
    let body2 = body1 + Vector2::new(shift, 0.0);

    let v1 = |x: f64| DVector::from_element(1, x);
    let v2 = |p: Vector2<f64>| DVector::from_vec(vec![p.x, p.y]);
    let flat = ContactSpec::new(all.clone(), t.mu);
    let t1 = t.rise_duration;
    let t2 = t1 + t.shift_duration;
    let mut phases = vec![
        PlanPhase {
            name: "rise".into(),
            t_start: 0.0,
            contacts: flat.clone(),
            tasks: vec![
                TaskRef::hold(TaskKind::BodyOrientation, PRIO_ORIENTATION, v1(0.0)),
                TaskRef::moving(TaskKind::BodyPosition, PRIO_POSITION, v2(body0), v2(body1), t.rise_duration),
                TaskRef::moving(TaskKind::JointPosture, PRIO_POSTURE, q_stand.clone(), q1.clone(), t.rise_duration),
            ],
        },
        PlanPhase {
            name: "shift".into(),
            t_start: t1,
            contacts: flat.clone(),
            tasks: vec![
                TaskRef::hold(TaskKind::BodyOrientation, PRIO_ORIENTATION, v1(0.0)),
                TaskRef::moving(TaskKind::BodyPosition, PRIO_POSITION, v2(body1), v2(body2), t.shift_duration),
                TaskRef::moving(TaskKind::JointPosture, PRIO_POSTURE, q1, q2.clone(), t.shift_duration),
            ],
        },
    ];
    let (contacts3, name3) = if t.release_heel {
        (ContactSpec::new(toe.clone(), t.mu), "heel_release")
    } else {
        (flat, "flat_hold")
    };
    let tasks3 = if t.release_heel {
        let body3 = body2 + Vector2::new(0.0, t.tiptoe_rise);
        vec![
            TaskRef::hold(TaskKind::BodyOrientation, PRIO_ORIENTATION, v1(0.0)),
            TaskRef::moving(TaskKind::BodyPosition, PRIO_POSITION, v2(body2), v2(body3), t.tiptoe_ramp),
            TaskRef::hold(TaskKind::KneeJointPosition, PRIO_KNEE, v1(q2[knee])),
            TaskRef::hold(TaskKind::JointPosture, PRIO_POSTURE, q2.clone()),
        ]
    } else {
        vec![
            TaskRef::hold(TaskKind::BodyOrientation, PRIO_ORIENTATION, v1(0.0)),
            TaskRef::hold(TaskKind::BodyPosition, PRIO_POSITION, v2(body2)),
            TaskRef::hold(TaskKind::JointPosture, PRIO_POSTURE, q2.clone()),
        ]
    };
    phases.push(PlanPhase {
        name: name3.into(),
        t_start: t2,
        contacts: contacts3,
        tasks: tasks3,
    });
    let plan = PhasePlan {
        phases,
        t_end: t2 + t.hold_duration,
        warnings,
    };
    plan.validate()?;
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WbcFailure {
    pub t: f64,
    pub phase: String,
    pub error: String,
}

/// Runs the plan through the whole-body controller and joint impedance.
/// On a failed solve the last good command is reused and the failure kept.
pub struct TiptoeController {
    sim: Simulator,
    model: RobotModel,
    pub plan: PhasePlan,
    pub gains: ImpedanceGains,
    last: Option<WbcCommand>,
    pub failures: Vec<WbcFailure>,
}

impl TiptoeController {
    pub fn new(sim: Simulator, model: RobotModel, plan: PhasePlan, gains: ImpedanceGains) -> Result<Self, ControlError> {
        plan.validate()?;
        if gains.kp.len() != sim.n_joints() {
            return Err(ControlError::Gains("gain vector does not match the joints".into()));
        }
        Ok(Self {
            sim,
            model,
            plan,
            gains,
            last: None,
            failures: Vec::new(),
        })
    }

    pub fn last_command(&self) -> Option<&WbcCommand> {
        self.last.as_ref()
    }
}

impl Controller for TiptoeController {
    fn torques(&mut self, state: &SimState) -> DVector<f64> {
        let (contacts, tasks) = self.plan.tasks_at(state.t);
        match wbc_solve(state, &self.sim, &self.model, contacts, &tasks) {
            Ok(cmd) => {
                let tau = impedance_torque(&cmd.q_cmd, &cmd.qd_cmd, &cmd.tau_ff, &state.q, &state.qd, &self.gains);
                self.last = Some(cmd);
                tau
            }
            Err(e) => {
                self.failures.push(WbcFailure {
                    t: state.t,
                    phase: self.plan.phase_at(state.t).name.clone(),
                    error: e.to_string(),
                });
                match &self.last {
                    Some(cmd) => impedance_torque(&cmd.q_cmd, &cmd.qd_cmd, &cmd.tau_ff, &state.q, &state.qd, &self.gains),
                    None => DVector::zeros(state.q.len()),
                }
            }
        }
    }
}

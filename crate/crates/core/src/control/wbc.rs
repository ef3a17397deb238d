//! Prioritized whole-body controller for the planar robot.
//!
//! Kinematic part: the active contacts define the first null space and each
//! task is resolved in what the higher ones leave free, at position,
//! velocity and acceleration level. Force part: a small QP keeps the
//! reaction forces near a gravity-balancing distribution inside the
//! friction pyramid while the floating-base rows of the dynamics hold with a
//! penalized base-acceleration relaxation. This is a reduced version of the
//! impulse-based whole-body controllers in the literature, not a replica.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::robot::RobotModel;
use crate::sim::{SimState, Simulator, BASE_DOF};
use crate::srbd::G;

use super::qp::{Qp, QpError};
use super::ControlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Torso pitch, 1 row.
    BodyOrientation,
    /// Torso (x, z), 2 rows.
    BodyPosition,
    /// Every joint, `n` rows.
    JointPosture,
    /// The joint named `knee`, 1 row.
    KneeJointPosition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Lower is more important.
    pub priority: u32,
    pub target: DVector<f64>,
    pub target_vel: DVector<f64>,
    pub kp: f64,
    pub kd: f64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, priority: u32, target: DVector<f64>) -> Self {
        let n = target.len();
        Self {
            kind,
            priority,
            target,
            target_vel: DVector::zeros(n),
            kp: 100.0,
            kd: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSpec {
    /// Model contact ids.
    pub active: Vec<usize>,
    /// Friction coefficient per active point.
    pub mu: Vec<f64>,
}

impl ContactSpec {
    pub fn new(active: Vec<usize>, mu: f64) -> Self {
        let n = active.len();
        Self {
            active,
            mu: vec![mu; n],
        }
    }
}

/// Commands for one control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct WbcCommand {
    pub q_cmd: DVector<f64>,
    pub qd_cmd: DVector<f64>,
    /// Generalized acceleration including the base relaxation.
    pub qdd_cmd: DVector<f64>,
    pub tau_ff: DVector<f64>,
    /// (tangential, normal) per model contact; zero when inactive.
    pub forces: Vec<Vector2<f64>>,
    /// Base acceleration the force program could not realize.
    pub base_relaxation: DVector<f64>,
    /// Centre of pressure the force program aimed for.
    pub cop_target: f64,
}

impl WbcCommand {
    pub fn total_normal(&self) -> f64 {
        self.forces.iter().map(|f| f.y).sum()
    }

    /// Centre of pressure of the solved forces along x.
    pub fn cop(&self, contact_x: &[f64]) -> Option<f64> {
        let fz = self.total_normal();
        (fz > 1e-9).then(|| self.forces.iter().zip(contact_x).map(|(f, x)| f.y * x).sum::<f64>() / fz)
    }
}

/// Weight of the base relaxation relative to squared force deviation,
/// per kg² of robot mass. Heavy enough that the forces follow the commanded
/// base motion; the balancing reference then mostly splits the load.
const RELAXATION_WEIGHT: f64 = 1e3;
const PINV_EPS: f64 = 1e-9;

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return DMatrix::zeros(m.ncols(), 0);
    }
    m.clone().pseudo_inverse(PINV_EPS).unwrap_or_else(|_| DMatrix::zeros(m.ncols(), m.nrows()))
}

/// Task Jacobian (constant selection rows) and current value/rate.
pub(crate) fn task_rows(
    kind: TaskKind,
    state: &SimState,
    knee: Option<usize>,
) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>), ControlError> {
    let nj = state.q.len();
    let n = BASE_DOF + nj;
    let select = |idx: &[usize]| {
        let mut j = DMatrix::zeros(idx.len(), n);
        for (r, &c) in idx.iter().enumerate() {
            j[(r, c)] = 1.0;
        }
        j
    };
    let pos = state.position();
    let vel = state.velocity();
    let idx: Vec<usize> = match kind {
        TaskKind::BodyOrientation => vec![2],
        TaskKind::BodyPosition => vec![0, 1],
        TaskKind::JointPosture => (BASE_DOF..n).collect(),
        TaskKind::KneeJointPosition => {
            vec![BASE_DOF + knee.ok_or_else(|| ControlError::Task("model has no joint named 'knee'".into()))?]
        }
    };
    let j = select(&idx);
    let value = DVector::from_iterator(idx.len(), idx.iter().map(|&i| pos[i]));
    let rate = DVector::from_iterator(idx.len(), idx.iter().map(|&i| vel[i]));
    Ok((j, value, rate))
}

/// Output of the kinematic hierarchy alone.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub dq: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
    /// Per task, in resolution order: position residual `e - J dq`.
    pub residuals: Vec<DVector<f64>>,
}

fn check_tasks(tasks: &[TaskSpec]) -> Result<Vec<&TaskSpec>, ControlError> {
    if tasks.is_empty() {
        return Err(ControlError::Task("task stack is empty".into()));
    }
    let mut sorted: Vec<&TaskSpec> = tasks.iter().collect();
    sorted.sort_by_key(|t| t.priority);
    if sorted.windows(2).any(|w| w[0].priority == w[1].priority) {
        return Err(ControlError::Task("task priorities must be unique".into()));
    }
    Ok(sorted)
}

/// Null-space resolution of `tasks` below the contact constraint.
pub fn resolve_hierarchy(
    state: &SimState,
    sim: &Simulator,
    model: &RobotModel,
    contacts: &ContactSpec,
    tasks: &[TaskSpec],
) -> Result<Hierarchy, ControlError> {
    let sorted = check_tasks(tasks)?;
    let knee = model.joint_index("knee");
    let frames = sim.frames(state);
    let n = sim.chain.n_dof();
    let k = contacts.active.len();
    let mut jc = DMatrix::zeros(2 * k, n);
    let mut jc_bias = DVector::zeros(2 * k);
    for (r, &c) in contacts.active.iter().enumerate() {
        jc.view_mut((2 * r, 0), (2, n)).copy_from(&sim.chain.contact_jacobian(&frames, c));
        jc_bias.fixed_rows_mut::<2>(2 * r).copy_from(&sim.chain.contact_bias(&frames, c));
    }
    let jc_pinv = pinv(&jc);
    let mut null = DMatrix::identity(n, n) - &jc_pinv * &jc;
    let mut dq = DVector::zeros(n);
    let mut qd = DVector::zeros(n);
    let mut qdd = -(&jc_pinv * jc_bias);
    let mut residuals = Vec::with_capacity(sorted.len());
    for task in sorted {
        let (j, value, rate) = task_rows(task.kind, state, knee)?;
        if task.target.len() != value.len() || task.target_vel.len() != value.len() {
            return Err(ControlError::Task(format!("{:?} target has the wrong size", task.kind)));
        }
        let mut err = &task.target - &value;
        if task.kind == TaskKind::BodyOrientation {
            err[0] = wrap(err[0]);
        }
        let acc = &err * task.kp + (&task.target_vel - &rate) * task.kd;
        let j_pre = &j * &null;
        let j_pre_pinv = pinv(&j_pre);
        dq += &j_pre_pinv * (&err - &j * &dq);
        qd += &j_pre_pinv * (&task.target_vel - &j * &qd);
        qdd += &j_pre_pinv * (acc - &j * &qdd);
        null = &null * (DMatrix::identity(n, n) - &j_pre_pinv * &j_pre);
        residuals.push(err);
    }
    // residuals are reported against the final dq
    let mut out = Vec::with_capacity(residuals.len());
    for (task, err) in check_tasks(tasks)?.into_iter().zip(residuals) {
        let (j, _, _) = task_rows(task.kind, state, knee)?;
        out.push(err - j * &dq);
    }
    Ok(Hierarchy {
        dq,
        qd,
        qdd,
        residuals: out,
    })
}

/// Weight split `W` among `xs` with its centre of pressure at `cop`:
/// the least-norm solution of `Σ f = W`, `Σ x f = W cop`.
fn balancing_normals(xs: &[f64], weight: f64, cop: f64) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let spread: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let slope = if spread > 1e-12 { weight * (cop - mean) / spread } else { 0.0 };
    xs.iter().map(|x| weight / n + slope * (x - mean)).collect()
}

/// Whole-body command for the current state, contact set and task stack.
pub fn wbc_solve(
    state: &SimState,
    sim: &Simulator,
    model: &RobotModel,
    contacts: &ContactSpec,
    tasks: &[TaskSpec],
) -> Result<WbcCommand, ControlError> {
    let k = contacts.active.len();
    if k == 0 {
        return Err(ControlError::NoContacts);
    }
    if contacts.mu.len() != k || contacts.mu.iter().any(|m| !(*m > 0.0)) {
        return Err(ControlError::Task("one positive friction coefficient per active contact".into()));
    }
    if let Some(&c) = contacts.active.iter().find(|&&c| c >= sim.n_contacts()) {
        return Err(ControlError::Task(format!("contact {c} does not exist")));
    }
    let hier = resolve_hierarchy(state, sim, model, contacts, tasks)?;
    let nj = sim.n_joints();
    let n = BASE_DOF + nj;
    let frames = sim.frames(state);
    let (m, h) = sim.mass_and_bias(&frames);
    let mass = sim.chain.total_mass();
    let weight = mass * G;

    let points: Vec<Vector2<f64>> = contacts.active.iter().map(|&c| sim.chain.contact_point(&frames, c)).collect();
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // body position targets shift the balancing point with them
    let com = sim.chain.com(&frames);
    let shift = tasks
        .iter()
        .find(|t| t.kind == TaskKind::BodyPosition)
        .map(|t| t.target[0] - state.base.x)
        .unwrap_or(0.0);
    let cop = com.x + shift;
    if cop < lo - 1e-9 || cop > hi + 1e-9 {
        return Err(ControlError::OutsideSupport { cop, min: lo, max: hi });
    }
    let normals = balancing_normals(&xs, weight, cop);

    // unknowns: base relaxation (3), then (f_x, f_z) per contact
    let nv = BASE_DOF + 2 * k;
    let w_relax = RELAXATION_WEIGHT * mass * mass;
    let mut hess = DMatrix::identity(nv, nv);
    let mut lin = DVector::zeros(nv);
    for i in 0..BASE_DOF {
        hess[(i, i)] = w_relax;
    }
    for (i, fz) in normals.iter().enumerate() {
        lin[BASE_DOF + 2 * i + 1] = -fz;
    }
    let mut jc = DMatrix::zeros(2 * k, n);
    for (r, &c) in contacts.active.iter().enumerate() {
        jc.view_mut((2 * r, 0), (2, n)).copy_from(&sim.chain.contact_jacobian(&frames, c));
    }
    // base rows: M_b (qdd + [δ; 0]) + h_b = J_bᵀ f
    let m_base = m.rows(0, BASE_DOF).into_owned();
    let mut a_eq = DMatrix::zeros(BASE_DOF, nv);
    a_eq.view_mut((0, 0), (BASE_DOF, BASE_DOF)).copy_from(&(-m.view((0, 0), (BASE_DOF, BASE_DOF))));
    a_eq.view_mut((0, BASE_DOF), (BASE_DOF, 2 * k))
        .copy_from(&jc.columns(0, BASE_DOF).transpose());
    let b_eq = &m_base * &hier.qdd + h.rows(0, BASE_DOF);
    let mut a_in = DMatrix::zeros(3 * k, nv);
    let b_in = DVector::zeros(3 * k);
    for (i, mu) in contacts.mu.iter().enumerate() {
        let (cx, cz) = (BASE_DOF + 2 * i, BASE_DOF + 2 * i + 1);
        a_in[(3 * i, cz)] = 1.0;
        a_in[(3 * i + 1, cz)] = *mu;
        a_in[(3 * i + 1, cx)] = -1.0;
        a_in[(3 * i + 2, cz)] = *mu;
        a_in[(3 * i + 2, cx)] = 1.0;
    }
    let sol = Qp {
        h: &hess,
        c: &lin,
        a_eq: &a_eq,
        b_eq: &b_eq,
        a_in: &a_in,
        b_in: &b_in,
    }
    .solve()
    .map_err(|e| match e {
        QpError::Infeasible(_) => ControlError::Infeasible(e.to_string()),
        other => ControlError::Infeasible(other.to_string()),
    })?;

    let relax = sol.x.rows(0, BASE_DOF).into_owned();
    let mut qdd = hier.qdd.clone();
    {
        let mut base = qdd.rows_mut(0, BASE_DOF);
        base += &relax;
    }
    let f = sol.x.rows(BASE_DOF, 2 * k).into_owned();
    let gen = &m * &qdd + &h - jc.transpose() * &f;
    let mut forces = vec![Vector2::zeros(); sim.n_contacts()];
    for (i, &c) in contacts.active.iter().enumerate() {
        // clip round-off below the unilateral bound
        forces[c] = Vector2::new(f[2 * i], f[2 * i + 1].max(0.0));
    }
    Ok(WbcCommand {
        q_cmd: &state.q + hier.dq.rows(BASE_DOF, nj),
        qd_cmd: hier.qd.rows(BASE_DOF, nj).into_owned(),
        qdd_cmd: qdd,
        tau_ff: gen.rows(BASE_DOF, nj).into_owned(),
        forces,
        base_relaxation: relax,
        cop_target: cop,
    })
}

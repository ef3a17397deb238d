//! Joint impedance tracking of an optimized jump.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::robot::RobotModel;
use crate::sim::{Controller, SimParams, SimState, Simulator, BASE_DOF};
use crate::trajopt::{JumpProblem, JumpSolution};

use super::qp::Qp;
use super::{impedance_torque, ControlError, ImpedanceGains};

/// Weight on the base-acceleration relaxation per kg² of robot mass.
const RELAXATION_WEIGHT: f64 = 1e3;

/// Knot-sampled joint reference of a jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpReference {
    pub t: Vec<f64>,
    /// Torso (x, z, pitch) per knot.
    pub base: Vec<Vector3<f64>>,
    pub q: Vec<DVector<f64>>,
    pub qd: Vec<DVector<f64>>,
    pub tau: Vec<DVector<f64>>,
    pub contact: Vec<Vec<bool>>,
}

/// Pitch about +y of a rotation matrix.
fn pitch_of(rot: &Matrix3<f64>) -> f64 {
    rot[(0, 2)].atan2(rot[(0, 0)])
}

impl JumpReference {
    /// Builds the reference from knot data. Feed-forward torques come from
    /// the articulated inverse dynamics of the planned motion. The planned
    /// contact forces are first moved to the nearest set that satisfies the
    /// floating-base rows of the articulated model within the friction
    /// pyramid, since the plan lumps the whole mass at the torso.
    pub fn from_knots(
        model: &RobotModel,
        t: Vec<f64>,
        p: &[Vector3<f64>],
        rot: &[Matrix3<f64>],
        q: Vec<DVector<f64>>,
        forces: &[Vec<Vector3<f64>>],
        contact: Vec<Vec<bool>>,
        mu: f64,
    ) -> Result<Self, ControlError> {
        let n = t.len();
        if n < 2 {
            return Err(ControlError::Reference("need at least two knots".into()));
        }
        if [p.len(), rot.len(), q.len(), forces.len(), contact.len()].iter().any(|&l| l != n) {
            return Err(ControlError::Reference("knot arrays differ in length".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ControlError::Reference("knot times must increase".into()));
        }
        let nj = model.n_joints();
        if contact.iter().chain(forces.iter().map(|_| &contact[0])).any(|c| c.len() != model.n_contacts())
            || forces.iter().any(|f| f.len() != model.n_contacts())
        {
            return Err(ControlError::Reference(format!("expected {} contacts per knot", model.n_contacts())));
        }
        if !(mu > 0.0) {
            return Err(ControlError::Reference("friction coefficient must be positive".into()));
        }
        if q.iter().any(|qk| qk.len() != nj) {
            return Err(ControlError::Reference(format!("joint vectors must have {nj} entries")));
        }
        let sim = Simulator::new(model, SimParams::default()).map_err(|e| ControlError::Reference(e.to_string()))?;
        let pos: Vec<DVector<f64>> = (0..n)
            .map(|k| {
                let mut v = DVector::zeros(BASE_DOF + nj);
                v.fixed_rows_mut::<3>(0).copy_from(&Vector3::new(p[k].x, p[k].z, pitch_of(&rot[k])));
                v.rows_mut(BASE_DOF, nj).copy_from(&q[k]);
                v
            })
            .collect();
        let central = |v: &[DVector<f64>], k: usize| {
            let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
            (&v[b] - &v[a]) / (t[b] - t[a])
        };
        let vel: Vec<DVector<f64>> = (0..n).map(|k| central(&pos, k)).collect();
        let acc: Vec<DVector<f64>> = (0..n).map(|k| central(&vel, k)).collect();
        let tau = (0..n)
            .map(|k| {
                let mut state = SimState::new(pos[k].fixed_rows::<3>(0).into(), q[k].clone(), sim.n_contacts());
                state.base_vel = vel[k].fixed_rows::<3>(0).into();
                state.qd = vel[k].rows(BASE_DOF, nj).into_owned();
                let frames = sim.frames(&state);
                let (m, h) = sim.mass_and_bias(&frames);
                let active: Vec<usize> = (0..sim.n_contacts()).filter(|&c| contact[k][c]).collect();
                let planned: Vec<Vector2<f64>> = active.iter().map(|&c| Vector2::new(forces[k][c].x, forces[k][c].z)).collect();
                let jac: Vec<DMatrix<f64>> = active.iter().map(|&c| sim.chain.contact_jacobian(&frames, c)).collect();
                let mut a = acc[k].clone();
                let mut f = planned.clone();
                if !active.is_empty() {
                    if let Some((relax, fc)) = consistent_forces(&m, &h, &a, &jac, &planned, mu, sim.chain.total_mass()) {
                        {
                            let mut base = a.rows_mut(0, BASE_DOF);
                            base += &relax;
                        }
                        f = fc;
                    }
                }
                let mut gen = m * &a + h;
                for (j, fi) in jac.iter().zip(&f) {
                    gen -= j.transpose() * fi;
                }
                gen.rows(BASE_DOF, nj).into_owned()
            })
            .collect();
        let qd = (0..n).map(|k| vel[k].rows(BASE_DOF, nj).into_owned()).collect();
        let base = (0..n).map(|k| Vector3::new(p[k].x, p[k].z, pitch_of(&rot[k]))).collect();
        Ok(Self {
            t,
            base,
            q,
            qd,
            tau,
            contact,
        })
    }

    pub fn from_solution(problem: &JumpProblem, solution: &JumpSolution) -> Result<Self, ControlError> {
        let v = &solution.vars;
        let n = v.n_knots();
        let t = (0..n).map(|k| problem.schedule.time(k)).collect();
        let p: Vec<_> = (0..n).map(|k| v.p(k)).collect();
        let rot: Vec<_> = (0..n).map(|k| v.rot(k)).collect();
        let forces: Vec<_> = (0..n).map(|k| v.forces(k)).collect();
        let contact = problem.schedule.active.clone();
        Self::from_knots(&problem.model, t, &p, &rot, (0..n).map(|k| v.q(k)).collect(), &forces, contact, problem.mu)
    }

    pub fn n_knots(&self) -> usize {
        self.t.len()
    }

    /// First knot with no contact in the schedule.
    pub fn liftoff_knot(&self) -> Option<usize> {
        self.contact.iter().position(|c| !c.iter().any(|&a| a))
    }

    pub fn liftoff_time(&self) -> Option<f64> {
        self.liftoff_knot().map(|k| self.t[k])
    }

    pub fn duration(&self) -> f64 {
        self.t[self.t.len() - 1] - self.t[0]
    }

    /// Highest planned torso height.
    pub fn planned_apex(&self) -> f64 {
        self.base.iter().map(|b| b.y).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Desired joint position, rate and feed-forward torque `t` seconds
    /// after the first knot. After liftoff the last stance posture is held
    /// without feed-forward.
    pub fn sample(&self, t: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let t = self.t[0] + t;
        let end = self.liftoff_knot().unwrap_or(self.n_knots());
        let last = end.saturating_sub(1);
        if t >= self.t[last] {
            let nj = self.q[last].len();
            let (qd, tau) = if end < self.n_knots() {
                (DVector::zeros(nj), DVector::zeros(nj))
            } else {
                (DVector::zeros(nj), self.tau[last].clone())
            };
            return (self.q[last].clone(), qd, tau);
        }
        let k = self.t[..=last].partition_point(|&tk| tk <= t).saturating_sub(1);
        let s = ((t - self.t[k]) / (self.t[k + 1] - self.t[k])).clamp(0.0, 1.0);
        let lerp = |v: &[DVector<f64>]| &v[k] * (1.0 - s) + &v[k + 1] * s;
        (lerp(&self.q), lerp(&self.qd), lerp(&self.tau))
    }

    /// Simulator state at the first knot with the feet resting on the ground.
    pub fn initial_state(&self, sim: &Simulator) -> SimState {
        let b = self.base[0];
        sim.standing_state(&self.q[0], b.x, b.z)
    }
}

/// Contact forces nearest to `planned` that satisfy the base rows of
/// `M (acc + [δ; 0]) + h = Σ Jᵀ f` inside the friction pyramid, with a
/// heavily weighted base relaxation `δ`. `None` if the program fails.
fn consistent_forces(
    m: &DMatrix<f64>,
    h: &DVector<f64>,
    acc: &DVector<f64>,
    jac: &[DMatrix<f64>],
    planned: &[Vector2<f64>],
    mu: f64,
    mass: f64,
) -> Option<(DVector<f64>, Vec<Vector2<f64>>)> {
    let k = planned.len();
    let nv = BASE_DOF + 2 * k;
    let mut hess = DMatrix::identity(nv, nv);
    let mut lin = DVector::zeros(nv);
    for i in 0..BASE_DOF {
        hess[(i, i)] = RELAXATION_WEIGHT * mass * mass;
    }
    let mut a_eq = DMatrix::zeros(BASE_DOF, nv);
    a_eq.view_mut((0, 0), (BASE_DOF, BASE_DOF))
        .copy_from(&(-m.view((0, 0), (BASE_DOF, BASE_DOF))));
    let mut a_in = DMatrix::zeros(3 * k, nv);
    for (i, (j, f)) in jac.iter().zip(planned).enumerate() {
        let (cx, cz) = (BASE_DOF + 2 * i, BASE_DOF + 2 * i + 1);
        lin[cx] = -f.x;
        lin[cz] = -f.y;
        a_eq.view_mut((0, cx), (BASE_DOF, 2))
            .copy_from(&j.columns(0, BASE_DOF).transpose());
        a_in[(3 * i, cz)] = 1.0;
        a_in[(3 * i + 1, cz)] = mu;
        a_in[(3 * i + 1, cx)] = -1.0;
        a_in[(3 * i + 2, cz)] = mu;
        a_in[(3 * i + 2, cx)] = 1.0;
    }
    let b_eq = m.rows(0, BASE_DOF) * acc + h.rows(0, BASE_DOF);
    let sol = Qp {
        h: &hess,
        c: &lin,
        a_eq: &a_eq,
        b_eq: &b_eq,
        a_in: &a_in,
        b_in: &DVector::zeros(3 * k),
    }
    .solve()
    .ok()?;
    let forces = (0..k)
        .map(|i| Vector2::new(sol.x[BASE_DOF + 2 * i], sol.x[BASE_DOF + 2 * i + 1]))
        .collect();
    Some((sol.x.rows(0, BASE_DOF).into_owned(), forces))
}

pub struct JumpTracker {
    pub reference: JumpReference,
    pub gains: ImpedanceGains,
}

impl Controller for JumpTracker {
    fn torques(&mut self, state: &SimState) -> DVector<f64> {
        let (q, qd, tau) = self.reference.sample(state.t);
        impedance_torque(&q, &qd, &tau, &state.q, &state.qd, &self.gains)
    }
}

pub fn jump_tracker(reference: JumpReference, gains: ImpedanceGains) -> Result<JumpTracker, ControlError> {
    let nj = reference.q[0].len();
    if gains.kp.len() != nj || gains.kd.len() != nj {
        return Err(ControlError::Gains(format!("expected {nj} gains")));
    }
    Ok(JumpTracker { reference, gains })
}

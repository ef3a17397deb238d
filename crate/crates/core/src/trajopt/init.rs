//! Initial guess: desired torso motion, joints from damped least-squares IK
//! that keeps the grounded contacts in place, and gravity-compensating
//! forces shared among the active contacts.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::srbd::GRAVITY;

use super::problem::JumpProblem;
use super::vars::DecisionVariables;

const IK_ITERATIONS: usize = 60;
const IK_DAMPING: f64 = 1e-4;

/// Joints that put the listed contacts at `targets` with the torso at `p`
/// (upright), starting from `q0`.
fn contact_ik(
    problem: &JumpProblem,
    p: &Vector3<f64>,
    q0: &DVector<f64>,
    contacts: &[usize],
    targets: &[Vector3<f64>],
) -> DVector<f64> {
    let model = &problem.model;
    let n = model.n_joints();
    let lo = model.q_min();
    let hi = model.q_max();
    let mut q = q0.clone();
    if contacts.is_empty() {
        return q;
    }
    for _ in 0..IK_ITERATIONS {
        let pose = model.chain_pose(&q).expect("sized joints");
        let mut jac = DMatrix::zeros(3 * contacts.len(), n);
        let mut err = DVector::zeros(3 * contacts.len());
        for (row, (&i, t)) in contacts.iter().zip(targets).enumerate() {
            let c = &model.contacts[i];
            let b = pose.point(c.link_index, &c.offset);
            let e = t - (p + b);
            err.fixed_rows_mut::<3>(3 * row).copy_from(&e);
            jac.view_mut((3 * row, 0), (3, n))
                .copy_from(&model.point_jacobian_base(&pose, c.link_index, &b));
        }
        if err.amax() < 1e-12 {
            break;
        }
        let jt = jac.transpose();
        let lhs = &jt * &jac + DMatrix::identity(n, n) * IK_DAMPING;
        let Some(chol) = lhs.cholesky() else { break };
        let step = chol.solve(&(jt * err));
        q += step;
        for j in 0..n {
            q[j] = q[j].clamp(lo[j], hi[j]);
        }
    }
    q
}

/// Deterministic starting point for the solver. Pinned variables already
/// hold their final values.
pub fn initial_guess(problem: &JumpProblem) -> DecisionVariables {
    let lay = problem.layout();
    let model = &problem.model;
    let nk = lay.n_knots;
    let nc = lay.n_contacts;
    let dt = problem.dt();
    let mut vars = DecisionVariables::zeros(lay);

    let feet0 = model
        .forward_kinematics(&problem.initial_state.p, &Matrix3::identity(), &problem.initial_q)
        .expect("sized joints");

    let mut q = problem.initial_q.clone();
    for k in 0..nk {
        let des = &problem.desired[k];
        let active: Vec<usize> = (0..nc).filter(|&i| problem.schedule.is_active(k, i)).collect();
        if k == 0 {
            vars.set_state(0, &problem.initial_state);
        } else {
            vars.set_p(k, &des.p);
            vars.set_rot(k, &Matrix3::identity());
            vars.set_v(k, &des.v);
            vars.set_w(k, &Vector3::zeros());
            if !active.is_empty() {
                let targets: Vec<Vector3<f64>> = active.iter().map(|&i| feet0[i]).collect();
                q = contact_ik(problem, &des.p, &q, &active, &targets);
            } else {
                // airborne: relax toward the nominal takeoff joints
                q = (&q + &problem.takeoff_q) * 0.5;
            }
        }
        vars.set_q(k, &q);
        let feet = model
            .forward_kinematics(&vars.p(k), &vars.rot(k), &q)
            .expect("sized joints");
        for (i, r) in feet.iter().enumerate() {
            vars.set_pos(k, i, r);
        }

        if !active.is_empty() {
            let accel = if k + 1 < nk {
                (problem.desired[k + 1].v - des.v) / dt
            } else {
                Vector3::zeros()
            };
            let mut total = (accel - GRAVITY) * problem.mass;
            if model.planar {
                total.y = 0.0;
            }
            total.z = total.z.max(0.0);
            total.x = total.x.clamp(-0.5 * problem.mu * total.z, 0.5 * problem.mu * total.z);
            let share = total / active.len() as f64;
            for &i in &active {
                vars.set_force(k, i, &share);
            }
        }
    }
    vars
}

//! Independent re-evaluation of every constraint block.
//!
//! Nothing here calls into the solver's residual code: the leg chain uses
//! 4×4 homogeneous transforms, joint torques use lever arms about each joint
//! axis, and the rotation update uses its own Rodrigues formula.

use std::collections::BTreeMap;

use nalgebra::{DVector, Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::problem::{JumpProblem, TorqueBound};
use super::residuals::{Block, RowMeta};
use super::vars::DecisionVariables;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledResidual {
    pub meta: RowMeta,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub rows: usize,
    /// Largest violation in scaled units.
    pub max: f64,
    pub mean: f64,
    pub worst: Option<RowMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub blocks: BTreeMap<Block, BlockStats>,
    pub max_violation: f64,
    pub worst: Option<RowMeta>,
}

impl ViolationReport {
    pub fn block(&self, b: Block) -> BlockStats {
        self.blocks.get(&b).copied().unwrap_or(BlockStats {
            rows: 0,
            max: 0.0,
            mean: 0.0,
            worst: None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Violation of one row: `|h|` for equalities, `max(0, g)` for inequalities.
pub fn row_violation(block: Block, value: f64, weight: f64) -> f64 {
    let v = if block.is_inequality() { value.max(0.0) } else { value.abs() };
    v / block.scale(weight)
}

pub fn validate_solution(problem: &JumpProblem, vars: &DecisionVariables) -> ViolationReport {
    let rows = validator_residuals(problem, vars);
    let weight = problem.weight();
    let mut acc: BTreeMap<Block, (usize, f64, f64, Option<RowMeta>)> = BTreeMap::new();
    for r in &rows {
        let v = row_violation(r.meta.block, r.value, weight);
        let e = acc.entry(r.meta.block).or_insert((0, 0.0, 0.0, None));
        e.0 += 1;
        e.2 += v;
        if v > e.1 || e.3.is_none() {
            e.1 = v;
            e.3 = Some(r.meta);
        }
    }
    let mut blocks = BTreeMap::new();
    let mut max_violation = 0.0;
    let mut worst = None;
    for (b, (n, max, sum, w)) in acc {
        if max > max_violation || worst.is_none() {
            max_violation = max;
            worst = w;
        }
        blocks.insert(
            b,
            BlockStats {
                rows: n,
                max,
                mean: sum / n as f64,
                worst: w,
            },
        );
    }
    ViolationReport {
        blocks,
        max_violation,
        worst,
    }
}

fn rodrigues(w: Vector3<f64>) -> Matrix3<f64> {
    let angle = (w.x * w.x + w.y * w.y + w.z * w.z).sqrt();
    if angle == 0.0 {
        return Matrix3::identity();
    }
    let (x, y, z) = (w.x / angle, w.y / angle, w.z / angle);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    Matrix3::new(
        t * x * x + c,
        t * x * y - s * z,
        t * x * z + s * y,
        t * x * y + s * z,
        t * y * y + c,
        t * y * z - s * x,
        t * x * z - s * y,
        t * y * z + s * x,
        t * z * z + c,
    )
}

fn homogeneous(rot: &Matrix3<f64>, trans: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rot);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(trans);
    m
}

fn apply(t: &Matrix4<f64>, x: &Vector3<f64>) -> Vector3<f64> {
    let h = t * Vector4::new(x.x, x.y, x.z, 1.0);
    Vector3::new(h.x, h.y, h.z)
}

/// Link frames, joint axes and joint origins in the torso frame.
struct BodyChain {
    links: Vec<Matrix4<f64>>,
    axes: Vec<Vector3<f64>>,
    origins: Vec<Vector3<f64>>,
}

fn body_chain(problem: &JumpProblem, q: &DVector<f64>) -> BodyChain {
    let model = &problem.model;
    let mut t: Matrix4<f64> = Matrix4::identity();
    let mut links = vec![t];
    let mut axes = Vec::new();
    let mut origins = Vec::new();
    for (j, joint) in model.joints.iter().enumerate() {
        let l = &model.links[j];
        let to_joint = homogeneous(&Matrix3::identity(), &(l.direction * l.length));
        let at_joint = t * to_joint;
        let r = at_joint.fixed_view::<3, 3>(0, 0).into_owned();
        axes.push(r * joint.axis);
        origins.push(apply(&at_joint, &Vector3::zeros()));
        t = at_joint * homogeneous(&rodrigues(joint.axis * q[j]), &Vector3::zeros());
        links.push(t);
    }
    BodyChain { links, axes, origins }
}

fn joint_capacity(problem: &JumpProblem, q: &DVector<f64>) -> Vec<f64> {
    let dt = &problem.model.drivetrain;
    let n = q.len();
    let mut cap = vec![0.0; n];
    for j in 0..n {
        for m in 0..dt.motor_count {
            let mut entry = dt.constant_ratios[(m, j)];
            for term in dt.linkage_terms.iter().filter(|t| t.row == m && t.col == j) {
                let x = q[term.var];
                entry += term
                    .coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * x.powi(k as i32))
                    .sum::<f64>();
            }
            cap[j] += entry * dt.motor_torque_max[m];
        }
    }
    if let TorqueBound::FixedJoint { joint, limit } = problem.torque_bound {
        cap[joint] = limit;
    }
    cap
}

/// Constraint rows in the same order and labelling as the solver's
/// residuals, computed independently.
pub fn validator_residuals(problem: &JumpProblem, vars: &DecisionVariables) -> Vec<LabeledResidual> {
    let model = &problem.model;
    let n = model.n_joints();
    let nc = model.n_contacts();
    let nk = problem.n_knots();
    let dt = problem.schedule.dt;
    let m = problem.mass;
    let g = Vector3::new(0.0, 0.0, -9.81);
    let mut out = Vec::new();
    let mut push = |block, knot, item, comp, value| {
        out.push(LabeledResidual {
            meta: RowMeta { block, knot, item, comp },
            value,
        })
    };

    for k in 0..nk - 1 {
        let (p, rot, v, w) = (vars.p(k), vars.rot(k), vars.v(k), vars.w(k));
        let mut f_total = Vector3::zeros();
        let mut moment = Vector3::zeros();
        for i in 0..nc {
            let f = vars.force(k, i);
            f_total += f;
            moment += (vars.pos(k, i) - p).cross(&f);
        }
        let v1 = v + dt * (f_total / m + g);
        let p1 = p + dt * v1;
        let spun = rodrigues(-dt * w) * (problem.inertia * w);
        let w1 = problem.inertia_inv * (spun + dt * (rot.transpose() * moment));
        let r1 = rot * rodrigues(dt * w1);
        let (pn, rn, vn, wn) = (vars.p(k + 1), vars.rot(k + 1), vars.v(k + 1), vars.w(k + 1));
        for c in 0..3 {
            push(Block::Dynamics, k, 0, c, pn[c] - p1[c]);
        }
        for a in 0..3 {
            for b in 0..3 {
                push(Block::Dynamics, k, 1, 3 * a + b, rn[(a, b)] - r1[(a, b)]);
            }
        }
        for c in 0..3 {
            push(Block::Dynamics, k, 2, c, vn[c] - v1[c]);
        }
        for c in 0..3 {
            push(Block::Dynamics, k, 3, c, wn[c] - w1[c]);
        }
    }

    let chains: Vec<BodyChain> = (0..nk).map(|k| body_chain(problem, &vars.q(k))).collect();
    let contact_body = |k: usize, i: usize| {
        let c = &model.contacts[i];
        apply(&chains[k].links[c.link_index], &c.offset)
    };

    for k in 0..nk {
        for i in 0..nc {
            let d = vars.p(k) + vars.rot(k) * contact_body(k, i) - vars.pos(k, i);
            for c in 0..3 {
                push(Block::Kinematics, k, i, c, d[c]);
            }
        }
    }

    for k in 0..nk - 1 {
        for i in 0..nc {
            let on = if problem.schedule.active[k][i] { 1.0 } else { 0.0 };
            for c in 0..3 {
                push(Block::NoSlip, k, i, c, (vars.pos(k + 1, i)[c] - vars.pos(k, i)[c]) * on);
            }
        }
    }

    let mu = problem.mu;
    for k in 0..nk {
        for i in 0..nc {
            let f = vars.force(k, i);
            push(Block::Friction, k, i, 0, f.x - mu * f.z);
            push(Block::Friction, k, i, 1, -f.x - mu * f.z);
            push(Block::Friction, k, i, 2, f.y - mu * f.z);
            push(Block::Friction, k, i, 3, -f.y - mu * f.z);
            push(Block::Friction, k, i, 4, -f.z);
        }
    }

    for k in 0..nk {
        for i in 0..nc {
            let off = if problem.schedule.active[k][i] { 0.0 } else { 1.0 };
            let f = vars.force(k, i);
            for c in 0..3 {
                push(Block::ContactForce, k, i, c, f[c] * off);
            }
        }
    }

    for k in 0..nk {
        let q = vars.q(k);
        for (j, joint) in model.joints.iter().enumerate() {
            push(Block::JointLimit, k, j, 0, q[j] - joint.q_max);
            push(Block::JointLimit, k, j, 1, joint.q_min - q[j]);
        }
    }

    for k in 0..nk {
        let cap = joint_capacity(problem, &vars.q(k));
        let chain = &chains[k];
        let rot_t = vars.rot(k).transpose();
        for j in 0..n {
            // the joint must cancel the moment of the ground forces (in the
            // torso frame) about its axis
            let mut tau = 0.0;
            for i in 0..nc {
                if model.contacts[i].link_index > j {
                    let lever = contact_body(k, i) - chain.origins[j];
                    tau -= chain.axes[j].dot(&lever.cross(&(rot_t * vars.force(k, i))));
                }
            }
            push(Block::MotorTorque, k, j, 0, tau - cap[j]);
            push(Block::MotorTorque, k, j, 1, -tau - cap[j]);
        }
    }

    let x0 = &problem.initial_state;
    for c in 0..3 {
        push(Block::Initial, 0, 0, c, vars.p(0)[c] - x0.p[c]);
    }
    let r0 = vars.rot(0);
    for a in 0..3 {
        for b in 0..3 {
            push(Block::Initial, 0, 1, 3 * a + b, r0[(a, b)] - x0.rot[(a, b)]);
        }
    }
    for c in 0..3 {
        push(Block::Initial, 0, 2, c, vars.v(0)[c] - x0.v[c]);
    }
    for c in 0..3 {
        push(Block::Initial, 0, 3, c, vars.w(0)[c] - x0.omega[c]);
    }
    let q0 = vars.q(0);
    for j in 0..n {
        push(Block::Initial, 0, 4, j, q0[j] - problem.initial_q[j]);
    }

    if problem.schedule.stance_knots() < nk {
        push(
            Block::Apex,
            nk - 1,
            0,
            0,
            problem.standing_height + problem.apex_rise - vars.p(nk - 1).z,
        );
    }

    for k in 0..nk {
        for i in 0..nc {
            let off = if problem.schedule.active[k][i] { 0.0 } else { 1.0 };
            push(Block::Clearance, k, i, 0, -off * vars.pos(k, i).z);
        }
    }

    out
}

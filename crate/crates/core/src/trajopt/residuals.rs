//! Cost and constraint residuals with sparse analytic Jacobians.
//!
//! Rows are emitted block by block in a fixed order; [`RowMeta`] labels
//! each one. Inequality rows are `g(z) ≤ 0`, equality rows `h(z) = 0`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::math::{exp_map, exp_map_derivatives, skew};
use crate::robot::ChainPose;
use crate::srbd::GRAVITY;

use super::problem::JumpProblem;
use super::vars::{DecisionVariables, VarLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Dynamics,
    Kinematics,
    NoSlip,
    Friction,
    ContactForce,
    JointLimit,
    MotorTorque,
    Initial,
    Apex,
    Clearance,
}

impl Block {
    pub const ALL: [Block; 10] = [
        Block::Dynamics,
        Block::Kinematics,
        Block::NoSlip,
        Block::Friction,
        Block::ContactForce,
        Block::JointLimit,
        Block::MotorTorque,
        Block::Initial,
        Block::Apex,
        Block::Clearance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Dynamics => "dynamics",
            Block::Kinematics => "kinematics",
            Block::NoSlip => "no_slip",
            Block::Friction => "friction",
            Block::ContactForce => "contact_force",
            Block::JointLimit => "joint_limit",
            Block::MotorTorque => "motor_torque",
            Block::Initial => "initial",
            Block::Apex => "apex",
            Block::Clearance => "clearance",
        }
    }

    pub fn is_inequality(self) -> bool {
        matches!(
            self,
            Block::Friction | Block::JointLimit | Block::MotorTorque | Block::Apex | Block::Clearance
        )
    }

    /// Divisor that turns a raw residual into the reported (scaled) unit:
    /// forces by body weight, torques by body weight times one meter.
    pub fn scale(self, weight: f64) -> f64 {
        match self {
            Block::Friction | Block::ContactForce | Block::MotorTorque => weight,
            _ => 1.0,
        }
    }
}

/// Label of one residual row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowMeta {
    pub block: Block,
    pub knot: usize,
    /// Contact or joint index (0 where not applicable).
    pub item: usize,
    /// Component within the item.
    pub comp: usize,
}

/// Compressed sparse rows. Duplicate column entries within a row add up.
#[derive(Debug, Clone, Default)]
pub struct Csr {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn n_rows(&self) -> usize {
        self.row_ptr.len().saturating_sub(1)
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn to_dense(&self, n_cols: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows(), n_cols);
        for r in 0..self.n_rows() {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    /// `Jᵀ y`.
    pub fn tr_mul(&self, y: &[f64], n_cols: usize) -> DVector<f64> {
        let mut out = DVector::zeros(n_cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                for (c, v) in self.row(r) {
                    out[c] += v * yr;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Residuals {
    pub values: Vec<f64>,
    pub meta: Vec<RowMeta>,
    pub jac: Option<Csr>,
}

struct Sink {
    values: Vec<f64>,
    meta: Vec<RowMeta>,
    jac: Option<Csr>,
}

impl Sink {
    fn new(with_jac: bool) -> Self {
        Self {
            values: Vec::new(),
            meta: Vec::new(),
            jac: with_jac.then(|| Csr {
                row_ptr: vec![0],
                ..Csr::default()
            }),
        }
    }

    fn wants_jac(&self) -> bool {
        self.jac.is_some()
    }

    fn row(&mut self, block: Block, knot: usize, item: usize, comp: usize, value: f64) {
        if let Some(j) = &mut self.jac {
            // close the previous row
            if self.values.len() + 1 != j.row_ptr.len() {
                j.row_ptr.push(j.cols.len());
            }
        }
        self.values.push(value);
        self.meta.push(RowMeta { block, knot, item, comp });
    }

    #[inline]
    fn d(&mut self, col: usize, val: f64) {
        if let Some(j) = &mut self.jac {
            if val != 0.0 {
                j.cols.push(col);
                j.vals.push(val);
            }
        }
    }

    fn finish(mut self) -> Residuals {
        if let Some(j) = &mut self.jac {
            while j.row_ptr.len() < self.values.len() + 1 {
                j.row_ptr.push(j.cols.len());
            }
        }
        Residuals {
            values: self.values,
            meta: self.meta,
            jac: self.jac,
        }
    }
}

/// Kinematic quantities of one knot, in the torso frame.
struct KnotKin {
    /// Contact positions.
    b: Vec<Vector3<f64>>,
    /// `∂b_i/∂q`, 3 × n.
    a: Vec<DMatrix<f64>>,
    /// `∂²b_i/∂q_j∂q_l` at `[j * n + l]`.
    hess: Vec<Vec<Vector3<f64>>>,
}

fn knot_kinematics(problem: &JumpProblem, q: &DVector<f64>, with_hess: bool) -> KnotKin {
    let model = &problem.model;
    let pose: ChainPose = model.chain_pose(q).expect("joint vector sized by layout");
    let b = model.contact_points_base(&pose);
    let mut a = Vec::with_capacity(b.len());
    let mut hess = Vec::new();
    for (c, bi) in model.contacts.iter().zip(&b) {
        a.push(model.point_jacobian_base(&pose, c.link_index, bi));
        if with_hess {
            hess.push(model.point_hessian_base(&pose, c.link_index, bi));
        }
    }
    KnotKin { b, a, hess }
}

/// Joint torques needed to produce the contact forces,
/// `τ = −S_jᵀ Σ_i J_iᵀ f_i`.
pub fn torque_estimate(
    problem_model: &crate::robot::RobotModel,
    base_rot: &Matrix3<f64>,
    q: &DVector<f64>,
    forces: &[Vector3<f64>],
) -> Result<DVector<f64>, crate::robot::ModelError> {
    let pose = problem_model.chain_pose(q)?;
    let mut tau = DVector::zeros(problem_model.n_joints());
    for (c, f) in problem_model.contacts.iter().zip(forces) {
        let b = pose.point(c.link_index, &c.offset);
        let a = problem_model.point_jacobian_base(&pose, c.link_index, &b);
        tau -= (base_rot * a).transpose() * f;
    }
    Ok(tau)
}

fn torques_from(kin: &KnotKin, rot: &Matrix3<f64>, forces: &[Vector3<f64>], n: usize) -> DVector<f64> {
    let mut tau = DVector::zeros(n);
    for (a, f) in kin.a.iter().zip(forces) {
        let rf = rot.transpose() * f;
        for j in 0..n {
            tau[j] -= rf.dot(&a.fixed_view::<3, 1>(0, j));
        }
    }
    tau
}

/// Tracking residuals `sqrt(2 Q) X_err`, so the cost is `½|c|²`.
pub fn cost_residuals(problem: &JumpProblem, vars: &DecisionVariables, with_jac: bool) -> Residuals {
    let lay = vars.layout;
    let mut s = Sink::new(with_jac);
    let w = problem.weights.diag.map(|x| (2.0 * x).sqrt());
    for k in 0..lay.n_knots {
        let des = &problem.desired[k];
        let p = vars.p(k);
        let v = vars.v(k);
        let om = vars.w(k);
        for c in 0..3 {
            s.row(Block::Initial, k, 0, c, w[c] * (p[c] - des.p[c]));
            s.d(lay.p(k) + c, w[c]);
        }
        let e = des.rot.transpose() * vars.rot(k);
        let err = [e[(2, 1)] - e[(1, 2)], e[(0, 2)] - e[(2, 0)], e[(1, 0)] - e[(0, 1)]];
        // (row, col) pairs of R_err entering each component with + and − sign
        let pairs = [((2, 1), (1, 2)), ((0, 2), (2, 0)), ((1, 0), (0, 1))];
        for c in 0..3 {
            let wc = w[3 + c];
            s.row(Block::Initial, k, 1, c, wc * 0.5 * err[c]);
            let ((pa, pb), (ma, mb)) = pairs[c];
            // E[a][b] = Σ_r Rdes[r][a] R[r][b]
            for r in 0..3 {
                s.d(lay.r(k, r, pb), wc * 0.5 * des.rot[(r, pa)]);
                s.d(lay.r(k, r, mb), -wc * 0.5 * des.rot[(r, ma)]);
            }
        }
        for c in 0..3 {
            s.row(Block::Initial, k, 2, c, w[6 + c] * (v[c] - des.v[c]));
            s.d(lay.v(k) + c, w[6 + c]);
        }
        for c in 0..3 {
            s.row(Block::Initial, k, 3, c, w[9 + c] * (om[c] - des.omega[c]));
            s.d(lay.w(k) + c, w[9 + c]);
        }
    }
    s.finish()
}

/// `Σ_k X_errᵀ Q X_err`.
pub fn eval_cost(problem: &JumpProblem, vars: &DecisionVariables) -> f64 {
    0.5 * cost_residuals(problem, vars, false)
        .values
        .iter()
        .map(|r| r * r)
        .sum::<f64>()
}

/// All constraint rows in block order.
pub fn eval_constraints(problem: &JumpProblem, vars: &DecisionVariables) -> Residuals {
    constraints(problem, vars, false)
}

pub fn constraints(problem: &JumpProblem, vars: &DecisionVariables, with_jac: bool) -> Residuals {
    let lay = vars.layout;
    let n = lay.n_joints;
    let nc = lay.n_contacts;
    let nk = lay.n_knots;
    let sched = &problem.schedule;
    let mut s = Sink::new(with_jac);

    let kin: Vec<KnotKin> = (0..nk)
        .map(|k| knot_kinematics(problem, &vars.q(k), with_jac))
        .collect();

    for k in 0..nk - 1 {
        dynamics_rows(&mut s, problem, vars, k);
    }

    for (k, kk) in kin.iter().enumerate() {
        let p = vars.p(k);
        let rot = vars.rot(k);
        for i in 0..nc {
            let world = p + rot * kk.b[i] - vars.pos(k, i);
            for c in 0..3 {
                s.row(Block::Kinematics, k, i, c, world[c]);
                if s.wants_jac() {
                    s.d(lay.p(k) + c, 1.0);
                    for b in 0..3 {
                        s.d(lay.r(k, c, b), kk.b[i][b]);
                    }
                    let ra = rot.row(c) * &kk.a[i];
                    for j in 0..n {
                        s.d(lay.q(k) + j, ra[j]);
                    }
                    s.d(lay.pos(k, i) + c, -1.0);
                }
            }
        }
    }

    for k in 0..nk - 1 {
        for i in 0..nc {
            let on = sched.c(k, i);
            let d = (vars.pos(k + 1, i) - vars.pos(k, i)) * on;
            for c in 0..3 {
                s.row(Block::NoSlip, k, i, c, d[c]);
                if on != 0.0 {
                    s.d(lay.pos(k + 1, i) + c, 1.0);
                    s.d(lay.pos(k, i) + c, -1.0);
                }
            }
        }
    }

    let mu = problem.mu;
    for k in 0..nk {
        for i in 0..nc {
            let f = vars.force(k, i);
            let at = lay.force(k, i);
            let rows = [
                (f.x - mu * f.z, [1.0, 0.0, -mu]),
                (-f.x - mu * f.z, [-1.0, 0.0, -mu]),
                (f.y - mu * f.z, [0.0, 1.0, -mu]),
                (-f.y - mu * f.z, [0.0, -1.0, -mu]),
                (-f.z, [0.0, 0.0, -1.0]),
            ];
            for (r, (val, grad)) in rows.iter().enumerate() {
                s.row(Block::Friction, k, i, r, *val);
                for c in 0..3 {
                    s.d(at + c, grad[c]);
                }
            }
        }
    }

    for k in 0..nk {
        for i in 0..nc {
            let off = 1.0 - sched.c(k, i);
            let f = vars.force(k, i) * off;
            for c in 0..3 {
                s.row(Block::ContactForce, k, i, c, f[c]);
                s.d(lay.force(k, i) + c, off);
            }
        }
    }

    let q_min = problem.model.q_min();
    let q_max = problem.model.q_max();
    for k in 0..nk {
        let q = vars.q(k);
        for j in 0..n {
            s.row(Block::JointLimit, k, j, 0, q[j] - q_max[j]);
            s.d(lay.q(k) + j, 1.0);
            s.row(Block::JointLimit, k, j, 1, q_min[j] - q[j]);
            s.d(lay.q(k) + j, -1.0);
        }
    }

    for (k, kk) in kin.iter().enumerate() {
        torque_rows(&mut s, problem, vars, k, kk);
    }

    initial_rows(&mut s, problem, vars);

    if let Some(target) = problem.apex_target() {
        let last = nk - 1;
        s.row(Block::Apex, last, 0, 0, target - vars.p(last).z);
        s.d(lay.p(last) + 2, -1.0);
    }

    for k in 0..nk {
        for i in 0..nc {
            let off = 1.0 - sched.c(k, i);
            s.row(Block::Clearance, k, i, 0, -off * vars.pos(k, i).z);
            s.d(lay.pos(k, i) + 2, -off);
        }
    }

    s.finish()
}

fn initial_rows(s: &mut Sink, problem: &JumpProblem, vars: &DecisionVariables) {
    let lay = vars.layout;
    let x0 = &problem.initial_state;
    let p = vars.p(0) - x0.p;
    for c in 0..3 {
        s.row(Block::Initial, 0, 0, c, p[c]);
        s.d(lay.p(0) + c, 1.0);
    }
    let r = vars.rot(0) - x0.rot;
    for a in 0..3 {
        for b in 0..3 {
            s.row(Block::Initial, 0, 1, 3 * a + b, r[(a, b)]);
            s.d(lay.r(0, a, b), 1.0);
        }
    }
    let v = vars.v(0) - x0.v;
    for c in 0..3 {
        s.row(Block::Initial, 0, 2, c, v[c]);
        s.d(lay.v(0) + c, 1.0);
    }
    let w = vars.w(0) - x0.omega;
    for c in 0..3 {
        s.row(Block::Initial, 0, 3, c, w[c]);
        s.d(lay.w(0) + c, 1.0);
    }
    let q = vars.q(0) - &problem.initial_q;
    for j in 0..lay.n_joints {
        s.row(Block::Initial, 0, 4, j, q[j]);
        s.d(lay.q(0) + j, 1.0);
    }
}

fn torque_rows(s: &mut Sink, problem: &JumpProblem, vars: &DecisionVariables, k: usize, kk: &KnotKin) {
    let lay = vars.layout;
    let n = lay.n_joints;
    let rot = vars.rot(k);
    let q = vars.q(k);
    let forces = vars.forces(k);
    let tau = torques_from(kk, &rot, &forces, n);
    let cap = problem.torque_capacity(&q);
    let cap_grad = if s.wants_jac() {
        Some(problem.torque_capacity_gradient(&q))
    } else {
        None
    };
    for j in 0..n {
        for (comp, sign) in [(0usize, 1.0), (1, -1.0)] {
            s.row(Block::MotorTorque, k, j, comp, sign * tau[j] - cap[j]);
            if let Some(cg) = &cap_grad {
                // τ_j = −Σ_i f_iᵀ R a_ij
                for (i, f) in forces.iter().enumerate() {
                    let ra = rot * kk.a[i].column(j);
                    for c in 0..3 {
                        s.d(lay.force(k, i) + c, -sign * ra[c]);
                    }
                    for a in 0..3 {
                        for b in 0..3 {
                            s.d(lay.r(k, a, b), -sign * f[a] * kk.a[i][(b, j)]);
                        }
                    }
                }
                for l in 0..n {
                    let mut dq = 0.0;
                    for (i, f) in forces.iter().enumerate() {
                        dq -= f.dot(&(rot * kk.hess[i][j * n + l]));
                    }
                    s.d(lay.q(k) + l, sign * dq - cg[(j, l)]);
                }
            }
        }
    }
}

/// Per-knot torque estimates for every knot of `vars`.
pub fn knot_torques(problem: &JumpProblem, vars: &DecisionVariables) -> Vec<DVector<f64>> {
    (0..vars.n_knots())
        .map(|k| {
            let kk = knot_kinematics(problem, &vars.q(k), false);
            torques_from(&kk, &vars.rot(k), &vars.forces(k), vars.layout.n_joints)
        })
        .collect()
}

/// Local variables that feed the predicted angular velocity, in order:
/// p(3), R(9), ω(3), r_i(3 n_c), f_i(3 n_c).
fn omega_locals(lay: &VarLayout, k: usize) -> Vec<usize> {
    let mut cols = Vec::with_capacity(18 + 6 * lay.n_contacts);
    cols.extend(lay.p(k)..lay.p(k) + 3);
    cols.extend(lay.r(k, 0, 0)..lay.r(k, 0, 0) + 9);
    cols.extend(lay.w(k)..lay.w(k) + 3);
    for i in 0..lay.n_contacts {
        cols.extend(lay.pos(k, i)..lay.pos(k, i) + 3);
    }
    for i in 0..lay.n_contacts {
        cols.extend(lay.force(k, i)..lay.force(k, i) + 3);
    }
    cols
}

fn dynamics_rows(s: &mut Sink, problem: &JumpProblem, vars: &DecisionVariables, k: usize) {
    let lay = vars.layout;
    let nc = lay.n_contacts;
    let dt = problem.dt();
    let m = problem.mass;
    let inertia = &problem.inertia;
    let inv = &problem.inertia_inv;

    let p = vars.p(k);
    let rot = vars.rot(k);
    let v = vars.v(k);
    let om = vars.w(k);
    let forces = vars.forces(k);
    let positions = vars.positions(k);

    let f_sum: Vector3<f64> = forces.iter().sum();
    let moment: Vector3<f64> = forces
        .iter()
        .zip(&positions)
        .map(|(f, r)| (r - p).cross(f))
        .sum();
    let v_next = v + (f_sum / m + GRAVITY) * dt;
    let p_next = p + v_next * dt;
    let spin = exp_map(&(-dt * om));
    let momentum = inertia * om;
    let om_next = inv * (spin * momentum + rot.transpose() * moment * dt);
    let step_rot = exp_map(&(dt * om_next));
    let rot_next = rot * step_rot;

    let rp = vars.p(k + 1) - p_next;
    for c in 0..3 {
        s.row(Block::Dynamics, k, 0, c, rp[c]);
        if s.wants_jac() {
            s.d(lay.p(k + 1) + c, 1.0);
            s.d(lay.p(k) + c, -1.0);
            s.d(lay.v(k) + c, -dt);
            for i in 0..nc {
                s.d(lay.force(k, i) + c, -dt * dt / m);
            }
        }
    }

    // ∂ω⁺/∂(local), columns ordered as `omega_locals`.
    let locals = omega_locals(&lay, k);
    let mut dom = DMatrix::<f64>::zeros(3, locals.len());
    if s.wants_jac() {
        let rt = rot.transpose();
        let scaled = inv * dt;
        dom.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(scaled * rt * skew(&f_sum)));
        for a in 0..3 {
            for b in 0..3 {
                let mut col = Vector3::zeros();
                col[b] = moment[a];
                dom.fixed_view_mut::<3, 1>(0, 3 + 3 * a + b)
                    .copy_from(&(scaled * col));
            }
        }
        let dspin = exp_map_derivatives(&(-dt * om));
        let mut d_om = inv * spin * inertia;
        for j in 0..3 {
            let col = inv * (dspin[j] * momentum) * (-dt);
            let mut c = d_om.column_mut(j);
            c += col;
        }
        dom.fixed_view_mut::<3, 3>(0, 12).copy_from(&d_om);
        for i in 0..nc {
            dom.fixed_view_mut::<3, 3>(0, 15 + 3 * i)
                .copy_from(&(scaled * rt * (-skew(&forces[i]))));
            dom.fixed_view_mut::<3, 3>(0, 15 + 3 * nc + 3 * i)
                .copy_from(&(scaled * rt * skew(&(positions[i] - p))));
        }
    }

    let r_next_var = vars.rot(k + 1);
    let rr = r_next_var - rot_next;
    let d_step = if s.wants_jac() {
        Some(exp_map_derivatives(&(dt * om_next)))
    } else {
        None
    };
    for a in 0..3 {
        for b in 0..3 {
            s.row(Block::Dynamics, k, 1, 3 * a + b, rr[(a, b)]);
            if let Some(ds) = &d_step {
                s.d(lay.r(k + 1, a, b), 1.0);
                // direct dependence on R_k
                for c in 0..3 {
                    s.d(lay.r(k, a, c), -step_rot[(c, b)]);
                }
                // through ω⁺: −dt Σ_j (R D_j)[a][b] ∂ω⁺_j
                let rd: [f64; 3] = std::array::from_fn(|j| (rot.row(a) * ds[j].column(b))[0] * dt);
                for (col_idx, &col) in locals.iter().enumerate() {
                    let g = rd[0] * dom[(0, col_idx)] + rd[1] * dom[(1, col_idx)] + rd[2] * dom[(2, col_idx)];
                    s.d(col, -g);
                }
            }
        }
    }

    let rv = vars.v(k + 1) - v_next;
    for c in 0..3 {
        s.row(Block::Dynamics, k, 2, c, rv[c]);
        if s.wants_jac() {
            s.d(lay.v(k + 1) + c, 1.0);
            s.d(lay.v(k) + c, -1.0);
            for i in 0..nc {
                s.d(lay.force(k, i) + c, -dt / m);
            }
        }
    }

    let rw = vars.w(k + 1) - om_next;
    for c in 0..3 {
        s.row(Block::Dynamics, k, 3, c, rw[c]);
        if s.wants_jac() {
            s.d(lay.w(k + 1) + c, 1.0);
            for (col_idx, &col) in locals.iter().enumerate() {
                s.d(col, -dom[(c, col_idx)]);
            }
        }
    }
}

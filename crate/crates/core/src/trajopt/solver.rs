//! Augmented Lagrangian outer loop over a pluggable inner minimizer.
//!
//! Constraint rows are divided by their block scale before they enter the
//! merit, so one penalty weight serves forces, torques and kinematics. The
//! merit is a sum of squares,
//! `½|c|² + ½ρ Σ_eq (h + λ/ρ)² + ½ρ Σ_ineq max(0, g + μ/ρ)²`,
//! which lets the default backend run Levenberg-Marquardt on the banded
//! normal equations.

use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::banded::BandedSpd;
use super::init::initial_guess;
use super::problem::JumpProblem;
use super::residuals::{constraints, cost_residuals, knot_torques, Csr};
use super::validate::{validate_solution, ViolationReport};
use super::vars::DecisionVariables;
use super::TrajoptError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Levenberg-Marquardt on the Gauss-Newton model of the merit.
    GaussNewton,
    /// Limited-memory BFGS with a backtracking line search.
    Lbfgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub backend: Backend,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Required max violation, scaled units.
    pub constraint_tol: f64,
    /// Required infinity norm of the Lagrangian gradient over free variables.
    pub gradient_tol: f64,
    pub rho_init: f64,
    pub rho_max: f64,
    /// Recorded in the report; drives `jitter`.
    pub seed: u64,
    /// Uniform perturbation added to free variables of the initial guess.
    pub jitter: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            backend: Backend::GaussNewton,
            max_outer: 40,
            max_inner: 80,
            constraint_tol: 1e-4,
            gradient_tol: 1e-5,
            rho_init: 1e2,
            rho_max: 1e10,
            seed: 0,
            jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// Iteration cap reached with a small but nonzero shortfall.
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Tracking cost at the returned point.
    pub cost: f64,
    /// Lagrangian gradient infinity norm at the returned point.
    pub gradient_norm: f64,
    pub seed: u64,
    /// From the independent validator.
    pub violation: ViolationReport,
}

impl SolverReport {
    pub fn max_violation(&self) -> f64 {
        self.violation.max_violation
    }
}

#[derive(Debug, Clone)]
pub struct JumpSolution {
    pub vars: DecisionVariables,
    /// Joint torque estimate at every knot.
    pub torques: Vec<DVector<f64>>,
    pub report: SolverReport,
}

/// The merit seen by an inner minimizer: `½|r(z)|²` over the free variables.
pub struct Subproblem<'a> {
    problem: &'a JumpProblem,
    free: &'a [bool],
    scale: &'a [f64],
    inequality: &'a [bool],
    mult: &'a [f64],
    rho: f64,
}

impl Subproblem<'_> {
    pub fn n_vars(&self) -> usize {
        self.free.len()
    }

    pub fn is_free(&self, i: usize) -> bool {
        self.free[i]
    }

    /// Stacked residual and, on request, its Jacobian.
    pub fn residual(&self, z: &DVector<f64>, with_jac: bool) -> (Vec<f64>, Option<Csr>) {
        let vars = DecisionVariables {
            layout: self.problem.layout(),
            z: z.clone(),
        };
        let cost = cost_residuals(self.problem, &vars, with_jac);
        let cons = constraints(self.problem, &vars, with_jac);
        let sr = self.rho.sqrt();
        let mut values = cost.values;
        let mut jac = cost.jac;
        for (row, &c) in cons.values.iter().enumerate() {
            let shifted = c / self.scale[row] + self.mult[row] / self.rho;
            let on = !self.inequality[row] || shifted > 0.0;
            values.push(if on { sr * shifted } else { 0.0 });
            if let (Some(j), Some(cj)) = (&mut jac, &cons.jac) {
                if on {
                    let f = sr / self.scale[row];
                    for (col, v) in cj.row(row) {
                        j.cols.push(col);
                        j.vals.push(v * f);
                    }
                }
                j.row_ptr.push(j.cols.len());
            }
        }
        (values, jac)
    }

    pub fn merit(&self, z: &DVector<f64>) -> f64 {
        0.5 * self.residual(z, false).0.iter().map(|r| r * r).sum::<f64>()
    }

    /// Merit, gradient (zero on pinned variables) and Jacobian.
    pub fn linearize(&self, z: &DVector<f64>) -> (f64, DVector<f64>, Csr) {
        let (r, j) = self.residual(z, true);
        let j = j.expect("requested");
        let mut g = j.tr_mul(&r, self.n_vars());
        for (i, gi) in g.iter_mut().enumerate() {
            if !self.free[i] {
                *gi = 0.0;
            }
        }
        (0.5 * r.iter().map(|x| x * x).sum::<f64>(), g, j)
    }
}

/// A minimizer for the augmented Lagrangian subproblem.
pub trait InnerSolver {
    /// Improves `z` in place; returns the iterations spent.
    fn minimize(&mut self, sub: &Subproblem, z: &mut DVector<f64>, max_iter: usize, tol: f64) -> usize;
}

/// Levenberg-Marquardt with Marquardt scaling and Nielsen's damping update.
#[derive(Debug, Clone)]
pub struct LevenbergMarquardt {
    damping: f64,
}

impl Default for LevenbergMarquardt {
    fn default() -> Self {
        Self { damping: 1e-4 }
    }
}

fn normal_matrix(j: &Csr, free: &[bool]) -> BandedSpd {
    let n = free.len();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(j.n_rows());
    let mut bw = 0;
    for r in 0..j.n_rows() {
        let mut e: Vec<(usize, f64)> = j.row(r).filter(|(c, _)| free[*c]).collect();
        e.sort_unstable_by_key(|x| x.0);
        e.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        if let (Some(first), Some(last)) = (e.first(), e.last()) {
            bw = bw.max(last.0 - first.0);
        }
        rows.push(e);
    }
    let mut h = BandedSpd::zeros(n, bw);
    for e in &rows {
        for (a, &(ca, va)) in e.iter().enumerate() {
            for &(cb, vb) in &e[..=a] {
                h.add(ca, cb, va * vb);
            }
        }
    }
    for (i, &f) in free.iter().enumerate() {
        if !f {
            h.add_diag(i, 1.0);
        }
    }
    h
}

impl InnerSolver for LevenbergMarquardt {
    fn minimize(&mut self, sub: &Subproblem, z: &mut DVector<f64>, max_iter: usize, tol: f64) -> usize {
        let n = sub.n_vars();
        let (mut f, mut g, mut j) = sub.linearize(z);
        let mut nu = 2.0;
        let mut it = 0;
        while it < max_iter {
            it += 1;
            if g.amax() < tol {
                break;
            }
            let h = normal_matrix(&j, sub.free);
            let diag: Vec<f64> = (0..n).map(|i| h.diag(i).max(1e-9)).collect();
            let mut accepted = false;
            while self.damping < 1e20 {
                let mut hd = h.clone();
                for (i, d) in diag.iter().enumerate() {
                    if sub.is_free(i) {
                        hd.add_diag(i, self.damping * d);
                    }
                }
                let Some(chol) = hd.factor() else {
                    self.damping *= nu;
                    nu *= 2.0;
                    continue;
                };
                let mut step: Vec<f64> = g.iter().map(|x| -x).collect();
                chol.solve(&mut step);
                let step = DVector::from_vec(step);
                let trial = &*z + &step;
                let f_new = sub.merit(&trial);
                let pred = 0.5
                    * step
                        .iter()
                        .zip(g.iter())
                        .zip(&diag)
                        .map(|((s, gi), d)| s * (self.damping * d * s - gi))
                        .sum::<f64>();
                let ratio = (f - f_new) / pred;
                if f_new.is_finite() && pred > 0.0 && ratio > 1e-4 {
                    *z = trial;
                    self.damping *= (1.0 - (2.0 * ratio - 1.0).powi(3)).max(1.0 / 3.0);
                    self.damping = self.damping.max(1e-12);
                    nu = 2.0;
                    accepted = true;
                    break;
                }
                if step.amax() <= 1e-15 * (1.0 + z.amax()) {
                    break;
                }
                self.damping *= nu;
                nu *= 2.0;
            }
            if !accepted {
                break;
            }
            let f_prev = f;
            (f, g, j) = sub.linearize(z);
            if f_prev - f <= 1e-16 * f_prev.max(1.0) {
                break;
            }
        }
        it
    }
}

/// L-BFGS with an Armijo backtracking line search.
#[derive(Debug, Clone)]
pub struct Lbfgs {
    pub memory: usize,
}

impl Default for Lbfgs {
    fn default() -> Self {
        Self { memory: 12 }
    }
}

impl InnerSolver for Lbfgs {
    fn minimize(&mut self, sub: &Subproblem, z: &mut DVector<f64>, max_iter: usize, tol: f64) -> usize {
        let grad = |z: &DVector<f64>| {
            let (f, g, _) = sub.linearize(z);
            (f, g)
        };
        let (mut f, mut g) = grad(z);
        let mut hist: Vec<(DVector<f64>, DVector<f64>, f64)> = Vec::new();
        let mut it = 0;
        while it < max_iter && g.amax() >= tol {
            it += 1;
            let mut d = -&g;
            let mut alphas = Vec::with_capacity(hist.len());
            for (s, y, rho) in hist.iter().rev() {
                let a = rho * s.dot(&d);
                d -= y * a;
                alphas.push(a);
            }
            if let Some((s, y, _)) = hist.last() {
                d *= s.dot(y) / y.dot(y);
            } else {
                d /= g.norm().max(1.0);
            }
            for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
                let b = rho * y.dot(&d);
                d += s * (a - b);
            }
            let slope = g.dot(&d);
            if slope >= 0.0 {
                hist.clear();
                continue;
            }
            let mut step = 1.0;
            let mut next = None;
            for _ in 0..40 {
                let trial = &*z + &d * step;
                let ft = sub.merit(&trial);
                if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                    next = Some((trial, ft));
                    break;
                }
                step *= 0.5;
            }
            let Some((trial, _)) = next else { break };
            let (f_new, g_new) = grad(&trial);
            let s = &trial - &*z;
            let y = &g_new - &g;
            let sy = s.dot(&y);
            if sy > 1e-12 * s.norm() * y.norm() {
                hist.push((s, y, 1.0 / sy));
                if hist.len() > self.memory {
                    hist.remove(0);
                }
            }
            *z = trial;
            let done = f - f_new <= 1e-16 * f.max(1.0);
            f = f_new;
            g = g_new;
            if done {
                break;
            }
        }
        it
    }
}

pub fn solve(problem: &JumpProblem, config: &SolverConfig) -> Result<JumpSolution, TrajoptError> {
    solve_from(problem, config, initial_guess(problem))
}

/// Solves starting from `start`. Pinned variables keep their values.
pub fn solve_from(
    problem: &JumpProblem,
    config: &SolverConfig,
    start: DecisionVariables,
) -> Result<JumpSolution, TrajoptError> {
    let mut inner: Box<dyn InnerSolver> = match config.backend {
        Backend::GaussNewton => Box::new(LevenbergMarquardt::default()),
        Backend::Lbfgs => Box::new(Lbfgs::default()),
    };
    solve_with(problem, config, start, inner.as_mut())
}

/// Same as [`solve_from`] with a caller-supplied inner minimizer.
pub fn solve_with(
    problem: &JumpProblem,
    config: &SolverConfig,
    start: DecisionVariables,
    inner: &mut dyn InnerSolver,
) -> Result<JumpSolution, TrajoptError> {
    let layout = problem.layout();
    if start.layout != layout {
        return Err(TrajoptError::InvalidSpec("initial guess layout does not match the problem".into()));
    }
    let free: Vec<bool> = problem.fixed.iter().map(|f| !f).collect();
    let mut z = start.z;
    if config.jitter > 0.0 {
        let mut rng = StdRng::seed_from_u64(config.seed);
        for (zi, &fr) in z.iter_mut().zip(&free) {
            if fr {
                *zi += config.jitter * rng.random_range(-1.0..1.0);
            }
        }
    }

    let probe = constraints(problem, &DecisionVariables { layout, z: z.clone() }, false);
    let weight = problem.weight();
    let scale: Vec<f64> = probe.meta.iter().map(|m| m.block.scale(weight)).collect();
    let inequality: Vec<bool> = probe.meta.iter().map(|m| m.block.is_inequality()).collect();
    let mut mult = vec![0.0; probe.values.len()];
    let mut rho = config.rho_init;
    let mut prev_violation = f64::INFINITY;
    let mut inner_total = 0;
    let mut gradient_norm = f64::INFINITY;
    let mut outer = 0;
    let mut converged = false;

    while outer < config.max_outer {
        outer += 1;
        let sub = Subproblem {
            problem,
            free: &free,
            scale: &scale,
            inequality: &inequality,
            mult: &mult,
            rho,
        };
        inner_total += inner.minimize(&sub, &mut z, config.max_inner, 0.1 * config.gradient_tol);
        if z.iter().any(|x| !x.is_finite()) {
            return Err(TrajoptError::NonFinite);
        }
        let vars = DecisionVariables { layout, z: z.clone() };
        let cons = constraints(problem, &vars, true);
        let violation = max_violation(&cons.values, &scale, &inequality);
        for (row, &c) in cons.values.iter().enumerate() {
            let m = mult[row] + rho * c / scale[row];
            mult[row] = if inequality[row] { m.max(0.0) } else { m };
        }
        gradient_norm = lagrangian_gradient(problem, &vars, &cons, &mult, &scale, &free).amax();
        if violation < config.constraint_tol && gradient_norm < config.gradient_tol {
            converged = true;
            break;
        }
        if violation > 0.25 * prev_violation {
            rho = (rho * 10.0).min(config.rho_max);
        }
        prev_violation = violation;
    }

    let vars = DecisionVariables { layout, z };
    let violation = validate_solution(problem, &vars);
    let cost = super::residuals::eval_cost(problem, &vars);
    let report = SolverReport {
        status: if converged {
            SolveStatus::Converged
        } else {
            SolveStatus::IterationLimit
        },
        outer_iterations: outer,
        inner_iterations: inner_total,
        cost,
        gradient_norm,
        seed: config.seed,
        violation,
    };
    let solution = JumpSolution {
        torques: knot_torques(problem, &vars),
        vars,
        report,
    };
    if !converged && solution.report.max_violation() > 1e-2 {
        return Err(TrajoptError::NotConverged {
            iterations: outer,
            violation: solution.report.max_violation(),
            solution: Box::new(solution),
        });
    }
    Ok(solution)
}

fn max_violation(values: &[f64], scale: &[f64], inequality: &[bool]) -> f64 {
    values
        .iter()
        .zip(scale)
        .zip(inequality)
        .map(|((c, s), &ineq)| if ineq { c.max(0.0) / s } else { c.abs() / s })
        .fold(0.0, f64::max)
}

fn lagrangian_gradient(
    problem: &JumpProblem,
    vars: &DecisionVariables,
    cons: &super::residuals::Residuals,
    mult: &[f64],
    scale: &[f64],
    free: &[bool],
) -> DVector<f64> {
    let n = vars.z.len();
    let cost = cost_residuals(problem, vars, true);
    let mut g = cost.jac.as_ref().expect("requested").tr_mul(&cost.values, n);
    let weighted: Vec<f64> = mult.iter().zip(scale).map(|(m, s)| m / s).collect();
    g += cons.jac.as_ref().expect("requested").tr_mul(&weighted, n);
    for (i, gi) in g.iter_mut().enumerate() {
        if !free[i] {
            *gi = 0.0;
        }
    }
    g
}

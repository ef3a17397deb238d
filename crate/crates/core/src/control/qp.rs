//! Dense strictly convex QP by the Goldfarb-Idnani dual active-set method.
//!
//! `min ½ xᵀHx + cᵀx  s.t.  A_eq x = b_eq,  A_in x ≥ b_in`.
//! Sized for the handful of contact forces the balance controller needs, so
//! the projected quantities are rebuilt from scratch at every step.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    Hessian,
    #[error("constraints are infeasible (blocked at constraint {0})")]
    Infeasible(usize),
    #[error("dimension mismatch in {0}")]
    Dimension(&'static str),
    #[error("active-set iteration limit reached")]
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers in constraint order: equalities first, then inequalities.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
}

pub struct Qp<'a> {
    pub h: &'a DMatrix<f64>,
    pub c: &'a DVector<f64>,
    pub a_eq: &'a DMatrix<f64>,
    pub b_eq: &'a DVector<f64>,
    pub a_in: &'a DMatrix<f64>,
    pub b_in: &'a DVector<f64>,
}

const FEAS_TOL: f64 = 1e-11;

impl Qp<'_> {
    fn n_eq(&self) -> usize {
        self.a_eq.nrows()
    }

    fn row(&self, k: usize) -> (DVector<f64>, f64) {
        let me = self.n_eq();
        if k < me {
            (self.a_eq.row(k).transpose(), self.b_eq[k])
        } else {
            (self.a_in.row(k - me).transpose(), self.b_in[k - me])
        }
    }

    pub fn solve(&self) -> Result<QpSolution, QpError> {
        let n = self.h.nrows();
        if self.h.ncols() != n || self.c.len() != n {
            return Err(QpError::Dimension("objective"));
        }
        if (self.a_eq.nrows() > 0 && self.a_eq.ncols() != n) || self.b_eq.len() != self.a_eq.nrows() {
            return Err(QpError::Dimension("equalities"));
        }
        if (self.a_in.nrows() > 0 && self.a_in.ncols() != n) || self.b_in.len() != self.a_in.nrows() {
            return Err(QpError::Dimension("inequalities"));
        }
        let chol = self.h.clone().cholesky().ok_or(QpError::Hessian)?;
        let hinv = chol.inverse();
        let me = self.n_eq();
        let m = me + self.a_in.nrows();

        let mut x = -(&hinv * self.c);
        // active constraints with their sign (equalities may enter flipped)
        let mut active: Vec<(usize, f64)> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let scale = |b: f64| FEAS_TOL * (1.0 + b.abs());

        for _ in 0..(10 * (m + n) + 10) {
            // pick the next constraint: pending equalities first, then the
            // most violated inequality
            let pending_eq = (0..me).find(|k| !active.iter().any(|a| a.0 == *k));
            let (p, sign) = if let Some(k) = pending_eq {
                let (nk, bk) = self.row(k);
                let s = nk.dot(&x) - bk;
                (k, if s > 0.0 { -1.0 } else { 1.0 })
            } else {
                let mut worst = None;
                let mut worst_s = 0.0;
                for k in me..m {
                    if active.iter().any(|a| a.0 == k) {
                        continue;
                    }
                    let (nk, bk) = self.row(k);
                    let s = nk.dot(&x) - bk;
                    if s < -scale(bk) && s < worst_s {
                        worst_s = s;
                        worst = Some(k);
                    }
                }
                match worst {
                    Some(k) => (k, 1.0),
                    None => break,
                }
            };
            let (np, bp) = self.row(p);
            let np = np * sign;
            let bp = bp * sign;
            let mut u_p = 0.0;
            loop {
                let s = np.dot(&x) - bp;
                let is_eq = p < me;
                if (!is_eq && s >= -scale(bp)) || (is_eq && s.abs() <= scale(bp)) {
                    // satisfied along the way without becoming active
                    if is_eq {
                        active.push((p, sign));
                        u.push(u_p);
                    } else if u_p > 0.0 {
                        active.push((p, sign));
                        u.push(u_p);
                    }
                    break;
                }
                let (z, r) = directions(&hinv, self, &active, &np);
                let t1 = active
                    .iter()
                    .zip(&r)
                    .enumerate()
                    .filter(|(_, ((k, _), rk))| *k >= me && **rk > 1e-14)
                    .map(|(i, (_, rk))| (u[i] / rk, i))
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                let zn = z.dot(&np);
                if z.amax() <= 1e-13 || zn <= 1e-14 {
                    // the new normal is dependent on the active ones
                    let Some((t, drop)) = t1 else {
                        return Err(QpError::Infeasible(p));
                    };
                    for (ui, ri) in u.iter_mut().zip(&r) {
                        *ui -= t * ri;
                    }
                    u_p += t;
                    active.remove(drop);
                    u.remove(drop);
                    continue;
                }
                let t2 = -s / zn;
                let (t, blocking) = match t1 {
                    Some((t1, i)) if t1 < t2 => (t1, Some(i)),
                    _ => (t2, None),
                };
                x += &z * t;
                for (ui, ri) in u.iter_mut().zip(&r) {
                    *ui -= t * ri;
                }
                u_p += t;
                match blocking {
                    Some(i) => {
                        active.remove(i);
                        u.remove(i);
                    }
                    None => {
                        active.push((p, sign));
                        u.push(u_p);
                        break;
                    }
                }
            }
            let all_eq = (0..me).all(|k| active.iter().any(|a| a.0 == k));
            if all_eq && (me..m).all(|k| {
                let (nk, bk) = self.row(k);
                nk.dot(&x) - bk >= -scale(bk)
            }) {
                return Ok(finish(x, &active, &u, m));
            }
        }
        let all_eq = (0..me).all(|k| active.iter().any(|a| a.0 == k));
        let feasible = (me..m).all(|k| {
            let (nk, bk) = self.row(k);
            nk.dot(&x) - bk >= -scale(bk)
        });
        if all_eq && feasible {
            Ok(finish(x, &active, &u, m))
        } else {
            Err(QpError::IterationLimit)
        }
    }
}

fn finish(x: DVector<f64>, active: &[(usize, f64)], u: &[f64], m: usize) -> QpSolution {
    let mut multipliers = DVector::zeros(m);
    for ((k, sign), ui) in active.iter().zip(u) {
        multipliers[*k] = sign * ui;
    }
    QpSolution {
        x,
        multipliers,
        active: active.iter().map(|a| a.0).collect(),
    }
}

/// Primal step direction in the null space of the active normals and the
/// change in their multipliers.
fn directions(hinv: &DMatrix<f64>, qp: &Qp, active: &[(usize, f64)], np: &DVector<f64>) -> (DVector<f64>, Vec<f64>) {
    let gn = hinv * np;
    if active.is_empty() {
        return (gn, Vec::new());
    }
    let n = np.len();
    let mut normals = DMatrix::zeros(n, active.len());
    for (j, (k, sign)) in active.iter().enumerate() {
        normals.set_column(j, &(qp.row(*k).0 * *sign));
    }
    let gnormals = hinv * &normals;
    let w = normals.transpose() * &gnormals;
    let rhs = normals.transpose() * &gn;
    let r = w.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(active.len()));
    let z = gn - gnormals * &r;
    (z, r.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_onto_box_corner() {
        // min |x - (2, 2)|² s.t. x ≤ 1 componentwise
        let h = DMatrix::identity(2, 2);
        let c = DVector::from_vec(vec![-2.0, -2.0]);
        let a_in = -DMatrix::<f64>::identity(2, 2);
        let b_in = DVector::from_vec(vec![-1.0, -1.0]);
        let empty = DMatrix::zeros(0, 2);
        let sol = Qp {
            h: &h,
            c: &c,
            a_eq: &empty,
            b_eq: &DVector::zeros(0),
            a_in: &a_in,
            b_in: &b_in,
        }
        .solve()
        .unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-12 && (sol.x[1] - 1.0).abs() < 1e-12);
        assert!((sol.multipliers[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_pair() {
        let h = DMatrix::identity(1, 1);
        let c = DVector::zeros(1);
        let a_in = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b_in = DVector::from_vec(vec![1.0, 0.0]);
        let err = Qp {
            h: &h,
            c: &c,
            a_eq: &DMatrix::zeros(0, 1),
            b_eq: &DVector::zeros(0),
            a_in: &a_in,
            b_in: &b_in,
        }
        .solve()
        .unwrap_err();
        assert!(matches!(err, QpError::Infeasible(_)));
    }
}

use nalgebra::{DMatrix, DVector};

use super::{ModelError, RobotModel};

/// Polynomial contribution `Σ_k coeffs[k] * q[var]^k` to entry `(row, col)`
/// of the motor Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkageTerm {
    pub row: usize,
    pub col: usize,
    pub var: usize,
    pub coeffs: Vec<f64>,
}

impl LinkageTerm {
    fn value(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    fn derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, c)| acc * x + k as f64 * c)
    }
}

/// Motor Jacobian `J_θ(q)`: motor velocities are `J_θ(q) · q̇`, so joint
/// torques are `J_θ(q)ᵀ · τ_motor`. Rows are motors, columns are joints.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivetrainMap {
    pub motor_count: usize,
    pub constant_ratios: DMatrix<f64>,
    pub linkage_terms: Vec<LinkageTerm>,
    pub motor_torque_max: DVector<f64>,
    pub motor_speed_max: DVector<f64>,
}

impl DrivetrainMap {
    /// Direct drive: identity map with the given motor limits.
    pub fn identity(torque_max: DVector<f64>, speed_max: DVector<f64>) -> Self {
        let n = torque_max.len();
        Self {
            motor_count: n,
            constant_ratios: DMatrix::identity(n, n),
            linkage_terms: Vec::new(),
            motor_torque_max: torque_max,
            motor_speed_max: speed_max,
        }
    }

    pub fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.constant_ratios.clone();
        for t in &self.linkage_terms {
            j[(t.row, t.col)] += t.value(q[t.var]);
        }
        j
    }

    /// `J_θ(q)ᵀ τ_max` without the sign check.
    pub fn capacity_unchecked(&self, q: &DVector<f64>) -> DVector<f64> {
        self.jacobian(q).transpose() * &self.motor_torque_max
    }

    /// `∂capacity_j / ∂q_v` as an `n × n` matrix `[j, v]`.
    pub fn capacity_gradient(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let n = self.constant_ratios.ncols();
        let mut g = DMatrix::zeros(n, n);
        for t in &self.linkage_terms {
            g[(t.col, t.var)] += t.derivative(q[t.var]) * self.motor_torque_max[t.row];
        }
        g
    }

    pub(crate) fn validate(&self, model: &RobotModel) -> Result<(), ModelError> {
        let n = model.n_joints();
        let bad = |s: String| ModelError::InvalidDrivetrain(s);
        if self.constant_ratios.nrows() != self.motor_count || self.constant_ratios.ncols() != n {
            return Err(bad(format!(
                "ratio matrix must be {}x{}, got {}x{}",
                self.motor_count,
                n,
                self.constant_ratios.nrows(),
                self.constant_ratios.ncols()
            )));
        }
        if self.motor_torque_max.len() != self.motor_count || self.motor_speed_max.len() != self.motor_count {
            return Err(bad("motor limit vectors must have one entry per motor".into()));
        }
        for t in &self.linkage_terms {
            if t.row >= self.motor_count || t.col >= n || t.var >= n {
                return Err(bad(format!("linkage term ({}, {}, var {}) out of range", t.row, t.col, t.var)));
            }
            if t.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(bad("non-finite linkage coefficient".into()));
            }
        }
        if self.motor_torque_max.iter().any(|&t| !(t > 0.0)) {
            return Err(bad("motor torque limits must be positive".into()));
        }
        // Sample the joint-limit box: corners plus a deterministic lattice.
        let lo = model.q_min();
        let hi = model.q_max();
        let check = |q: &DVector<f64>| -> Result<(), ModelError> {
            let jac = self.jacobian(q);
            if jac.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("non-finite motor Jacobian at q = {:?}", q.as_slice())));
            }
            capacity_from_unchecked(self.capacity_unchecked(q)).map(|_| ())
        };
        for mask in 0..(1usize << n) {
            let q = DVector::from_fn(n, |i, _| if mask >> i & 1 == 1 { hi[i] } else { lo[i] });
            check(&q)?;
        }
        const SAMPLES: usize = 257;
        for s in 1..SAMPLES {
            // van der Corput style low-discrepancy lattice
            let q = DVector::from_fn(n, |i, _| {
                let frac = ((s as f64) * (0.5 + 0.618_033_988_749_895 * (i + 1) as f64)).fract();
                lo[i] + frac * (hi[i] - lo[i])
            });
            check(&q)?;
        }
        Ok(())
    }
}

fn capacity_from_unchecked(cap: DVector<f64>) -> Result<DVector<f64>, ModelError> {
    if let Some((joint, &value)) = cap.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(ModelError::NegativeCapacity { joint, value });
    }
    Ok(cap)
}

impl RobotModel {
    pub fn coactuation_jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>, ModelError> {
        self.check_dims(q)?;
        Ok(self.drivetrain.jacobian(q))
    }

    /// Symmetric per-joint torque bound `J_θ(q)ᵀ τ_motor_max`.
    pub fn joint_torque_capacity(&self, q: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        self.check_dims(q)?;
        capacity_from_unchecked(self.drivetrain.capacity_unchecked(q))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_evaluation() {
        let t = LinkageTerm {
            row: 0,
            col: 0,
            var: 0,
            coeffs: vec![1.0, -2.0, 0.5],
        };
        let x = 1.3;
        assert!((t.value(x) - (1.0 - 2.0 * x + 0.5 * x * x)).abs() < 1e-15);
        assert!((t.derivative(x) - (-2.0 + x)).abs() < 1e-15);
    }
}

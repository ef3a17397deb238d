//! Small SO(3) helpers shared by the kinematics, SRBD and simulator code.

use nalgebra::{Matrix3, Vector3};

/// Skew-symmetric (hat) matrix so that `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`]. Reads the lower-triangle entries only.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rotation by `angle` about the unit vector `axis` (Rodrigues).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = skew(axis);
    let (s, c) = angle.sin_cos();
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

/// Exponential map from an axis-angle vector to a rotation matrix.
///
/// A zero vector maps to the identity exactly.
pub fn exp_map(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    if theta == 0.0 {
        return Matrix3::identity();
    }
    let k = skew(&(phi / theta));
    let (s, c) = theta.sin_cos();
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

/// Partial derivatives of [`exp_map`] with respect to each component of `phi`.
pub fn exp_map_derivatives(phi: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let theta2 = phi.norm_squared();
    let basis = [Vector3::x(), Vector3::y(), Vector3::z()];
    if theta2 < 1e-14 {
        // second-order series: d/dphi_j (I + [phi] + [phi]^2 / 2)
        let p = skew(phi);
        return basis.map(|e| {
            let ej = skew(&e);
            ej + (ej * p + p * ej) * 0.5
        });
    }
    let r = exp_map(phi);
    let p = skew(phi);
    let i_minus_r = Matrix3::identity() - r;
    basis.map(|e| {
        let j = phi.dot(&e);
        let w = phi.cross(&(i_minus_r * e));
        (p * j + skew(&w)) * r / theta2
    })
}

/// Nearest rotation matrix (polar factor) of `m`.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Frobenius norm of `RᵀR − I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

/// Rotation about the world y axis (sagittal-plane pitch).
pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn skew_vee_round_trip() {
        let v = Vector3::new(0.3, -1.2, 2.5);
        assert_eq!(vee(&skew(&v)), v);
        let b = Vector3::new(-0.7, 0.1, 0.4);
        assert_relative_eq!(skew(&v) * b, v.cross(&b), epsilon = 1e-15);
    }

    #[test]
    fn exp_map_derivative_matches_finite_difference() {
        for phi in [
            Vector3::new(0.3, -0.2, 0.9),
            Vector3::new(1e-9, 0.0, -2e-9),
            Vector3::new(0.0, 0.01, 0.0),
        ] {
            let d = exp_map_derivatives(&phi);
            let h = 1e-6;
            for j in 0..3 {
                let mut e = Vector3::zeros();
                e[j] = h;
                let fd = (exp_map(&(phi + e)) - exp_map(&(phi - e))) / (2.0 * h);
                assert_relative_eq!(d[j], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn orthonormalize_recovers_rotation() {
        let r = exp_map(&Vector3::new(0.4, 0.1, -0.3));
        let noisy = r + Matrix3::from_element(1e-4);
        let fixed = orthonormalize(&noisy);
        assert!(orthonormality_error(&fixed) < 1e-12);
        assert!((fixed - r).norm() < 1e-3);
    }

    #[test]
    fn rot_y_agrees_with_axis_angle() {
        assert_relative_eq!(rot_y(0.7), axis_angle(&Vector3::y(), 0.7), epsilon = 1e-15);
    }
}

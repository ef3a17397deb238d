use approx::assert_abs_diff_eq;
use jumpleg::srbd::{angular_momentum, exp_map, rotation_error, srbd_step, ContactForceSet, SrbdState, G};
use jumpleg::math::orthonormality_error;
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use proptest::prelude::*;

fn asym_inertia() -> Matrix3<f64> {
    Matrix3::new(0.31, 0.02, -0.01, 0.02, 0.24, 0.03, -0.01, 0.03, 0.09)
}

#[test]
fn ballistic_apex() {
    // Semi-implicit Euler undershoots the apex by about v0·dt/2.
    let v0 = 1.5;
    let dt = 1e-3;
    let mut s = SrbdState::at_rest(Vector3::zeros());
    s.v.z = v0;
    let none = ContactForceSet::zeros(0);
    let mut apex: f64 = 0.0;
    while s.v.z > 0.0 {
        s = srbd_step(&s, &none, &[], 17.0, &asym_inertia(), dt).unwrap();
        apex = apex.max(s.p.z);
    }
    assert_abs_diff_eq!(apex, v0 * v0 / (2.0 * G), epsilon = 1e-3);
}

#[test]
fn hover_keeps_velocities() {
    let mass = 17.0;
    let mut s = SrbdState::at_rest(Vector3::new(0.1, 0.0, 0.8));
    s.v = Vector3::new(0.2, 0.0, -0.1);
    let f = ContactForceSet {
        forces: vec![Vector3::new(0.0, 0.0, mass * G)],
    };
    for _ in 0..100 {
        let pos = [s.p];
        let next = srbd_step(&s, &f, &pos, mass, &asym_inertia(), 0.01).unwrap();
        assert_abs_diff_eq!(next.v, s.v, epsilon = 1e-14);
        assert_eq!(next.omega, Vector3::zeros());
        s = next;
    }
}

/// Euler's rigid-body equations integrated with fine-step RK4 as a reference.
fn reference_spin(inertia: &Matrix3<f64>, omega0: Vector3<f64>, duration: f64, steps: usize) -> Vector3<f64> {
    let inv = inertia.try_inverse().unwrap();
    let f = |w: &Vector3<f64>| -(inv * w.cross(&(inertia * w)));
    let h = duration / steps as f64;
    let mut w = omega0;
    for _ in 0..steps {
        let k1 = f(&w);
        let k2 = f(&(w + k1 * (h / 2.0)));
        let k3 = f(&(w + k2 * (h / 2.0)));
        let k4 = f(&(w + k3 * h));
        w += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    w
}

#[test]
fn torque_free_spin_conserves_momentum_magnitude() {
    let inertia = asym_inertia();
    let mut s = SrbdState::at_rest(Vector3::zeros());
    s.omega = Vector3::new(1.5, -0.7, 2.2);
    let l0 = angular_momentum(&s, &inertia).norm();
    let none = ContactForceSet::zeros(0);
    let dt = 1e-3;
    for _ in 0..1000 {
        s = srbd_step(&s, &none, &[], 17.0, &inertia, dt).unwrap();
    }
    let l1 = angular_momentum(&s, &inertia).norm();
    assert!((l1 - l0).abs() < 1e-6, "drift {}", (l1 - l0).abs());
    // Body rates follow the reference to first order in dt.
    let w_ref = reference_spin(&inertia, Vector3::new(1.5, -0.7, 2.2), 1.0, 100_000);
    assert!((s.omega - w_ref).norm() < 0.05 * w_ref.norm(), "{} vs {}", s.omega, w_ref);
    assert!(orthonormality_error(&s.rot) < 1e-8);
}

#[test]
fn constant_force_velocity_is_exact_on_dyadic_grid() {
    // dt, mass and forces chosen so every product is exact in binary.
    let dt = 1.0 / 128.0;
    let mass = 16.0;
    let f = ContactForceSet {
        forces: vec![Vector3::new(8.0, 0.0, 256.0), Vector3::new(-4.0, 0.0, 64.0)],
    };
    let mut s = SrbdState::at_rest(Vector3::new(0.0, 0.0, 1.0));
    let accel = f.total() / mass + Vector3::new(0.0, 0.0, -9.81);
    let v0 = s.v;
    for k in 1..=50 {
        let pos = [s.p, s.p];
        s = srbd_step(&s, &f, &pos, mass, &asym_inertia(), dt).unwrap();
        let expected = v0 + accel * (k as f64 * dt);
        assert_abs_diff_eq!(s.v, expected, epsilon = 1e-12);
        assert_eq!(s.v.x, v0.x + accel.x * (k as f64 * dt));
    }
}

#[test]
fn quarter_turn_and_identity() {
    assert_eq!(exp_map(&Vector3::zeros()), Matrix3::identity());
    let r = exp_map(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
    let want = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    assert_abs_diff_eq!(r, want, epsilon = 1e-15);
}

#[test]
fn step_is_bitwise_deterministic() {
    let mut s = SrbdState::at_rest(Vector3::new(0.0, 0.0, 0.7));
    s.omega = Vector3::new(0.3, 1.1, -0.4);
    let f = ContactForceSet {
        forces: vec![Vector3::new(3.0, 1.0, 90.0), Vector3::new(-2.0, 0.5, 80.0)],
    };
    let pos = [Vector3::new(0.1, 0.02, 0.0), Vector3::new(-0.05, -0.02, 0.0)];
    let a = srbd_step(&s, &f, &pos, 17.0, &asym_inertia(), 0.01).unwrap();
    let b = srbd_step(&s, &f, &pos, 17.0, &asym_inertia(), 0.01).unwrap();
    assert_eq!(a.p.as_slice(), b.p.as_slice());
    assert_eq!(a.rot.as_slice(), b.rot.as_slice());
    assert_eq!(a.omega.as_slice(), b.omega.as_slice());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn exp_map_inverse(a in prop::array::uniform3(-3.0f64..3.0)) {
        let a = Vector3::from(a);
        let prod = exp_map(&a) * exp_map(&-a);
        prop_assert!((prod - Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn error_magnitude_is_sine_of_geodesic(
        a in prop::array::uniform3(-2.0f64..2.0),
        b in prop::array::uniform3(-2.0f64..2.0),
    ) {
        let ra = exp_map(&Vector3::from(a));
        let rb = exp_map(&Vector3::from(b));
        let qa = UnitQuaternion::from_matrix(&ra);
        let qb = UnitQuaternion::from_matrix(&rb);
        let theta = qa.angle_to(&qb);
        prop_assume!(theta < std::f64::consts::FRAC_PI_2);
        let e = rotation_error(&ra, &rb).unwrap();
        prop_assert!((e.norm() - theta.sin()).abs() < 1e-10);
    }

    #[test]
    fn error_is_antisymmetric(
        a in prop::array::uniform3(-1.0f64..1.0),
        d in prop::array::uniform3(-0.28f64..0.28),
    ) {
        let ra = exp_map(&Vector3::from(a));
        let rb = ra * exp_map(&Vector3::from(d));
        let forward = rotation_error(&ra, &rb).unwrap();
        let backward = rotation_error(&rb, &ra).unwrap();
        let r_err = ra.transpose() * rb;
        prop_assert!((forward + backward).amax() < 1e-15);
        prop_assert!((forward + r_err * backward).amax() < 1e-12);
    }

    #[test]
    fn rotation_stays_orthonormal(
        w in prop::array::uniform3(-8.0f64..8.0),
        f in prop::array::uniform3(-200.0f64..200.0),
        r in prop::array::uniform3(-0.3f64..0.3),
    ) {
        let mut s = SrbdState::at_rest(Vector3::zeros());
        s.omega = Vector3::from(w);
        let forces = ContactForceSet { forces: vec![Vector3::from(f)] };
        for _ in 0..500 {
            let pos = [s.p + Vector3::from(r)];
            s = srbd_step(&s, &forces, &pos, 17.0, &asym_inertia(), 0.01).unwrap();
            prop_assert!(orthonormality_error(&s.rot) < 1e-8);
        }
    }
}

use approx::assert_abs_diff_eq;
use jumpleg::math::{exp_map, rot_y};
use jumpleg::robot::{default_model, DrivetrainMap, ModelError, RobotModel};
use nalgebra::{DVector, Matrix3, Matrix4, Rotation3, Unit, Vector3, Vector4};
use proptest::prelude::*;

/// Homogeneous-transform chain, written without the library's kinematics.
fn oracle_contacts(model: &RobotModel, base_pos: &Vector3<f64>, base_rot: &Matrix3<f64>, q: &DVector<f64>) -> Vec<Vector3<f64>> {
    let mut frames = Vec::new();
    let mut t = Matrix4::identity();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(base_rot);
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(base_pos);
    frames.push(t);
    for (j, joint) in model.joints.iter().enumerate() {
        let link = &model.links[j];
        let mut offset = Matrix4::identity();
        offset.fixed_view_mut::<3, 1>(0, 3).copy_from(&(link.direction * link.length));
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(joint.axis), q[j]);
        let mut spin = Matrix4::identity();
        spin.fixed_view_mut::<3, 3>(0, 0).copy_from(rot.matrix());
        t = t * offset * spin;
        frames.push(t);
    }
    model
        .contacts
        .iter()
        .map(|c| {
            let h = frames[c.link_index] * Vector4::new(c.offset.x, c.offset.y, c.offset.z, 1.0);
            h.xyz()
        })
        .collect()
}

fn oracle_com(model: &RobotModel, base_pos: &Vector3<f64>, base_rot: &Matrix3<f64>, q: &DVector<f64>) -> Vector3<f64> {
    let mut t = Matrix4::identity();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(base_rot);
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(base_pos);
    let mut weighted = base_pos * model.base_mass_extra;
    for (i, link) in model.links.iter().enumerate() {
        let c = link.direction * link.com_offset;
        weighted += (t * Vector4::new(c.x, c.y, c.z, 1.0)).xyz() * link.mass;
        if i < model.joints.len() {
            let mut offset = Matrix4::identity();
            offset.fixed_view_mut::<3, 1>(0, 3).copy_from(&(link.direction * link.length));
            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(model.joints[i].axis), q[i]);
            let mut spin = Matrix4::identity();
            spin.fixed_view_mut::<3, 3>(0, 0).copy_from(rot.matrix());
            t = t * offset * spin;
        }
    }
    weighted / model.total_mass()
}

fn q_from(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn in_limits(model: &RobotModel, u: &[f64]) -> DVector<f64> {
    let lo = model.q_min();
    let hi = model.q_max();
    DVector::from_fn(model.n_joints(), |i, _| lo[i] + u[i] * (hi[i] - lo[i]))
}

#[test]
fn zero_pose_sums_link_offsets() {
    let model = default_model();
    let q = DVector::zeros(4);
    let r = model
        .forward_kinematics(&Vector3::zeros(), &Matrix3::identity(), &q)
        .unwrap();
    let mut toe_origin = Vector3::zeros();
    for l in &model.links[..4] {
        toe_origin += l.direction * l.length;
    }
    for c in &model.contacts {
        let expected = if c.link_index == 4 {
            toe_origin + c.offset
        } else {
            toe_origin - model.links[3].direction * model.links[3].length + c.offset
        };
        assert_abs_diff_eq!(r[c.id], expected, epsilon = 1e-14);
    }
}

#[test]
fn straight_leg_toe_height() {
    // Collinear chain: every link points straight down at q = 0.
    let mut model = default_model();
    for l in &mut model.links {
        l.direction = Vector3::new(0.0, 0.0, -1.0);
    }
    for c in &mut model.contacts {
        c.offset = Vector3::zeros();
    }
    let total: f64 = model.links[..4].iter().map(|l| l.length).sum();
    let base = Vector3::new(0.0, 0.0, 1.3);
    let r = model
        .forward_kinematics(&base, &Matrix3::identity(), &DVector::zeros(4))
        .unwrap();
    let toe = model.contacts_in_group(jumpleg::robot::ContactGroup::Toe)[0];
    assert_abs_diff_eq!(r[toe].z, 1.3 - total, epsilon = 1e-14);
}

#[test]
fn dimension_mismatch_is_an_error() {
    let model = default_model();
    let err = model
        .forward_kinematics(&Vector3::zeros(), &Matrix3::identity(), &DVector::zeros(3))
        .unwrap_err();
    assert_eq!(err, ModelError::DimensionMismatch { expected: 4, got: 3 });
    assert!(model.contact_jacobians(&Vector3::zeros(), &Matrix3::identity(), &DVector::zeros(5)).is_err());
}

#[test]
fn contact_on_base_link_has_no_joint_columns() {
    let mut model = default_model();
    model.contacts[4].link_index = 0;
    model.contacts[4].parent_link = "torso".into();
    let q = q_from(&[0.2, -0.7, 0.3, 0.1]);
    let jac = model
        .contact_jacobians(&Vector3::zeros(), &rot_y(0.3), &q)
        .unwrap();
    assert!(jac[4].columns(6, 4).iter().all(|&v| v == 0.0));
}

#[test]
fn planar_rows_are_zero_in_planar_columns() {
    let model = default_model();
    let q = q_from(&[-0.4, -1.1, 0.2, -0.3]);
    let base = Vector3::new(0.3, 0.0, 0.8);
    let rot = rot_y(0.2);
    for jac in model.contact_jacobians(&base, &rot, &q).unwrap() {
        // x, z linear; pitch angular; all joints
        for col in [0, 2, 4, 6, 7, 8, 9] {
            assert_eq!(jac[(1, col)], 0.0);
        }
    }
}

#[test]
fn crouch_capacity_exceeds_standalone_knee_limit() {
    let model = default_model();
    let crouch = model.pose("crouch").unwrap().clone();
    let cap = model.joint_torque_capacity(&crouch).unwrap();
    let knee = model.joint_index("knee").unwrap();
    assert!(cap[knee] >= 100.0, "knee capacity {}", cap[knee]);
    assert!(cap[knee] >= 1.25 * 80.0);
}

#[test]
fn belt_only_knee_capacity_is_80() {
    let mut model = default_model();
    model.drivetrain.linkage_terms.clear();
    let cap = model.joint_torque_capacity(model.pose("crouch").unwrap()).unwrap();
    let knee = model.joint_index("knee").unwrap();
    assert_abs_diff_eq!(cap[knee], 80.0, epsilon = 1e-12);
    // Constant ratios only: independent of q.
    let a = model.coactuation_jacobian(&DVector::zeros(4)).unwrap();
    let b = model.coactuation_jacobian(&q_from(&[0.3, -2.0, 0.5, 0.2])).unwrap();
    assert_eq!(a, b);
    assert_abs_diff_eq!(a[(1, 1)], 40.0 / 9.0, epsilon = 1e-15);
}

#[test]
fn identity_drivetrain_capacity_equals_motor_peaks() {
    let mut model = default_model();
    model.drivetrain = DrivetrainMap::identity(DVector::from_element(4, 10.0), DVector::from_element(4, 50.0));
    model.validate().unwrap();
    for q in [DVector::zeros(4), q_from(&[0.3, -2.0, 0.5, 0.2])] {
        assert_eq!(model.coactuation_jacobian(&q).unwrap(), nalgebra::DMatrix::identity(4, 4));
        assert_eq!(model.joint_torque_capacity(&q).unwrap(), DVector::from_element(4, 10.0));
    }
}

#[test]
fn linkage_polynomials_by_hand() {
    let model = default_model();
    for knee in [-0.3, -1.7] {
        let q = q_from(&[0.0, knee, 0.0, 0.0]);
        let j = model.coactuation_jacobian(&q).unwrap();
        assert_abs_diff_eq!(j[(2, 1)], 0.3 - 0.9 * knee, epsilon = 1e-15);
        assert_abs_diff_eq!(j[(3, 1)], 0.2 - 0.9 * knee, epsilon = 1e-15);
    }
    let a = model.coactuation_jacobian(&q_from(&[0.0, -0.3, 0.0, 0.0])).unwrap();
    let b = model.coactuation_jacobian(&q_from(&[0.0, -1.7, 0.0, 0.0])).unwrap();
    assert!(a[(2, 1)] != b[(2, 1)]);
}

#[test]
fn capacity_gradient_matches_finite_difference() {
    let model = default_model();
    let q = q_from(&[-0.5, -1.2, 0.3, 0.1]);
    let g = model.drivetrain.capacity_gradient(&q);
    let h = 1e-6;
    for v in 0..4 {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[v] += h;
        qm[v] -= h;
        let fd = (model.joint_torque_capacity(&qp).unwrap() - model.joint_torque_capacity(&qm).unwrap()) / (2.0 * h);
        for j in 0..4 {
            assert_abs_diff_eq!(g[(j, v)], fd[j], epsilon = 1e-6);
        }
    }
}

#[test]
fn negative_linkage_capacity_rejected() {
    let mut model = default_model();
    model.drivetrain.linkage_terms[0].coeffs = vec![-10.0];
    match model.validate() {
        Err(ModelError::NegativeCapacity { joint, .. }) => assert_eq!(joint, 1),
        other => panic!("expected negative capacity error, got {other:?}"),
    }
}

#[test]
fn single_link_com() {
    let mut model = default_model();
    model.links.truncate(1);
    model.joints.clear();
    model.contacts.clear();
    model.poses.clear();
    model.drivetrain = DrivetrainMap::identity(DVector::zeros(0), DVector::zeros(0));
    model.links[0].com_offset = 0.02;
    let c = model
        .com_position(&Vector3::zeros(), &Matrix3::identity(), &DVector::zeros(0))
        .unwrap();
    assert_abs_diff_eq!(c, Vector3::new(0.0, 0.0, -0.02), epsilon = 1e-15);
}

#[test]
fn symmetric_two_link_com_on_axis() {
    let mut model = default_model();
    model.links.truncate(2);
    model.joints.truncate(1);
    model.contacts.clear();
    model.poses.clear();
    model.drivetrain = DrivetrainMap::identity(DVector::from_element(1, 1.0), DVector::from_element(1, 1.0));
    for l in &mut model.links {
        l.mass = 1.0;
        l.length = 0.4;
        l.com_offset = 0.2;
        l.direction = Vector3::new(1.0, 0.0, 0.0);
    }
    // V shape symmetric about the vertical line through the joint.
    let half = 0.5_f64;
    let base_rot = rot_y(std::f64::consts::FRAC_PI_2 - half);
    let bend = -(std::f64::consts::PI - 2.0 * half);
    let c = model
        .com_position(&Vector3::zeros(), &base_rot, &q_from(&[bend]))
        .unwrap();
    let joint = base_rot * Vector3::new(0.4, 0.0, 0.0);
    assert_abs_diff_eq!(c.x, joint.x, epsilon = 1e-12);
    assert_abs_diff_eq!(c.x, 0.4 * half.sin(), epsilon = 1e-12);
}

#[test]
fn payload_counts_toward_mass() {
    let model = default_model();
    assert_abs_diff_eq!(model.total_mass(), 16.0, epsilon = 1e-12);
    assert_abs_diff_eq!(model.with_payload(1.0).total_mass(), 17.0, epsilon = 1e-12);
}

#[test]
fn composite_inertia_is_symmetric_positive_definite() {
    let model = default_model().with_payload(1.0);
    let i = model.composite_inertia(model.pose("crouch").unwrap()).unwrap();
    assert_abs_diff_eq!(i, i.transpose(), epsilon = 1e-15);
    assert!(i.cholesky().is_some());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fk_matches_transform_oracle(
        u in prop::collection::vec(-0.1f64..1.1, 4),
        base in prop::array::uniform3(-1.0f64..1.0),
        rv in prop::array::uniform3(-1.5f64..1.5),
    ) {
        let model = default_model().with_payload(1.0);
        let q = in_limits(&model, &u);
        let p = Vector3::from(base);
        let r = exp_map(&Vector3::from(rv));
        let got = model.forward_kinematics(&p, &r, &q).unwrap();
        let want = oracle_contacts(&model, &p, &r, &q);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).amax() < 1e-10);
        }
        let com = model.com_position(&p, &r, &q).unwrap();
        prop_assert!((com - oracle_com(&model, &p, &r, &q)).amax() < 1e-10);
    }

    #[test]
    fn jacobian_matches_finite_difference(
        u in prop::collection::vec(0.0f64..1.0, 4),
        base in prop::array::uniform3(-1.0f64..1.0),
        rv in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let model = default_model();
        let q = in_limits(&model, &u);
        let p = Vector3::from(base);
        let r = exp_map(&Vector3::from(rv));
        let jac = model.contact_jacobians(&p, &r, &q).unwrap();
        let h = 1e-6;
        // generalized velocity e_k: base linear, body angular, then joints
        for k in 0..10 {
            let displaced = |s: f64| {
                let mut pp = p;
                let mut rr = r;
                let mut qq = q.clone();
                if k < 3 {
                    pp[k] += s;
                } else if k < 6 {
                    let mut w = Vector3::zeros();
                    w[k - 3] = s;
                    rr = r * exp_map(&w);
                } else {
                    qq[k - 6] += s;
                }
                model.forward_kinematics(&pp, &rr, &qq).unwrap()
            };
            let plus = displaced(h);
            let minus = displaced(-h);
            let fwd = displaced(0.0);
            for i in 0..model.n_contacts() {
                let central = (plus[i] - minus[i]) / (2.0 * h);
                let forward = (plus[i] - fwd[i]) / h;
                let col = jac[i].column(k).into_owned();
                prop_assert!((central - &col).amax() < 1e-6);
                prop_assert!((forward - &col).amax() < 1e-5);
            }
        }
    }

    #[test]
    fn planar_fk_stays_in_plane(
        u in prop::collection::vec(-0.1f64..1.1, 4),
        x in -1.0f64..1.0,
        z in 0.0f64..2.0,
        pitch in -1.0f64..1.0,
    ) {
        let model = default_model();
        let q = in_limits(&model, &u);
        for r in model.forward_kinematics(&Vector3::new(x, 0.0, z), &rot_y(pitch), &q).unwrap() {
            prop_assert_eq!(r.y, 0.0);
        }
    }

    #[test]
    fn capacity_nonnegative_inside_limits(u in prop::collection::vec(0.0f64..1.0, 4)) {
        let model = default_model();
        let q = in_limits(&model, &u);
        let cap = model.joint_torque_capacity(&q).unwrap();
        prop_assert!(cap.iter().all(|&c| c >= 0.0));
    }

    #[test]
    fn point_hessian_matches_jacobian_difference(u in prop::collection::vec(0.0f64..1.0, 4)) {
        let model = default_model();
        let q = in_limits(&model, &u);
        let pose = model.chain_pose(&q).unwrap();
        let c = &model.contacts[0];
        let b = pose.point(c.link_index, &c.offset);
        let hess = model.point_hessian_base(&pose, c.link_index, &b);
        let h = 1e-6;
        for l in 0..4 {
            let jac_at = |s: f64| {
                let mut qq = q.clone();
                qq[l] += s;
                let pz = model.chain_pose(&qq).unwrap();
                let bz = pz.point(c.link_index, &c.offset);
                model.point_jacobian_base(&pz, c.link_index, &bz)
            };
            let fd = (jac_at(h) - jac_at(-h)) / (2.0 * h);
            for j in 0..4 {
                prop_assert!((hess[j * 4 + l] - fd.column(j)).amax() < 1e-7);
            }
        }
    }
}

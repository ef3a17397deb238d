use std::f64::consts::PI;

use jumpleg::robot::{default_model, parse_model, RobotModel};
use jumpleg::sim::{
    detect_phases, detect_phases_from, read_log_csv, rollout, sim_step, write_log_csv, BaseMode, ContactModel,
    PhaseKind, RolloutConfig, SimError, SimParams, SimState, Simulator, BASE_DOF,
};
use jumpleg::srbd::G;
use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;

fn robot() -> RobotModel {
    default_model().with_payload(1.0)
}

fn sim(model: &RobotModel) -> Simulator {
    Simulator::new(model, SimParams::default()).unwrap()
}

fn stand(model: &RobotModel) -> DVector<f64> {
    model.pose("stand").unwrap().clone()
}

/// Joint PD about a fixed posture.
fn hold(q_ref: DVector<f64>, kp: f64, kd: f64) -> impl FnMut(&SimState) -> DVector<f64> {
    move |s: &SimState| (&q_ref - &s.q) * kp - &s.qd * kd
}

const PENDULUM: &str = r#"
format = 1
name = "pendulum"
planar = true

[[link]]
name = "mount"
length = 0.1
direction = [0.0, 0.0, -1.0]
mass = 1.0
com_offset = 0.0
inertia = 0.01

[[link]]
name = "rod"
length = 0.6
direction = [0.0, 0.0, -1.0]
mass = 2.0
com_offset = 0.4
inertia = 0.03

[[joint]]
name = "swing"
axis = [0.0, 1.0, 0.0]
q_min = -3.0
q_max = 3.0
actuators = [0]

[[actuator]]
name = "m"
kt = 0.1
tau_peak = 10.0
omega_max = 50.0
internal_gear_ratio = 1.0
backlash_output = 0.0
winding_resistance = 0.2
v_bus_nominal = 48.0

[drivetrain]
ratios = [[1.0]]
"#;

fn pinned(model: &RobotModel) -> Simulator {
    Simulator::new(
        model,
        SimParams {
            base: BaseMode::Pinned,
            rotor_inertia: 0.0,
            ..SimParams::default()
        },
    )
    .unwrap()
}

#[test]
fn free_fall_before_contact() {
    let model = robot();
    let s = sim(&model);
    let mut state = SimState::new(Vector3::new(0.0, 2.0, 0.0), stand(&model), model.n_contacts());
    let zero = DVector::zeros(model.n_joints());
    for _ in 0..200 {
        let next = s.step(&state, &zero).unwrap();
        let zdd = (next.state.base_vel.y - state.base_vel.y) / s.params.dt;
        assert!((zdd + 9.81).abs() < 1e-9, "z'' = {zdd}");
        assert!(next.forces.iter().all(|f| f.normal == 0.0));
        state = next.state;
    }
}

#[test]
fn ballistic_apex_of_zero_controller() {
    let model = robot();
    let s = sim(&model);
    let mut state = SimState::new(Vector3::new(0.0, 1.5, 0.0), stand(&model), model.n_contacts());
    let v0 = 2.0;
    state.base_vel.y = v0;
    let z0 = state.base.y;
    let mut zero = |_: &SimState| DVector::zeros(4);
    let mut cfg = RolloutConfig::new(0.4);
    cfg.log_every = 1;
    let log = rollout(&s, &model, state, &mut zero, &cfg).unwrap();
    let rise = log.max_height() - z0;
    assert!((rise - v0 * v0 / (2.0 * G)).abs() < 1e-3, "rise {rise}");
}

#[test]
fn standing_load_equals_weight() {
    let model = robot();
    let s = sim(&model);
    let q = stand(&model);
    let state = s.standing_state(&q, 0.0, 0.0);
    let mut ctl = hold(q, 300.0, 6.0);
    let log = rollout(&s, &model, state, &mut ctl, &RolloutConfig::new(1.5)).unwrap();
    let last = log.last().unwrap();
    let weight = model.total_mass() * G;
    assert!((weight - 166.77).abs() < 1e-9);
    let total = last.total_normal();
    assert!((total - weight).abs() < 0.005 * weight, "normal sum {total} vs {weight}");
    let depth = s
        .contact_points(&SimState {
            base: last.base,
            base_vel: last.base_vel,
            q: last.q.clone(),
            qd: last.qd.clone(),
            t: last.t,
            anchors: vec![None; model.n_contacts()],
        })
        .iter()
        .map(|p| -p.y)
        .fold(0.0, f64::max);
    let bound = 1.1 * weight / s.params.contact.k_n;
    assert!(depth <= bound, "penetration {depth} > {bound}");
    let phases = detect_phases(&log);
    assert_eq!(phases.len(), 1);
    assert_eq!(phases[0].kind, PhaseKind::Stance);
}

#[test]
fn pendulum_small_angle_period() {
    let model = parse_model(PENDULUM).unwrap();
    let s = pinned(&model);
    let (m, l, ic) = (2.0, 0.4, 0.03);
    let period = 2.0 * PI * ((ic + m * l * l) / (m * G * l)).sqrt();
    let amp = 2.0_f64.to_radians();
    let mut state = SimState::new(Vector3::new(0.0, 1.0, 0.0), DVector::from_element(1, amp), 0);
    let zero = DVector::zeros(1);
    let mut crossings = Vec::new();
    let mut prev = state.q[0];
    while crossings.len() < 7 {
        state = s.step(&state, &zero).unwrap().state;
        let now = state.q[0];
        if prev > 0.0 && now <= 0.0 {
            // linear interpolation of the downward zero crossing
            crossings.push(state.t - s.params.dt * now / (now - prev));
        }
        prev = now;
        assert!(state.t < 20.0 * period);
    }
    let measured = (crossings[6] - crossings[0]) / 6.0;
    assert!(((measured - period) / period).abs() < 0.01, "{measured} vs {period}");
    assert_eq!(state.base, Vector3::new(0.0, 1.0, 0.0));
}

#[test]
fn passive_energy_drift() {
    let model = robot();
    // no hard stops, so the chain is purely conservative
    let s = Simulator::new(
        &model,
        SimParams {
            limit_stiffness: 0.0,
            limit_damping: 0.0,
            ..SimParams::default()
        },
    )
    .unwrap();
    let mid = (&s.chain.q_min + &s.chain.q_max) * 0.5;
    let mut state = SimState::new(Vector3::new(0.0, 10.0, 0.1), mid, model.n_contacts());
    state.base_vel = Vector3::new(0.3, 1.0, 0.4);
    state.qd = DVector::from_vec(vec![0.4, -0.5, 0.6, -0.8]);
    let zero = DVector::zeros(model.n_joints());
    let e0 = s.energy(&state);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        state = s.step(&state, &zero).unwrap().state;
        worst = worst.max((s.energy(&state) - e0).abs());
    }
    assert!(worst / e0.abs() < 1e-3, "relative drift {} over 1 s", worst / e0.abs());
}

#[test]
fn swinging_leg_energy_drift() {
    // pinned torso: no free-fall offset, so compare against the swing energy
    let model = robot();
    let s = Simulator::new(
        &model,
        SimParams {
            base: BaseMode::Pinned,
            limit_stiffness: 0.0,
            limit_damping: 0.0,
            ..SimParams::default()
        },
    )
    .unwrap();
    let mut state = SimState::new(Vector3::new(0.0, 10.0, 0.0), stand(&model), model.n_contacts());
    state.qd = DVector::from_vec(vec![3.0, -4.0, 5.0, -6.0]);
    let zero = DVector::zeros(model.n_joints());
    let e0 = s.energy(&state);
    let (mut worst, mut swing): (f64, f64) = (0.0, 0.0);
    for _ in 0..10_000 {
        state = s.step(&state, &zero).unwrap().state;
        worst = worst.max((s.energy(&state) - e0).abs());
        swing = swing.max(s.kinetic_energy(&state));
    }
    assert!(worst / swing < 1e-3, "drift {worst} J against {swing} J of swing");
}

#[test]
fn friction_cone_every_substep() {
    let model = robot();
    let s = sim(&model);
    let q = stand(&model);
    let mut state = s.standing_state(&q, 0.0, 0.0);
    state.base_vel.x = 1.5;
    let mut ctl = hold(q, 300.0, 6.0);
    let mut cfg = RolloutConfig::new(0.5);
    cfg.log_every = 1;
    let log = rollout(&s, &model, state, &mut ctl, &cfg).unwrap();
    let mu = s.params.contact.mu;
    let mut slid = false;
    for sample in &log.samples {
        for f in &sample.forces {
            assert!(f.normal >= 0.0);
            assert!(f.tangential.abs() <= mu * f.normal + 1e-9);
            slid |= f.normal > 1.0 && f.tangential.abs() >= mu * f.normal - 1e-9;
        }
    }
    assert!(slid, "scenario never reached the friction limit");
}

#[test]
fn rollouts_are_bit_identical() {
    let model = robot();
    let s = sim(&model);
    let q = stand(&model);
    let run = || {
        let mut state = s.standing_state(&q, 0.0, 0.0);
        state.base.y += 0.05;
        let mut ctl = hold(q.clone(), 200.0, 4.0);
        let log = rollout(&s, &model, state, &mut ctl, &RolloutConfig::new(0.5)).unwrap();
        let mut buf = Vec::new();
        write_log_csv(&log, &mut buf).unwrap();
        buf
    };
    assert_eq!(run(), run());
}

#[test]
fn log_csv_round_trip() {
    let model = robot();
    let s = sim(&model);
    let q = stand(&model);
    let state = s.standing_state(&q, 0.0, 0.0);
    let mut ctl = hold(q, 200.0, 4.0);
    let log = rollout(&s, &model, state, &mut ctl, &RolloutConfig::new(0.1)).unwrap();
    let mut buf = Vec::new();
    write_log_csv(&log, &mut buf).unwrap();
    let back = read_log_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), log.len());
    for (a, b) in log.samples.iter().zip(&back.samples) {
        assert!((a.t - b.t).abs() <= 1e-11 * a.t.abs());
        for (x, y) in a.q.iter().zip(b.q.iter()) {
            assert!((x - y).abs() <= 1e-11 * x.abs().max(1e-300));
        }
        assert_eq!(a.forces.len(), b.forces.len());
    }
    let header = String::from_utf8(buf).unwrap();
    let cols = header.lines().next().unwrap().split(',').count();
    assert_eq!(cols, 7 + 4 * 4 + 2 * 5 + 1);
}

#[test]
fn gravity_compensation_holds_pinned_posture() {
    let model = robot();
    let s = Simulator::new(
        &model,
        SimParams {
            base: BaseMode::Pinned,
            ..SimParams::default()
        },
    )
    .unwrap();
    let q0 = DVector::from_vec(vec![-0.6, -1.1, 0.3, -0.2]);
    let state = SimState::new(Vector3::new(0.0, 2.0, 0.0), q0.clone(), model.n_contacts());
    let mut comp = |st: &SimState| s.gravity_torques(st);
    let log = rollout(&s, &model, state, &mut comp, &RolloutConfig::new(5.0)).unwrap();
    for sample in &log.samples {
        let err = (&sample.q - &q0).amax();
        assert!(err < 1e-3, "drift {err} at t = {}", sample.t);
    }
}

#[test]
fn gravity_forces_match_potential_gradient() {
    let model = robot();
    let s = sim(&model);
    let pos = DVector::from_vec(vec![0.2, 1.1, 0.15, -0.5, -1.2, 0.4, -0.3]);
    let g = s.chain.gravity_forces(&pos);
    let zero = DVector::zeros(pos.len());
    let pe = |p: &DVector<f64>| s.chain.potential_energy(&s.chain.frames(p, &zero));
    for i in 0..pos.len() {
        let h = 1e-6;
        let mut up = pos.clone();
        let mut down = pos.clone();
        up[i] += h;
        down[i] -= h;
        let fd = (pe(&up) - pe(&down)) / (2.0 * h);
        assert!((fd - g[i]).abs() < 1e-6, "coord {i}: {fd} vs {}", g[i]);
    }
}

/// Lagrangian bias `Ṁu − ½ ∂(uᵀMu)/∂q + ∂V/∂q` by finite differences.
fn bias_oracle(s: &Simulator, pos: &DVector<f64>, vel: &DVector<f64>) -> DVector<f64> {
    let n = pos.len();
    let mass = |p: &DVector<f64>| s.chain.mass_and_bias(&s.chain.frames(p, &DVector::zeros(n))).0;
    let h = 1e-6;
    let m_dot = (mass(&(pos + vel * h)) - mass(&(pos - vel * h))) / (2.0 * h);
    let mut out = &m_dot * vel;
    for i in 0..n {
        let mut up = pos.clone();
        let mut down = pos.clone();
        up[i] += h;
        down[i] -= h;
        let dm: DMatrix<f64> = (mass(&up) - mass(&down)) / (2.0 * h);
        out[i] -= 0.5 * vel.dot(&(dm * vel));
    }
    out + s.chain.gravity_forces(pos)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mass_matrix_is_symmetric_positive_definite(
        q in prop::collection::vec(-1.5..1.5f64, 4),
        pitch in -1.0..1.0f64,
    ) {
        let model = robot();
        let s = sim(&model);
        let mut pos = DVector::zeros(BASE_DOF + 4);
        pos[2] = pitch;
        pos.rows_mut(BASE_DOF, 4).copy_from_slice(&q);
        let (m, _) = s.mass_and_bias(&s.chain.frames(&pos, &DVector::zeros(7)));
        prop_assert!((&m - m.transpose()).amax() < 1e-12);
        prop_assert!(m.clone().cholesky().is_some());
        prop_assert!((m[(0, 0)] - model.total_mass()).abs() < 1e-12);
    }

    #[test]
    fn bias_forces_match_lagrangian(
        q in prop::collection::vec(-1.5..1.5f64, 4),
        u in prop::collection::vec(-2.0..2.0f64, 7),
        pitch in -1.0..1.0f64,
    ) {
        let model = robot();
        let s = sim(&model);
        let mut pos = DVector::zeros(7);
        pos[0] = 0.3;
        pos[1] = 0.9;
        pos[2] = pitch;
        pos.rows_mut(BASE_DOF, 4).copy_from_slice(&q);
        let vel = DVector::from_vec(u);
        let h = s.chain.mass_and_bias(&s.chain.frames(&pos, &vel)).1;
        let want = bias_oracle(&s, &pos, &vel);
        for i in 0..7 {
            prop_assert!((h[i] - want[i]).abs() < 1e-5 * (1.0 + want[i].abs()), "{} vs {}", h[i], want[i]);
        }
    }
}

#[test]
fn chattering_force_is_debounced() {
    // flips every 2 ms around the threshold for 100 ms
    let series: Vec<(f64, f64)> = (0..=1000)
        .map(|k| {
            let t = k as f64 * 1e-4;
            (t, if (k / 20) % 2 == 0 { 0.5 } else { 1.5 })
        })
        .collect();
    let phases = detect_phases_from(&series);
    for w in phases.windows(2) {
        assert!(w[1].t_start - w[0].t_start >= 0.005 - 1e-12);
    }
}

#[test]
fn jump_like_force_profile_has_three_phases() {
    let series: Vec<(f64, f64)> = (0..=600)
        .map(|k| {
            let t = k as f64 * 1e-3;
            (t, if (0.2..0.45).contains(&t) { 0.0 } else { 170.0 })
        })
        .collect();
    let kinds: Vec<PhaseKind> = detect_phases_from(&series).iter().map(|p| p.kind).collect();
    assert_eq!(kinds, vec![PhaseKind::Stance, PhaseKind::Flight, PhaseKind::Stance]);
}

#[test]
fn step_rejects_large_dt() {
    let model = robot();
    let state = SimState::new(Vector3::new(0.0, 1.0, 0.0), stand(&model), model.n_contacts());
    let err = sim_step(&state, &DVector::zeros(4), &model, &ContactModel::default(), 5e-4).unwrap_err();
    assert!(matches!(err, SimError::TimeStep(_)));
    assert!(sim_step(&state, &DVector::zeros(4), &model, &ContactModel::default(), 1e-4).is_ok());
}

#[test]
fn non_finite_command_aborts_with_index() {
    let model = robot();
    let s = sim(&model);
    let state = SimState::new(Vector3::new(0.0, 1.0, 0.0), stand(&model), model.n_contacts());
    let mut calls = 0;
    let mut bad = |_: &SimState| {
        calls += 1;
        let mut t = DVector::zeros(4);
        if calls == 3 {
            t[2] = f64::NAN;
        }
        t
    };
    let err = rollout(&s, &model, state, &mut bad, &RolloutConfig::new(0.1)).unwrap_err();
    match err {
        SimError::NonFiniteTorque { step, joint, .. } => {
            assert_eq!(step, 40);
            assert_eq!(joint, 2);
        }
        other => panic!("unexpected {other:?}"),
    }
}

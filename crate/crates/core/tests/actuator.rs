use jumpleg::actuator::{
    apply_backlash, available_torque, fit_torque_constant, ActuatorParams, BusModel, DynoSample,
    DEFAULT_BATTERY_RESISTANCE, NOMINAL_BUS_VOLTAGE,
};
use jumpleg::robot::default_model;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal, Uniform};

fn noisy_line(kt: f64, sigma: f64, n: usize, seed: u64) -> Vec<DynoSample> {
    let mut rng = StdRng::seed_from_u64(seed);
    let current = Uniform::new(0.5, 20.0).unwrap();
    let noise = Normal::new(0.0, sigma).unwrap();
    (0..n)
        .map(|_| {
            let i = current.sample(&mut rng);
            DynoSample {
                current: i,
                torque: kt * i + noise.sample(&mut rng),
            }
        })
        .collect()
}

/// Slope through the origin from the normal equation on a 1x1 system,
/// summed in a different order from the library.
fn slope_oracle(s: &[DynoSample]) -> f64 {
    let (num, den) = s
        .iter()
        .rev()
        .fold((0.0, 0.0), |(n, d), x| (n + x.torque * x.current, d + x.current * x.current));
    num / den
}

#[test]
fn noisy_fit_recovers_torque_constant() {
    for seed in 0..5 {
        let s = noisy_line(0.095, 0.02, 50, seed);
        let fit = fit_torque_constant(&s).unwrap();
        assert!((fit.kt - 0.095).abs() / 0.095 < 0.02, "seed {seed}: {}", fit.kt);
        assert!((fit.kt - slope_oracle(&s)).abs() < 1e-12);
        assert!(fit.r_squared > 0.9 && fit.r_squared <= 1.0);
        assert_eq!(fit.samples, 50);
    }
}

#[test]
fn default_actuators_deliver_peak_at_stall() {
    for a in &default_model().actuators {
        assert_eq!(available_torque(a, 0.0, NOMINAL_BUS_VOLTAGE), a.tau_peak, "{}", a.name);
        assert!(a.stall_electrical_limit(NOMINAL_BUS_VOLTAGE) > a.tau_peak);
    }
}

#[test]
fn sagging_bus_tracks_total_current() {
    let bus = BusModel::with_sag(DEFAULT_BATTERY_RESISTANCE);
    assert_eq!(bus.voltage(0.0), 48.0);
    assert!((bus.voltage(25.0) - (48.0 - 25.0 * DEFAULT_BATTERY_RESISTANCE)).abs() < 1e-12);
    assert_eq!(bus.voltage(-25.0), bus.voltage(25.0));
    assert_eq!(BusModel::with_sag(1.0).voltage(1e3), 0.0);
}

fn actuator() -> impl Strategy<Value = ActuatorParams> {
    (0.02f64..0.3, 1.0f64..60.0, 1.0f64..12.0, 0.05f64..1.0).prop_map(|(kt, peak, gear, r)| ActuatorParams {
        name: "a".into(),
        kt,
        tau_peak: peak,
        omega_max: 50.0,
        internal_gear_ratio: gear,
        backlash_output: 0.1,
        winding_resistance: r,
        v_bus_nominal: 48.0,
    })
}

proptest! {
    #[test]
    fn fit_is_scale_equivariant(
        seed in 0u64..1000,
        scale in prop_oneof![Just(0.5f64), Just(2.0), Just(4.0), Just(0.25)],
    ) {
        let s = noisy_line(0.1, 0.01, 20, seed);
        let scaled: Vec<_> = s.iter().map(|x| DynoSample { current: x.current, torque: x.torque * scale }).collect();
        let a = fit_torque_constant(&s).unwrap().kt;
        let b = fit_torque_constant(&scaled).unwrap().kt;
        prop_assert_eq!(b, a * scale);
    }

    #[test]
    fn envelope_is_monotone(
        a in actuator(),
        w1 in 0.0f64..400.0,
        w2 in 0.0f64..400.0,
        v1 in 1.0f64..60.0,
        v2 in 1.0f64..60.0,
    ) {
        let (lo_w, hi_w) = (w1.min(w2), w1.max(w2));
        let (lo_v, hi_v) = (v1.min(v2), v1.max(v2));
        prop_assert!(available_torque(&a, hi_w, 48.0) <= available_torque(&a, lo_w, 48.0));
        prop_assert!(available_torque(&a, -hi_w, 48.0) == available_torque(&a, hi_w, 48.0));
        prop_assert!(available_torque(&a, w1, lo_v) <= available_torque(&a, w1, hi_v));
        let t = available_torque(&a, w1, v1);
        prop_assert!(t >= 0.0 && t <= a.tau_peak);
    }

    #[test]
    fn backlash_output_stays_within_half_width(
        width in 0.0f64..0.2,
        inputs in prop::collection::vec(-1.0f64..1.0, 1..200),
    ) {
        let mut state = None;
        for &x in &inputs {
            let y = apply_backlash(x, &mut state, width);
            prop_assert!((y - x).abs() <= 0.5 * width + 1e-15);
        }
    }
}

#[test]
fn backlash_loop_area_is_width_times_travel() {
    // a triangle wave of amplitude `amp` traces a parallelogram in the
    // (input, output) plane: base `width`, height `2 * amp - width`
    let (width, amp, n) = (0.02, 0.1, 4000);
    let mut state = Some(0.0);
    let mut pts = Vec::new();
    for cycle in 0..2 {
        for i in 0..n {
            let u = i as f64 / n as f64;
            let x = amp * if u < 0.25 { 4.0 * u } else if u < 0.75 { 2.0 - 4.0 * u } else { 4.0 * u - 4.0 };
            let y = apply_backlash(x, &mut state, width);
            if cycle == 1 {
                pts.push((x, y));
            }
        }
    }
    pts.push(pts[0]);
    let area: f64 = pts.windows(2).map(|w| 0.5 * (w[0].0 * w[1].1 - w[1].0 * w[0].1)).sum::<f64>().abs();
    let expected = width * (2.0 * amp - width);
    assert!((area - expected).abs() / expected < 1e-2, "{area} vs {expected}");
}

//! Actuator model: torque-constant identification, the back-EMF limited torque
//! envelope, bus-voltage sag and drivetrain backlash.

use std::f64::consts::PI;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Nominal supply voltage of the power system.
pub const NOMINAL_BUS_VOLTAGE: f64 = 48.0;

#[derive(Debug, Error)]
pub enum ActuatorError {
    #[error("too few samples for identification: {got} (need {need})")]
    TooFewSamples { got: usize, need: usize },
    #[error("degenerate samples: current has no spread")]
    Degenerate,
    #[error("non-finite sample at row {0}")]
    NonFinite(usize),
    #[error("negative current {current} at row {row}")]
    NegativeCurrent { row: usize, current: f64 },
    #[error("dyno csv: {0}")]
    Csv(String),
    #[error("invalid actuator '{name}': {reason}")]
    Invalid { name: String, reason: String },
}

/// Electrical and mechanical parameters of one actuator.
///
/// `kt` is the motor-side torque constant; `tau_peak` is the output torque
/// limit after the internal gearbox.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorParams {
    pub name: String,
    pub kt: f64,
    pub tau_peak: f64,
    pub omega_max: f64,
    pub internal_gear_ratio: f64,
    /// Backlash at the actuator output, degrees.
    pub backlash_output: f64,
    pub winding_resistance: f64,
    pub v_bus_nominal: f64,
}

impl ActuatorParams {
    pub fn validate(&self) -> Result<(), ActuatorError> {
        let bad = |reason: &str| ActuatorError::Invalid {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        let positive = [
            ("kt", self.kt),
            ("tau_peak", self.tau_peak),
            ("omega_max", self.omega_max),
            ("internal_gear_ratio", self.internal_gear_ratio),
            ("winding_resistance", self.winding_resistance),
            ("v_bus_nominal", self.v_bus_nominal),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(bad(&format!("{field} must be positive, got {v}")));
            }
        }
        if !(self.backlash_output.is_finite() && self.backlash_output >= 0.0) {
            return Err(bad("backlash_output must be >= 0"));
        }
        Ok(())
    }

    /// Output torque available at zero speed from the electrical side alone.
    pub fn stall_electrical_limit(&self, v_bus: f64) -> f64 {
        self.internal_gear_ratio * self.kt * v_bus / self.winding_resistance
    }

    /// Output speed at which back-EMF consumes the whole bus voltage.
    pub fn no_load_speed(&self, v_bus: f64) -> f64 {
        v_bus / (self.kt * self.internal_gear_ratio)
    }

    /// Phase current needed for an output torque.
    pub fn current_for_torque(&self, tau_output: f64) -> f64 {
        tau_output / (self.internal_gear_ratio * self.kt)
    }
}

/// One dynamometer measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynoSample {
    pub current: f64,
    pub torque: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TorqueConstantFit {
    pub kt: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Least-squares slope through the origin of torque against current.
///
/// `r_squared` is the usual coefficient of determination against the mean
/// torque, so a perfect proportional fit reports 1.
pub fn fit_torque_constant(samples: &[DynoSample]) -> Result<TorqueConstantFit, ActuatorError> {
    if samples.len() < 2 {
        return Err(ActuatorError::TooFewSamples {
            got: samples.len(),
            need: 2,
        });
    }
    for (row, s) in samples.iter().enumerate() {
        if !(s.current.is_finite() && s.torque.is_finite()) {
            return Err(ActuatorError::NonFinite(row));
        }
        if s.current < 0.0 {
            return Err(ActuatorError::NegativeCurrent {
                row,
                current: s.current,
            });
        }
    }
    let n = samples.len() as f64;
    let mean_i = samples.iter().map(|s| s.current).sum::<f64>() / n;
    let var_i = samples.iter().map(|s| (s.current - mean_i).powi(2)).sum::<f64>();
    if var_i <= f64::EPSILON * mean_i.abs().max(1.0) {
        return Err(ActuatorError::Degenerate);
    }
    let sxy: f64 = samples.iter().map(|s| s.current * s.torque).sum();
    let sxx: f64 = samples.iter().map(|s| s.current * s.current).sum();
    let kt = sxy / sxx;

    let mean_t = samples.iter().map(|s| s.torque).sum::<f64>() / n;
    let ss_res: f64 = samples.iter().map(|s| (s.torque - kt * s.current).powi(2)).sum();
    let ss_tot: f64 = samples.iter().map(|s| (s.torque - mean_t).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(TorqueConstantFit {
        kt,
        r_squared,
        samples: samples.len(),
    })
}

/// Reads a two-column `current_A,torque_Nm` CSV with a header row.
pub fn read_dyno_csv<R: Read>(reader: R) -> Result<Vec<DynoSample>, ActuatorError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| ActuatorError::Csv(e.to_string()))?.clone();
    if headers.len() != 2 {
        return Err(ActuatorError::Csv(format!(
            "expected 2 header columns (current_A, torque_Nm), found {}",
            headers.len()
        )));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| ActuatorError::Csv(e.to_string()))?;
        if rec.len() != 2 {
            return Err(ActuatorError::Csv(format!(
                "row {}: expected 2 columns, found {}",
                row + 1,
                rec.len()
            )));
        }
        let parse = |col: usize| {
            rec[col].parse::<f64>().map_err(|e| {
                ActuatorError::Csv(format!("row {}, column {}: {e}", row + 1, &headers[col]))
            })
        };
        out.push(DynoSample {
            current: parse(0)?,
            torque: parse(1)?,
        });
    }
    Ok(out)
}

/// Output torque the actuator can deliver at output speed `omega_output`
/// with bus voltage `v_bus`.
///
/// Linear back-EMF headroom: `V_h = max(0, v_bus - Kt * |omega_rotor|)` and
/// the current is limited to `V_h / R`.
pub fn available_torque(params: &ActuatorParams, omega_output: f64, v_bus: f64) -> f64 {
    let omega_rotor = omega_output.abs() * params.internal_gear_ratio;
    let headroom = (v_bus - params.kt * omega_rotor).max(0.0);
    let electrical = params.internal_gear_ratio * params.kt * headroom / params.winding_resistance;
    params.tau_peak.min(electrical)
}

/// Body position error produced by actuator backlash seen through a
/// joint reduction and a lever arm. Angles in degrees, lengths in meters.
pub fn backlash_body_error(backlash_deg: f64, joint_per_actuator_ratio: f64, lever_arm: f64) -> f64 {
    lever_arm * (backlash_deg * joint_per_actuator_ratio * PI / 180.0)
}

/// Dead-zone (play) element: the output stays put until the input leaves
/// the band `[output - width/2, output + width/2]`, then drags the output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backlash {
    width: f64,
    output: Option<f64>,
}

impl Backlash {
    pub fn new(width: f64) -> Self {
        assert!(width >= 0.0, "backlash width must be non-negative");
        Self { width, output: None }
    }

    /// Starts with the output centred on `initial`.
    pub fn centred(width: f64, initial: f64) -> Self {
        let mut b = Self::new(width);
        b.output = Some(initial);
        b
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn apply(&mut self, input: f64) -> f64 {
        apply_backlash(input, &mut self.output, self.width)
    }
}

/// Stateful dead-zone update. `state` holds the current output; `None`
/// means not yet engaged and the first input is passed through.
pub fn apply_backlash(input: f64, state: &mut Option<f64>, width: f64) -> f64 {
    let half = 0.5 * width;
    let out = match *state {
        None => input,
        Some(prev) => {
            if input > prev + half {
                input - half
            } else if input < prev - half {
                input + half
            } else {
                prev
            }
        }
    };
    *state = Some(out);
    out
}

/// Supply model: `V = V_nominal - R_batt * I_total`, clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusModel {
    pub v_nominal: f64,
    pub r_batt: f64,
    pub sag_enabled: bool,
}

impl Default for BusModel {
    fn default() -> Self {
        Self {
            v_nominal: NOMINAL_BUS_VOLTAGE,
            r_batt: DEFAULT_BATTERY_RESISTANCE,
            sag_enabled: false,
        }
    }
}

/// Series resistance of the two-pack battery plus wiring, ohm. Not a measured value.
pub const DEFAULT_BATTERY_RESISTANCE: f64 = 0.12;

impl BusModel {
    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn with_sag(r_batt: f64) -> Self {
        Self {
            r_batt,
            sag_enabled: true,
            ..Self::default()
        }
    }

    pub fn voltage(&self, total_current: f64) -> f64 {
        if self.sag_enabled {
            (self.v_nominal - self.r_batt * total_current.abs()).max(0.0)
        } else {
            self.v_nominal
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ak60() -> ActuatorParams {
        ActuatorParams {
            name: "ak60".into(),
            kt: 0.119,
            tau_peak: 9.0,
            omega_max: 60.0,
            internal_gear_ratio: 6.0,
            backlash_output: 0.2,
            winding_resistance: 0.32,
            v_bus_nominal: 48.0,
        }
    }

    #[test]
    fn exact_line_fit() {
        let s: Vec<_> = (1..=5)
            .map(|i| DynoSample {
                current: i as f64,
                torque: 0.1 * i as f64,
            })
            .collect();
        let fit = fit_torque_constant(&s).unwrap();
        assert!((fit.kt - 0.1).abs() < 1e-15);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_sample_fit() {
        let s = [
            DynoSample { current: 1.0, torque: 0.2 },
            DynoSample { current: 2.0, torque: 0.4 },
        ];
        assert!((fit_torque_constant(&s).unwrap().kt - 0.2).abs() < 1e-15);
    }

    #[test]
    fn degenerate_samples_rejected() {
        let s = [DynoSample { current: 2.0, torque: 0.2 }; 4];
        assert!(matches!(fit_torque_constant(&s), Err(ActuatorError::Degenerate)));
        assert!(matches!(
            fit_torque_constant(&s[..1]),
            Err(ActuatorError::TooFewSamples { got: 1, .. })
        ));
    }

    #[test]
    fn zero_speed_gives_peak() {
        let p = ak60();
        assert_eq!(available_torque(&p, 0.0, 48.0), 9.0);
    }

    #[test]
    fn zero_headroom_gives_zero() {
        let p = ak60();
        let w = p.no_load_speed(48.0);
        assert_eq!(available_torque(&p, w, 48.0), 0.0);
        assert_eq!(available_torque(&p, -1.5 * w, 48.0), 0.0);
    }

    #[test]
    fn half_speed_is_half_the_electrical_limit() {
        // large peak so the electrical branch is active
        let mut p = ak60();
        p.tau_peak = 1e6;
        let w = p.no_load_speed(48.0);
        let stall = available_torque(&p, 0.0, 48.0);
        let half = available_torque(&p, 0.5 * w, 48.0);
        assert!((half - 0.5 * stall).abs() < 1e-9 * stall);
    }

    #[test]
    fn backlash_widths() {
        let e = backlash_body_error(0.19, 40.0 / 9.0, 0.435);
        assert!((e - 0.00641).abs() < 1e-5);
        assert_eq!(backlash_body_error(0.0, 3.0, 1.0), 0.0);
        let e15 = backlash_body_error(0.15, 40.0 / 9.0, 0.435);
        assert!((e15 - 0.00506).abs() < 1e-5);
    }

    #[test]
    fn zero_width_backlash_is_identity() {
        let mut b = Backlash::new(0.0);
        for x in [0.0, 0.3, -1.0, 2.5, 2.5, -0.1] {
            assert_eq!(b.apply(x), x);
        }
    }

    #[test]
    fn backlash_lags_monotone_input_by_half_width() {
        let w = 0.02;
        let mut b = Backlash::centred(w, 0.0);
        for i in 1..100 {
            let x = i as f64 * 0.001;
            let y = b.apply(x);
            if x > w / 2.0 {
                assert!((y - (x - w / 2.0)).abs() < 1e-15);
            } else {
                assert_eq!(y, 0.0);
            }
        }
    }

    #[test]
    fn sub_band_motion_is_invisible() {
        let w = 0.1;
        let mut b = Backlash::centred(w, 1.0);
        for i in 0..200 {
            let tri = ((i % 20) as f64 / 10.0 - 1.0).abs() * 2.0 - 1.0; // in [-1, 1]
            assert_eq!(b.apply(1.0 + 0.049 * tri), 1.0);
        }
    }

    #[test]
    fn bus_sag() {
        let bus = BusModel::with_sag(0.2);
        assert!((bus.voltage(10.0) - 46.0).abs() < 1e-12);
        assert_eq!(BusModel::ideal().voltage(100.0), 48.0);
    }

    #[test]
    fn dyno_csv_parsing() {
        let text = "current_A,torque_Nm\n1.0,0.1\n2.0,0.2\n";
        let s = read_dyno_csv(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert!(read_dyno_csv("a,b,c\n1,2,3\n".as_bytes()).is_err());
        assert!(read_dyno_csv("current_A,torque_Nm\n1.0,x\n".as_bytes()).is_err());
    }
}

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::actuator::{available_torque, Backlash, BusModel};
use crate::robot::RobotModel;

use super::{LogSample, RolloutLog, SimError, SimState, Simulator};

/// Rate at which controllers are sampled, Hz.
pub const CONTROL_RATE_HZ: f64 = 500.0;

/// Joint torque policy sampled by [`rollout`] at the control rate.
pub trait Controller {
    fn torques(&mut self, state: &SimState) -> DVector<f64>;
}

impl<F: FnMut(&SimState) -> DVector<f64>> Controller for F {
    fn torques(&mut self, state: &SimState) -> DVector<f64> {
        self(state)
    }
}

/// Dead-zone between a joint and the position the controller reads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacklashInjection {
    pub joint: usize,
    /// Joint-side play, rad.
    pub width: f64,
}

/// Actuator effects between the controller and the joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actuation {
    /// Clamp motor torques by the speed and voltage dependent envelope.
    pub clamp: bool,
    pub bus: BusModel,
    pub backlash: Vec<BacklashInjection>,
}

impl Actuation {
    /// Torques pass through untouched.
    pub fn ideal() -> Self {
        Self {
            clamp: false,
            bus: BusModel::ideal(),
            backlash: Vec::new(),
        }
    }

    pub fn limited(bus: BusModel) -> Self {
        Self {
            clamp: true,
            bus,
            backlash: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub duration: f64,
    pub control_rate: f64,
    /// Log one sample every this many physics steps.
    pub log_every: usize,
    pub actuation: Actuation,
}

impl RolloutConfig {
    pub fn new(duration: f64) -> Self {
        Self {
            duration,
            control_rate: CONTROL_RATE_HZ,
            log_every: 20,
            actuation: Actuation::ideal(),
        }
    }
}

struct Drive<'a> {
    model: &'a RobotModel,
    bus: BusModel,
    current: f64,
}

impl Drive<'_> {
    fn voltage(&self) -> f64 {
        self.bus.voltage(self.current)
    }

    /// Maps joint torques to motors, clamps each motor and maps back.
    fn clamp(&mut self, tau: &DVector<f64>, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DVector<f64>, SimError> {
        let jac = self.model.drivetrain.jacobian(q);
        let motor_speed = &jac * qd;
        let mut motor = jac
            .transpose()
            .lu()
            .solve(tau)
            .ok_or_else(|| SimError::Invalid("drivetrain Jacobian is singular".into()))?;
        let v = self.voltage();
        let mut current = 0.0;
        for (i, a) in self.model.actuators.iter().enumerate() {
            let limit = available_torque(a, motor_speed[i], v);
            motor[i] = motor[i].clamp(-limit, limit);
            current += a.current_for_torque(motor[i]).abs();
        }
        self.current = current;
        Ok(jac.transpose() * motor)
    }
}

/// Runs `controller` against the simulator for `config.duration` seconds.
///
/// The controller is sampled at `config.control_rate` and its output held
/// between samples. A non-finite command aborts the run.
pub fn rollout(
    sim: &Simulator,
    model: &RobotModel,
    initial: SimState,
    controller: &mut dyn Controller,
    config: &RolloutConfig,
) -> Result<RolloutLog, SimError> {
    if !(config.duration > 0.0) {
        return Err(SimError::Invalid("rollout duration must be positive".into()));
    }
    if !(config.control_rate > 0.0) || config.log_every == 0 {
        return Err(SimError::Invalid("control rate and log interval must be positive".into()));
    }
    let dt = sim.params.dt;
    let hold = ((1.0 / (config.control_rate * dt)).round() as usize).max(1);
    let n_steps = (config.duration / dt).round() as usize;
    let nj = sim.n_joints();
    let act = &config.actuation;
    if act.clamp && model.actuators.len() != model.drivetrain.motor_count {
        return Err(SimError::Invalid("actuator clamp needs one actuator per drivetrain row".into()));
    }
    if let Some(b) = act.backlash.iter().find(|b| b.joint >= nj || !(b.width >= 0.0)) {
        return Err(SimError::Invalid(format!("bad backlash injection {b:?}")));
    }
    let mut play: Vec<(usize, Backlash)> = act
        .backlash
        .iter()
        .map(|b| (b.joint, Backlash::centred(b.width, initial.q[b.joint])))
        .collect();
    let mut drive = Drive {
        model,
        bus: act.bus,
        current: 0.0,
    };

    let mut log = RolloutLog {
        samples: Vec::with_capacity(n_steps / config.log_every + 1),
    };
    let mut state = initial;
    let mut tau_cmd = DVector::zeros(nj);
    for step in 0..n_steps {
        if step % hold == 0 {
            let mut sensed = state.clone();
            for (j, b) in play.iter_mut() {
                sensed.q[*j] = b.apply(state.q[*j]);
            }
            tau_cmd = controller.torques(&sensed);
            if tau_cmd.len() != nj {
                return Err(SimError::Dimension {
                    expected: nj,
                    got: tau_cmd.len(),
                });
            }
            if let Some(joint) = tau_cmd.iter().position(|t| !t.is_finite()) {
                return Err(SimError::NonFiniteTorque { step, t: state.t, joint });
            }
        }
        let v_bus = drive.voltage();
        let tau = if act.clamp {
            drive.clamp(&tau_cmd, &state.q, &state.qd)?
        } else {
            tau_cmd.clone()
        };
        let out = sim.step(&state, &tau)?;
        state = out.state;
        if (step + 1) % config.log_every == 0 {
            log.samples.push(LogSample {
                t: state.t,
                base: state.base,
                base_vel: state.base_vel,
                q: state.q.clone(),
                qd: state.qd.clone(),
                tau_cmd: tau_cmd.clone(),
                tau_applied: tau,
                forces: out.forces,
                bus_voltage: v_bus,
            });
        }
    }
    Ok(log)
}

//! Subcommand bodies. Each writes its files under `RunConfig::out_dir` and
//! returns the report that the binary prints.

use std::fs::File;
use std::path::{Path, PathBuf};

use jumpleg::actuator::{
    fit_torque_constant, read_dyno_csv, ActuatorError, BusModel, NOMINAL_BUS_VOLTAGE,
};
use jumpleg::control::{
    jump_tracker, tiptoe_plan, ImpedanceGains, JumpReference, TiptoeController, TiptoeTimings,
    WbcFailure,
};
use jumpleg::robot::RobotModel;
use jumpleg::sim::{
    detect_phases, rollout, write_log_csv, Actuation, BacklashInjection, Phase, PhaseKind,
    RolloutConfig, RolloutLog, SimParams, SimState, Simulator,
};
use jumpleg::srbd::G;
use jumpleg::trajopt::{
    solve, standing_height, validate_solution, Block, JumpProblem, JumpSolution, JumpSpec,
    SolverConfig, TorqueBound, TrajoptError, ViolationReport,
};
use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::trajectory::Trajectory;
use crate::{write_atomic, write_json, CliError, RunConfig};

/// Largest validator violation accepted as a feasible trajectory.
pub const FEASIBLE_VIOLATION: f64 = 1e-4;
/// Largest torso pitch, in degrees, still counted as balanced.
pub const MAX_BALANCED_PITCH_DEG: f64 = 5.0;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const VIOLATION_FILE: &str = "violation.json";
pub const ROLLOUT_FILE: &str = "rollout.csv";
pub const TIPTOE_FAILURE_FILE: &str = "tiptoe.failed";

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

fn simulator(model: &RobotModel) -> Result<Simulator, CliError> {
    Simulator::new(model, SimParams::default()).map_err(usage)
}

fn joint(model: &RobotModel, name: &str) -> Result<usize, CliError> {
    model
        .joint_index(name)
        .ok_or_else(|| CliError::Usage(format!("model has no joint named '{name}'")))
}

fn gains(
    cfg: &RunConfig,
    default: &str,
    n_joints: usize,
) -> Result<(String, ImpedanceGains), CliError> {
    let name = cfg
        .gains_profile
        .clone()
        .unwrap_or_else(|| default.to_string());
    let g = ImpedanceGains::profile(&name, n_joints).map_err(usage)?;
    Ok((name, g))
}

fn write_log(cfg: &RunConfig, name: &str, log: &RolloutLog) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write_log_csv(log, &mut buf).map_err(numerical)?;
    write_atomic(&cfg.out_path(name), &buf)
}

fn worst_block(report: &ViolationReport) -> Option<String> {
    report.worst.map(|w| w.block.name().to_string())
}

fn longest_flight(phases: &[Phase]) -> f64 {
    phases
        .iter()
        .filter(|p| p.kind == PhaseKind::Flight)
        .map(Phase::duration)
        .fold(0.0, f64::max)
}

fn read_trajectory(path: &Path, model: &RobotModel) -> Result<Trajectory, CliError> {
    let file = File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Trajectory::read(file, model.n_joints(), model.n_contacts())
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Jump description from the shared flags; `knee_cap` replaces the knee's
/// co-actuated capacity with a constant.
pub fn jump_spec(
    cfg: &RunConfig,
    model: &RobotModel,
    knee_cap: Option<f64>,
) -> Result<JumpSpec, CliError> {
    if !(cfg.apex.is_finite() && cfg.apex >= 0.0) {
        return Err(CliError::Usage(format!(
            "apex must be nonnegative, got {}",
            cfg.apex
        )));
    }
    let torque_bound = match knee_cap {
        None => TorqueBound::Coactuated,
        Some(limit) if limit.is_finite() && limit > 0.0 => TorqueBound::FixedJoint {
            joint: joint(model, "knee")?,
            limit,
        },
        Some(limit) => {
            return Err(CliError::Usage(format!(
                "knee cap must be positive, got {limit}"
            )))
        }
    };
    Ok(JumpSpec {
        apex: cfg.apex,
        stance_duration: cfg.stance_duration,
        dt: cfg.dt,
        mu: cfg.mu,
        torque_bound,
        ..JumpSpec::default()
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizeOptions {
    /// Constant knee torque bound in N·m instead of the co-actuated one.
    pub knee_cap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeReport {
    /// `converged`, `iteration_limit` or `not_converged`.
    pub status: String,
    pub feasible: bool,
    pub max_violation: f64,
    pub worst_block: Option<String>,
    pub worst_knot: Option<usize>,
    pub seed: u64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub cost: f64,
    pub n_knots: usize,
    pub standing_height: f64,
    pub apex_target: Option<f64>,
    pub planned_apex_height: f64,
    pub planned_rise: f64,
    pub liftoff_time: Option<f64>,
    pub knee_cap: Option<f64>,
    pub knee_peak_torque: f64,
    pub knee_peak_knot: usize,
    pub knee_capacity_at_peak: f64,
    pub motor_torque_violation: f64,
}

/// Builds and solves the jump without writing anything. An unconverged
/// solve still returns its best iterate; check `report.feasible`.
pub fn optimize(
    cfg: &RunConfig,
    opts: &OptimizeOptions,
) -> Result<(JumpProblem, JumpSolution, OptimizeReport), CliError> {
    let model = cfg.model()?;
    let spec = jump_spec(cfg, &model, opts.knee_cap)?;
    let problem = spec.build(&model).map_err(usage)?;
    let config = SolverConfig {
        seed: cfg.seed,
        ..SolverConfig::default()
    };
    let (solution, converged) = match solve(&problem, &config) {
        Ok(s) => (s, true),
        Err(TrajoptError::NotConverged { solution, .. }) => (*solution, false),
        Err(e @ TrajoptError::NonFinite) => return Err(numerical(e)),
        Err(e) => return Err(usage(e)),
    };
    let report = optimize_report(cfg, opts, &problem, &solution, converged)?;
    Ok((problem, solution, report))
}

fn optimize_report(
    cfg: &RunConfig,
    opts: &OptimizeOptions,
    problem: &JumpProblem,
    solution: &JumpSolution,
    converged: bool,
) -> Result<OptimizeReport, CliError> {
    let v = &solution.vars;
    let n = v.n_knots();
    let knee = joint(&problem.model, "knee")?;
    let (knee_peak_knot, knee_peak_torque) =
        (0..n).map(|k| (k, solution.torques[k][knee].abs())).fold(
            (0, f64::NEG_INFINITY),
            |best, x| if x.1 > best.1 { x } else { best },
        );
    let planned_apex_height = (0..n).map(|k| v.p(k).z).fold(f64::NEG_INFINITY, f64::max);
    let violation = &solution.report.violation;
    let max_violation = violation.max_violation;
    let status = if converged {
        serde_json::to_value(solution.report.status)
            .ok()
            .and_then(|s| s.as_str().map(str::to_string))
            .unwrap_or_default()
    } else {
        "not_converged".to_string()
    };
    Ok(OptimizeReport {
        status,
        feasible: max_violation < FEASIBLE_VIOLATION,
        max_violation,
        worst_block: worst_block(violation),
        worst_knot: violation.worst.map(|w| w.knot),
        seed: cfg.seed,
        outer_iterations: solution.report.outer_iterations,
        inner_iterations: solution.report.inner_iterations,
        cost: solution.report.cost,
        n_knots: n,
        standing_height: problem.standing_height,
        apex_target: problem.apex_target(),
        planned_apex_height,
        planned_rise: planned_apex_height - problem.standing_height,
        liftoff_time: (0..n)
            .find(|&k| !problem.schedule.active[k].iter().any(|&a| a))
            .map(|k| problem.schedule.time(k)),
        knee_cap: opts.knee_cap,
        knee_peak_torque,
        knee_peak_knot,
        knee_capacity_at_peak: problem.torque_capacity(&v.q(knee_peak_knot))[knee],
        motor_torque_violation: violation.block(Block::MotorTorque).max,
    })
}

/// Solves the jump and writes `trajectory.csv`, `violation.json` and
/// `optimize_report.json`. A trajectory above the feasibility threshold is
/// still written, and the error names the worst constraint block.
pub fn cmd_optimize(cfg: &RunConfig, opts: &OptimizeOptions) -> Result<OptimizeReport, CliError> {
    let (problem, solution, report) = optimize(cfg, opts)?;
    let mut csv = Vec::new();
    Trajectory::from_solution(&problem, &solution)
        .write(&mut csv)
        .map_err(numerical)?;
    write_atomic(&cfg.out_path(TRAJECTORY_FILE), &csv)?;
    write_json(&cfg.out_path(VIOLATION_FILE), &solution.report.violation)?;
    write_json(&cfg.out_path("optimize_report.json"), &report)?;
    if !report.feasible {
        return Err(CliError::Numerical(format!(
            "no feasible jump: max violation {:.3e} in block '{}'",
            report.max_violation,
            report.worst_block.as_deref().unwrap_or("none")
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOptions {
    pub duration: f64,
    /// Extra height above the ground at the start.
    pub drop_height: f64,
    /// Named model pose held by joint impedance.
    pub pose: String,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self {
            duration: 2.0,
            drop_height: 0.0,
            pose: "stand".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateReport {
    pub pose: String,
    pub gains_profile: String,
    pub duration: f64,
    pub drop_height: f64,
    pub phases: Vec<Phase>,
    pub min_height: f64,
    pub final_height: f64,
    pub weight: f64,
    pub final_normal_force: f64,
    /// Final total normal force over weight.
    pub load_ratio: f64,
}

/// Drops the robot in a held pose and writes `rollout.csv` and
/// `simulate_report.json`.
pub fn cmd_simulate(cfg: &RunConfig, opts: &SimulateOptions) -> Result<SimulateReport, CliError> {
    if !(opts.drop_height.is_finite() && opts.drop_height >= 0.0) {
        return Err(CliError::Usage(format!(
            "drop height must be nonnegative, got {}",
            opts.drop_height
        )));
    }
    let model = cfg.model()?;
    let sim = simulator(&model)?;
    let q = model
        .pose(&opts.pose)
        .ok_or_else(|| CliError::Usage(format!("model has no pose named '{}'", opts.pose)))?
        .clone();
    let (gains_profile, gains) = gains(cfg, "balance", model.n_joints())?;
    // feed-forward from the static stance: weight shared by the contacts
    // that touch the ground in the pose
    let stand = sim.standing_state(&q, 0.0, 0.0);
    let pts = sim.contact_points(&stand);
    let touching: Vec<bool> = pts.iter().map(|p| p.y < 1e-3).collect();
    let n_touching = touching.iter().filter(|&&c| c).count() as f64;
    let weight = sim.chain.total_mass() * G;
    let forces: Vec<Vector3<f64>> = touching
        .iter()
        .map(|&c| {
            if c {
                Vector3::new(0.0, 0.0, weight / n_touching)
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    let p = Vector3::new(stand.base.x, 0.0, stand.base.y);
    let reference = JumpReference::from_knots(
        &model,
        vec![0.0, 1.0],
        &[p, p],
        &[Matrix3::identity(); 2],
        vec![q.clone(), q],
        &[forces.clone(), forces],
        vec![touching.clone(), touching],
        cfg.mu,
    )
    .map_err(numerical)?;
    let mut ctl = jump_tracker(reference, gains).map_err(usage)?;
    let mut init = stand;
    init.base.y += opts.drop_height;
    let mut rc = RolloutConfig::new(opts.duration);
    rc.log_every = 10;
    let log = rollout(&sim, &model, init, &mut ctl, &rc).map_err(|e| match e {
        jumpleg::sim::SimError::Invalid(_) => usage(e),
        _ => numerical(e),
    })?;
    write_log(cfg, ROLLOUT_FILE, &log)?;
    let last = log.last().ok_or_else(|| numerical("empty rollout"))?;
    let report = SimulateReport {
        pose: opts.pose.clone(),
        gains_profile,
        duration: opts.duration,
        drop_height: opts.drop_height,
        phases: detect_phases(&log),
        min_height: log
            .samples
            .iter()
            .map(|s| s.base.y)
            .fold(f64::INFINITY, f64::min),
        final_height: last.base.y,
        weight,
        final_normal_force: last.total_normal(),
        load_ratio: last.total_normal() / weight,
    };
    write_json(&cfg.out_path("simulate_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOptions {
    pub trajectory: PathBuf,
    /// Clamp motor torques by the speed and voltage envelope.
    pub clamp: bool,
    /// Battery resistance in ohms; `None` keeps the bus at nominal voltage.
    pub battery_resistance: Option<f64>,
    /// Simulated time after the last knot.
    pub settle: f64,
}

impl TrackOptions {
    pub fn new(trajectory: impl Into<PathBuf>) -> Self {
        Self {
            trajectory: trajectory.into(),
            clamp: true,
            battery_resistance: None,
            settle: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackReport {
    pub gains_profile: String,
    pub clamp: bool,
    pub battery_resistance: Option<f64>,
    pub duration: f64,
    pub phases: Vec<Phase>,
    pub planned_liftoff_time: Option<f64>,
    pub liftoff_time: Option<f64>,
    pub longest_flight: f64,
    pub standing_height: f64,
    pub planned_apex_height: f64,
    pub apex_height: f64,
    /// |apex − planned| / planned, on absolute torso heights.
    pub apex_height_error: f64,
    pub planned_rise: f64,
    pub rise: f64,
    /// Peaks below cover push-off: from the start to the first flight.
    pub knee_peak_torque: f64,
    pub knee_capacity_at_peak: f64,
    pub ankle_toe_peak_torque: f64,
    pub min_bus_voltage: f64,
    pub bus_dip: f64,
}

/// Replays a trajectory file under joint impedance control and writes
/// `rollout.csv` and `track_report.json`.
pub fn cmd_track(cfg: &RunConfig, opts: &TrackOptions) -> Result<TrackReport, CliError> {
    let model = cfg.model()?;
    let sim = simulator(&model)?;
    let traj = read_trajectory(&opts.trajectory, &model)?;
    let reference = traj.to_reference(&model, cfg.mu).map_err(usage)?;
    let (gains_profile, gains) = gains(cfg, "low", model.n_joints())?;
    if !(opts.settle.is_finite() && opts.settle >= 0.0) {
        return Err(CliError::Usage(format!(
            "settle time must be nonnegative, got {}",
            opts.settle
        )));
    }
    let bus = match opts.battery_resistance {
        None => BusModel::ideal(),
        Some(r) if r.is_finite() && r >= 0.0 => BusModel::with_sag(r),
        Some(r) => {
            return Err(CliError::Usage(format!(
                "battery resistance must be nonnegative, got {r}"
            )))
        }
    };
    let actuation = Actuation {
        clamp: opts.clamp,
        bus,
        backlash: Vec::new(),
    };
    let init = reference.initial_state(&sim);
    let duration = reference.duration() + opts.settle;
    let planned_liftoff_time = reference.liftoff_time().map(|t| t - reference.t[0]);
    let planned_apex_height = reference.planned_apex();
    let mut tracker = jump_tracker(reference, gains).map_err(usage)?;
    let mut rc = RolloutConfig::new(duration);
    rc.log_every = 5;
    rc.actuation = actuation;
    let log = rollout(&sim, &model, init, &mut tracker, &rc).map_err(numerical)?;
    write_log(cfg, ROLLOUT_FILE, &log)?;

    let phases = detect_phases(&log);
    let liftoff_time = phases
        .iter()
        .find(|p| p.kind == PhaseKind::Flight)
        .map(|p| p.t_start);
    let push_off = log
        .samples
        .iter()
        .filter(|s| liftoff_time.is_none_or(|t| s.t < t));
    let knee = joint(&model, "knee")?;
    let ankle_toe: Vec<usize> = ["ankle_pitch", "toe"]
        .iter()
        .filter_map(|n| model.joint_index(n))
        .collect();
    let (mut knee_peak, mut knee_cap, mut at_peak, mut v_min) =
        (0.0f64, 0.0, 0.0f64, f64::INFINITY);
    for s in push_off {
        if s.tau_applied[knee].abs() > knee_peak {
            knee_peak = s.tau_applied[knee].abs();
            knee_cap = model.joint_torque_capacity(&s.q).map_err(numerical)?[knee];
        }
        for &j in &ankle_toe {
            at_peak = at_peak.max(s.tau_applied[j].abs());
        }
        v_min = v_min.min(s.bus_voltage);
    }
    let standing = standing_height(&model).map_err(usage)?;
    let apex_height = log.max_height();
    let report = TrackReport {
        gains_profile,
        clamp: opts.clamp,
        battery_resistance: opts.battery_resistance,
        duration,
        longest_flight: longest_flight(&phases),
        phases,
        planned_liftoff_time,
        liftoff_time,
        standing_height: standing,
        planned_apex_height,
        apex_height,
        apex_height_error: (apex_height - planned_apex_height).abs() / planned_apex_height,
        planned_rise: planned_apex_height - standing,
        rise: apex_height - standing,
        knee_peak_torque: knee_peak,
        knee_capacity_at_peak: knee_cap,
        ankle_toe_peak_torque: at_peak,
        min_bus_voltage: v_min,
        bus_dip: NOMINAL_BUS_VOLTAGE - v_min,
    };
    write_json(&cfg.out_path("track_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TiptoeOptions {
    pub timings: TiptoeTimings,
    /// Joint-side knee backlash in radians; 0 disables it.
    pub knee_backlash: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TiptoeReport {
    /// `balanced`, `fell` or `controller_failed`.
    pub status: String,
    pub gains_profile: String,
    pub knee_backlash: f64,
    pub heel_released: bool,
    pub heel_release_time: Option<f64>,
    /// Start of the final phase, over which the metrics below are taken.
    pub hold_start: f64,
    pub held_for: f64,
    pub max_pitch_deg: f64,
    /// Smallest distance from the centre of mass to the edge of the
    /// support interval.
    pub min_margin: f64,
    pub warnings: Vec<String>,
    pub failure: Option<WbcFailure>,
}

/// Runs the tiptoe balance procedure and writes `rollout.csv`,
/// `tiptoe_margin.csv` and `tiptoe_report.json`. If the whole-body
/// controller fails, the log stops at the failure and `tiptoe.failed`
/// records it.
pub fn cmd_tiptoe(cfg: &RunConfig, opts: &TiptoeOptions) -> Result<TiptoeReport, CliError> {
    if !(opts.knee_backlash.is_finite() && opts.knee_backlash >= 0.0) {
        return Err(CliError::Usage(format!(
            "backlash must be nonnegative, got {}",
            opts.knee_backlash
        )));
    }
    let model = cfg.model()?;
    let sim = simulator(&model)?;
    let timings = TiptoeTimings {
        mu: cfg.mu,
        ..opts.timings.clone()
    };
    let plan = tiptoe_plan(&model, &timings).map_err(usage)?;
    let (gains_profile, gains) = gains(cfg, "balance", model.n_joints())?;
    let stand = model
        .pose("stand")
        .ok_or_else(|| CliError::Usage("model has no 'stand' pose".into()))?;
    let init = sim.standing_state(stand, 0.0, 0.0);
    let mut ctl =
        TiptoeController::new(sim.clone(), model.clone(), plan.clone(), gains).map_err(usage)?;
    let mut rc = RolloutConfig::new(plan.t_end);
    rc.log_every = 100;
    if opts.knee_backlash > 0.0 {
        rc.actuation.backlash.push(BacklashInjection {
            joint: joint(&model, "knee")?,
            width: opts.knee_backlash,
        });
    }
    let mut log = rollout(&sim, &model, init, &mut ctl, &rc).map_err(numerical)?;
    let failure = ctl.failures.first().cloned();
    if let Some(f) = &failure {
        log.samples.retain(|s| s.t <= f.t);
    }
    write_log(cfg, ROLLOUT_FILE, &log)?;

    let hold_start = plan.phases.last().map_or(0.0, |p| p.t_start);
    let mut margin_csv = String::from("t,margin,pitch_deg\n");
    let (mut max_pitch, mut min_margin, mut held_for) = (0.0f64, f64::INFINITY, 0.0f64);
    for s in &log.samples {
        let mut state = SimState::new(s.base, s.q.clone(), sim.n_contacts());
        state.base_vel = s.base_vel;
        let com = sim.com(&state);
        let pts = sim.contact_points(&state);
        let support = &plan.phase_at(s.t).contacts.active;
        let lo = support
            .iter()
            .map(|&c| pts[c].x)
            .fold(f64::INFINITY, f64::min);
        let hi = support
            .iter()
            .map(|&c| pts[c].x)
            .fold(f64::NEG_INFINITY, f64::max);
        let margin = (com.x - lo).min(hi - com.x);
        let pitch = s.base.z.abs().to_degrees();
        margin_csv.push_str(&format!("{:.6},{:.9},{:.9}\n", s.t, margin, pitch));
        if s.t >= hold_start {
            max_pitch = max_pitch.max(pitch);
            min_margin = min_margin.min(margin);
            held_for = s.t - hold_start;
        }
    }
    write_atomic(&cfg.out_path("tiptoe_margin.csv"), margin_csv.as_bytes())?;

    let heel = model.contacts_in_group(jumpleg::robot::ContactGroup::Heel);
    let heel_release_time = if timings.release_heel {
        plan.heel_release_time(&heel)
    } else {
        None
    };
    let balanced = failure.is_none() && max_pitch < MAX_BALANCED_PITCH_DEG && min_margin > 0.0;
    let status = match (&failure, balanced) {
        (Some(_), _) => "controller_failed",
        (None, true) => "balanced",
        (None, false) => "fell",
    };
    let report = TiptoeReport {
        status: status.into(),
        gains_profile,
        knee_backlash: opts.knee_backlash,
        heel_released: heel_release_time.is_some(),
        heel_release_time,
        hold_start,
        held_for,
        max_pitch_deg: max_pitch,
        min_margin,
        warnings: plan.warnings.clone(),
        failure: failure.clone(),
    };
    write_json(&cfg.out_path("tiptoe_report.json"), &report)?;
    let marker = cfg.out_path(TIPTOE_FAILURE_FILE);
    if let Some(f) = failure {
        let text = format!("t={:.4} phase={} error={}\n", f.t, f.phase, f.error);
        write_atomic(&marker, text.as_bytes())?;
        return Err(CliError::Numerical(format!(
            "whole-body controller failed at t = {:.4} s in phase '{}': {}",
            f.t, f.phase, f.error
        )));
    }
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|source| CliError::Io {
            path: marker.display().to_string(),
            source,
        })?;
    }
    if !balanced {
        return Err(CliError::Numerical(format!(
            "balance lost: max pitch {max_pitch:.2} deg, min margin {min_margin:.4} m"
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifyOptions {
    /// `current_A,torque_Nm` CSV.
    pub dyno: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifyReport {
    pub kt: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Fewest dyno samples accepted by `identify`.
pub const MIN_DYNO_SAMPLES: usize = 3;

/// Fits the torque constant to dyno data and writes `identify_report.json`.
pub fn cmd_identify(cfg: &RunConfig, opts: &IdentifyOptions) -> Result<IdentifyReport, CliError> {
    let path = &opts.dyno;
    let file = File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let samples =
        read_dyno_csv(file).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if samples.len() < MIN_DYNO_SAMPLES {
        return Err(CliError::Usage(format!(
            "{}: {}",
            path.display(),
            ActuatorError::TooFewSamples {
                got: samples.len(),
                need: MIN_DYNO_SAMPLES
            }
        )));
    }
    let fit = fit_torque_constant(&samples).map_err(|e| match e {
        ActuatorError::Degenerate => numerical(e),
        _ => usage(e),
    })?;
    let report = IdentifyReport {
        kt: fit.kt,
        r_squared: fit.r_squared,
        samples: fit.samples,
    };
    write_json(&cfg.out_path("identify_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidateOptions {
    pub trajectory: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidateReport {
    pub feasible: bool,
    pub max_violation: f64,
    pub worst_block: Option<String>,
    pub worst_knot: Option<usize>,
    pub n_knots: usize,
}

/// Re-checks a trajectory file against the problem built from the flags
/// and writes `violation.json`.
pub fn cmd_validate(cfg: &RunConfig, opts: &ValidateOptions) -> Result<ValidateReport, CliError> {
    let model = cfg.model()?;
    let problem = jump_spec(cfg, &model, None)?.build(&model).map_err(usage)?;
    let traj = read_trajectory(&opts.trajectory, &model)?;
    if traj.knots.len() != problem.n_knots() {
        return Err(CliError::Usage(format!(
            "trajectory has {} knots, the problem has {}",
            traj.knots.len(),
            problem.n_knots()
        )));
    }
    if traj.contact_schedule() != problem.schedule.active {
        return Err(CliError::Usage(
            "trajectory contact columns differ from the problem schedule".into(),
        ));
    }
    let violation = validate_solution(&problem, &traj.to_vars());
    write_json(&cfg.out_path(VIOLATION_FILE), &violation)?;
    let report = ValidateReport {
        feasible: violation.max_violation < FEASIBLE_VIOLATION,
        max_violation: violation.max_violation,
        worst_block: worst_block(&violation),
        worst_knot: violation.worst.map(|w| w.knot),
        n_knots: traj.knots.len(),
    };
    if !report.feasible {
        return Err(CliError::Numerical(format!(
            "trajectory violates block '{}' by {:.3e}",
            report.worst_block.as_deref().unwrap_or("none"),
            report.max_violation
        )));
    }
    Ok(report)
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jumpleg::control::TiptoeTimings;
use jumpleg_cli::commands::TRAJECTORY_FILE;
use jumpleg_cli::{
    cmd_identify, cmd_optimize, cmd_simulate, cmd_tiptoe, cmd_track, cmd_validate, CliError,
    IdentifyOptions, OptimizeOptions, RunConfig, SimulateOptions, TiptoeOptions, TrackOptions,
    ValidateOptions, EXIT_OK, EXIT_USAGE,
};
use serde::Serialize;

/// Plan, simulate and check jumps of a single-leg robot.
#[derive(Debug, Parser)]
#[command(name = "jumpleg", version)]
struct Cli {
    /// Robot model TOML (defaults to the built-in model).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Torso rise above standing height in metres; 0 plans a hover.
    #[arg(long, global = true, default_value_t = 0.3)]
    apex: f64,
    #[arg(long, global = true, default_value_t = 0.4)]
    stance_duration: f64,
    /// Knot spacing of the planner in seconds.
    #[arg(long, global = true, default_value_t = 0.01)]
    dt: f64,
    /// Friction coefficient.
    #[arg(long, global = true, default_value_t = 0.7)]
    mu: f64,
    /// Joint impedance profile: low, balance or zero.
    #[arg(long, global = true)]
    gains_profile: Option<String>,
    /// Mass added to the torso in kg.
    #[arg(long, global = true, default_value_t = 1.0)]
    payload_kg: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize a jump and write the trajectory.
    Optimize {
        /// Constant knee torque bound in N·m instead of the drivetrain's.
        #[arg(long)]
        knee_cap: Option<f64>,
    },
    /// Drop the robot holding a pose.
    Simulate {
        #[arg(long, default_value_t = 2.0)]
        duration: f64,
        #[arg(long, default_value_t = 0.0)]
        drop_height: f64,
        #[arg(long, default_value = "stand")]
        pose: String,
    },
    /// Track a trajectory file in the simulator.
    Track {
        /// Defaults to trajectory.csv in the output directory.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Pass commanded torques through without the motor envelope.
        #[arg(long)]
        no_clamp: bool,
        /// Battery resistance in ohms; enables bus sag.
        #[arg(long)]
        battery_resistance: Option<f64>,
        /// Seconds simulated after the last knot.
        #[arg(long, default_value_t = 0.3)]
        settle: f64,
    },
    /// Rise onto the toe and balance.
    Tiptoe {
        /// Forward body shift in metres (defaults to over the toe).
        #[arg(long)]
        shift: Option<f64>,
        /// Keep the heel contact down.
        #[arg(long)]
        keep_heel: bool,
        /// Joint-side knee backlash in degrees.
        #[arg(long, default_value_t = 0.0)]
        knee_backlash_deg: f64,
        #[arg(long, default_value_t = 10.0)]
        hold_duration: f64,
    },
    /// Fit a torque constant to dyno data.
    Identify {
        /// CSV with columns current_A,torque_Nm.
        #[arg(long)]
        dyno: PathBuf,
    },
    /// Check a trajectory file against the problem built from the flags.
    Validate {
        /// Defaults to trajectory.csv in the output directory.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
}

fn print<T: Serialize>(report: Result<T, CliError>) -> Result<(), CliError> {
    let report = report?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("reports serialize")
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig {
        model_path: cli.model,
        out_dir: cli.out,
        seed: cli.seed,
        apex: cli.apex,
        stance_duration: cli.stance_duration,
        dt: cli.dt,
        mu: cli.mu,
        gains_profile: cli.gains_profile,
        payload_kg: cli.payload_kg,
    };
    let default_trajectory = || cfg.out_path(TRAJECTORY_FILE);
    match cli.command {
        Command::Optimize { knee_cap } => print(cmd_optimize(&cfg, &OptimizeOptions { knee_cap })),
        Command::Simulate {
            duration,
            drop_height,
            pose,
        } => print(cmd_simulate(
            &cfg,
            &SimulateOptions {
                duration,
                drop_height,
                pose,
            },
        )),
        Command::Track {
            trajectory,
            no_clamp,
            battery_resistance,
            settle,
        } => {
            let opts = TrackOptions {
                clamp: !no_clamp,
                battery_resistance,
                settle,
                ..TrackOptions::new(trajectory.unwrap_or_else(default_trajectory))
            };
            print(cmd_track(&cfg, &opts))
        }
        Command::Tiptoe {
            shift,
            keep_heel,
            knee_backlash_deg,
            hold_duration,
        } => {
            let opts = TiptoeOptions {
                timings: TiptoeTimings {
                    shift_distance: shift,
                    release_heel: !keep_heel,
                    hold_duration,
                    ..TiptoeTimings::default()
                },
                knee_backlash: knee_backlash_deg.to_radians(),
            };
            print(cmd_tiptoe(&cfg, &opts))
        }
        Command::Identify { dyno } => print(cmd_identify(&cfg, &IdentifyOptions { dyno })),
        Command::Validate { trajectory } => print(cmd_validate(
            &cfg,
            &ValidateOptions {
                trajectory: trajectory.unwrap_or_else(default_trajectory),
            },
        )),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

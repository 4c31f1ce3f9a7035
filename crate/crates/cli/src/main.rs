use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybrid_locomotion::gait::{builtin_gaits, GaitPattern};
use hybrid_locomotion::planner::{PlanError, RobotState};
use hybrid_locomotion::qp::QpSolver;
use hybrid_locomotion::robot::TwistChange;
use hybrid_locomotion::scenario::{GaitSpec, Scenario, ScenarioError};
use hybrid_locomotion::sim::{run_episode, Mode};
use thiserror::Error;

#[derive(Parser)]
#[command(
    name = "hybrid-loco",
    version,
    about = "Wheeled-legged motion planning and simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in gaits with horizons and published solve times.
    Gaits,
    /// Plan wheels and base once from the initial state and write plan.csv.
    Plan(RunArgs),
    /// Run a closed-loop episode and write episode.csv, solves.csv and summary.json.
    Simulate(RunArgs),
    /// Print the effective scenario, after flag overrides, as JSON.
    DumpScenario(RunArgs),
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Scenario JSON file; defaults are used when absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Built-in gait name.
    #[arg(long)]
    gait: Option<String>,
    /// Reference forward velocity (m/s).
    #[arg(long, allow_hyphen_values = true)]
    vx: Option<f64>,
    /// Reference lateral velocity (m/s).
    #[arg(long, allow_hyphen_values = true)]
    vy: Option<f64>,
    /// Reference yaw rate (rad/s).
    #[arg(long, allow_hyphen_values = true)]
    wz: Option<f64>,
    /// Episode duration (s).
    #[arg(long, allow_hyphen_values = true)]
    duration: Option<f64>,
    /// Seed for random pushes.
    #[arg(long)]
    seed: Option<u64>,
    /// Run planners in lockstep with simulated time.
    #[arg(long)]
    sync: bool,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Scenario(#[from] ScenarioError),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("planning failed: {0}")]
    Plan(#[from] PlanError),
    #[error("episode failed: {message}")]
    Episode { message: String, infeasible: bool },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Scenario(_) | CliError::Read { .. } => 4,
            CliError::Write { .. } => 1,
            CliError::Plan(e) if e.is_infeasible() => 2,
            CliError::Plan(e) if e.is_bad_input() => 4,
            CliError::Plan(_) => 3,
            CliError::Episode {
                infeasible: true, ..
            } => 2,
            CliError::Episode { .. } => 3,
        }
    }
}

fn load(args: &RunArgs) -> Result<Scenario, CliError> {
    let mut s = match &args.scenario {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Read {
                path: path.clone(),
                source,
            })?;
            Scenario::from_json(&text)?
        }
        None => Scenario::default(),
    };
    if let Some(g) = &args.gait {
        s.gait = GaitSpec::Named(g.clone());
    }
    if args.vx.is_some() || args.vy.is_some() || args.wz.is_some() {
        let first = s.velocity.first().copied().unwrap_or(TwistChange {
            time: 0.0,
            v_ref: [0.0; 2],
            omega_ref: 0.0,
        });
        s.velocity = vec![TwistChange {
            time: 0.0,
            v_ref: [
                args.vx.unwrap_or(first.v_ref[0]),
                args.vy.unwrap_or(first.v_ref[1]),
            ],
            omega_ref: args.wz.unwrap_or(first.omega_ref),
        }];
    }
    if let Some(d) = args.duration {
        s.duration = d;
    }
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if args.sync {
        s.mode = Mode::Synchronous;
    }
    s.validate()?;
    Ok(s)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(&path, contents))
        .map_err(|source| CliError::Write { path, source })
}

fn short_id(g: &GaitPattern) -> String {
    g.name
        .strip_prefix("hybrid ")
        .unwrap_or(&g.name)
        .replace(' ', "_")
}

fn gaits() {
    let ms = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v}"));
    for g in builtin_gaits() {
        let duty = 1.0 - (g.legs[0].swing_end - g.legs[0].swing_start);
        println!(
            "{}, t_f={}, id={}, duty={duty:.2}, wheel_ms={}, base_ms={}",
            g.name,
            g.stride_duration,
            short_id(&g),
            ms(g.reference_wheel_ms),
            ms(g.reference_base_ms)
        );
    }
}

fn plan(args: &RunArgs) -> Result<(), CliError> {
    let s = load(args)?;
    let planner = s.planner()?;
    let state = RobotState::standing(
        &planner.config.robot,
        &planner.plane,
        &planner.reference,
        0.0,
    );
    let full = planner.plan_all(&state, &mut QpSolver::new())?;
    write(
        &args.out,
        "plan.csv",
        &full.csv(&planner.config.robot, &planner.plane),
    )?;
    let cert = &full.base.certificate;
    println!(
        "planned {} over {} s: worst ZMP margin {:.4} m at t={:.3}, SQP iterations {}",
        planner.gait.name,
        planner.horizon(),
        cert.worst_margin,
        cert.worst_time,
        full.base.sqp_iterations
    );
    Ok(())
}

fn simulate(args: &RunArgs) -> Result<(), CliError> {
    let s = load(args)?;
    let log = run_episode(s.planner()?, s.sim_config(), s.all_disturbances())?;
    write(&args.out, "episode.csv", &log.episode_csv())?;
    write(&args.out, "solves.csv", &log.solves_csv())?;
    let summary = log.summary();
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write(&args.out, "summary.json", &json)?;
    println!("{json}");
    match log.solves.iter().find(|r| !r.ok) {
        Some(first) => Err(CliError::Episode {
            message: summary.first_failure.unwrap_or_default(),
            infeasible: first.infeasible,
        }),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Gaits => {
            gaits();
            Ok(())
        }
        Command::Plan(args) => plan(args),
        Command::Simulate(args) => simulate(args),
        Command::DumpScenario(args) => load(args).map(|s| println!("{}", s.to_json())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

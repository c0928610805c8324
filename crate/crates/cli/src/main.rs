use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use minco::gradcheck::GradcheckConfig;
use minco::scene::PrimitiveKind;
use minco_cli::{CliError, GenOptions, RunConfig, DEFAULT_SAMPLES, VIOLATION_TOL};

#[derive(Parser)]
#[command(name = "minco", version, about = "Corridor-constrained trajectory optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random corridor (or the narrow-gap scene) as JSON.
    GenCorridor {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value = "polytope", value_parser = parse_kind)]
        kind: PrimitiveKind,
        /// Keep the route in a horizontal plane.
        #[arg(long)]
        planar: bool,
        /// Emit the narrow-gap scene for this crossing angle (degrees).
        #[arg(long, conflicts_with_all = ["kind", "count", "planar"])]
        narrow_gap: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a run config with the scene's start and goal.
        #[arg(long)]
        config_out: Option<PathBuf>,
    },
    /// Check a corridor file; exits 1 when it is not plannable.
    Validate {
        corridor: PathBuf,
        #[arg(long, value_parser = parse_point)]
        start: Option<[f64; 3]>,
        #[arg(long, value_parser = parse_point)]
        goal: Option<[f64; 3]>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corridor planning with speed, acceleration and containment limits.
    Optimize(RunArgs),
    /// Attitude-aware planning with vehicle shape, thrust and body-rate limits.
    OptimizeSe3(RunArgs),
    /// Compare every analytic gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, hide = true)]
        inject: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time construction plus gradient propagation; CSV to stdout or --out.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "3,4")]
        orders: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a trajectory (or the trajectory in a run result) to CSV.
    Export {
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        /// Append thrust, body rate and attitude columns.
        #[arg(long)]
        se3: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Result JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sample CSV path; defaults to the result path with a .csv extension.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long)]
    pieces: Option<usize>,
    #[arg(long)]
    fixed_time: Option<f64>,
    #[arg(long)]
    kr: Option<f64>,
}

fn parse_kind(s: &str) -> Result<PrimitiveKind, String> {
    s.parse().map_err(|e: minco::Error| e.to_string())
}

fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> =
        s.split(',').map(|c| c.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected x,y,z".to_string())
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_optimize(args: RunArgs, se3: bool) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if args.pieces.is_some() {
        cfg.pieces = args.pieces;
    }
    if args.kr.is_some() {
        cfg.k_rho = args.kr;
        cfg.fixed_time = None;
    }
    if args.fixed_time.is_some() {
        cfg.fixed_time = args.fixed_time;
    }
    let out = args.out.or(cfg.out.clone());
    let samples = args.samples.or(cfg.samples.clone()).or_else(|| out.as_ref().map(|p| p.with_extension("csv")));
    let run = minco_cli::optimize(&cfg, se3)?;
    emit(out.as_deref(), &run.json)?;
    if let Some(path) = samples {
        emit(Some(&path), &run.csv)?;
    }
    if !run.result.converged {
        return Err(CliError::Check(format!("optimizer stopped with {}", run.result.termination)));
    }
    if let Some(v) = run.result.worst_violation().filter(|v| v.max > VIOLATION_TOL) {
        return Err(CliError::Check(format!("{} violated by {:e}", v.name, v.max)));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenCorridor { seed, count, kind, planar, narrow_gap, out, config_out } => {
            let (corridor, config) =
                minco_cli::gen_corridor(&GenOptions { seed, count, kind, planar, gap_angle: narrow_gap })?;
            emit(out.as_deref(), &corridor)?;
            if let Some(p) = config_out {
                emit(Some(&p), &config)?;
            }
            Ok(())
        }
        Command::Validate { corridor, start, goal, out } => {
            let report = minco_cli::validate(&minco_cli::read(&corridor)?, start, goal)?;
            emit(out.as_deref(), &(serde_json::to_string_pretty(&report).expect("serializable") + "\n"))?;
            if report.pass {
                Ok(())
            } else {
                Err(CliError::Check("corridor failed validation".into()))
            }
        }
        Command::Optimize(args) => run_optimize(args, false),
        Command::OptimizeSe3(args) => run_optimize(args, true),
        Command::Gradcheck { seed, scale, instances, inject, out } => {
            let (_, table) = minco_cli::gradcheck(&GradcheckConfig { seed, scale, instances, inject })?;
            emit(out.as_deref(), &table)
        }
        Command::Bench { sizes, orders, reps, out } => emit(out.as_deref(), &minco_cli::bench(&sizes, &orders, reps)?),
        Command::Export { input, samples, se3, out } => {
            let g = se3.then_some(minco::flatness::GRAVITY);
            emit(out.as_deref(), &minco_cli::export(&minco_cli::read(&input)?, samples, g)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", CliError::Input(e.to_string()).to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

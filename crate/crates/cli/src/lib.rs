//! Subcommands of the `minco` binary. Every command returns its output as
//! text so the binary only decides where it goes.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use minco::flatness::{flat_to_state, FlatSignal};
use minco::geometry::{validate_corridor, CorridorData, CorridorReport};
use minco::gradcheck::{self, GradcheckConfig, LayerReport};
use minco::minco::{construct, BoundaryCondition, Trajectory, TrajectoryData};
use minco::scene::{generate_corridor, narrow_gap, GapGeometry, GeneratorConfig, PrimitiveKind};
use minco::solver::{optimize_corridor, optimize_se3, CostBreakdown, OptimizeResult, Violation};

pub mod config;

pub use config::{CorridorSource, RunConfig, VehicleConfig};

/// Largest tolerated violation before `optimize` reports a check failure.
pub const VIOLATION_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Solver(minco::Error),
}

impl From<minco::Error> for CliError {
    fn from(e: minco::Error) -> Self {
        use minco::Error as E;
        match e {
            E::InvalidInput(m) => CliError::Input(m),
            e @ (E::DimensionMismatch { .. } | E::NonPositiveDuration { .. } | E::DegeneratePolytope) => {
                CliError::Input(e.to_string())
            }
            e => CliError::Solver(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) | CliError::Solver(_) => 1,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse(_) => "parse",
            CliError::Io(_) => "io",
            CliError::Input(_) => "input",
            CliError::Check(_) => "check",
            CliError::Solver(_) => "solver",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

pub struct GenOptions {
    pub seed: u64,
    pub count: usize,
    pub kind: PrimitiveKind,
    pub planar: bool,
    /// Build the narrow-gap scene for this angle instead of a random chain.
    pub gap_angle: Option<f64>,
}

/// Corridor JSON and a matching run config with the scene's start and goal.
pub fn gen_corridor(opts: &GenOptions) -> Result<(String, String), CliError> {
    if opts.count == 0 {
        return Err(CliError::Input("corridor needs at least one element".into()));
    }
    let scene = match opts.gap_angle {
        Some(angle) => {
            let width = minco::scene::gap_width_for_angle(angle)
                .ok_or_else(|| CliError::Input(format!("no gap width tabulated for {angle} deg")))?;
            narrow_gap(&GapGeometry::new(width))?
        }
        None => {
            let cfg = GeneratorConfig { count: opts.count, kind: opts.kind, planar: opts.planar, ..Default::default() };
            generate_corridor(opts.seed, &cfg)?
        }
    };
    let mut run = RunConfig::inline(&scene.corridor);
    run.start = Some(scene.start.into());
    run.goal = Some(scene.goal.into());
    if opts.gap_angle.is_some() {
        run.pieces = Some(2);
    }
    Ok((to_json(&scene.corridor.to_data()), to_json(&run)))
}

pub fn validate(corridor: &str, start: Option<[f64; 3]>, goal: Option<[f64; 3]>) -> Result<CorridorReport, CliError> {
    let data: CorridorData = parse(corridor)?;
    let mut cfg = RunConfig::inline(&minco::geometry::Corridor::try_from(data)?);
    cfg.start = start;
    cfg.goal = goal;
    let spec = cfg.problem(false)?;
    let pos = |bc: &BoundaryCondition| nalgebra::DVector::from_vec(bc.position());
    Ok(validate_corridor(&spec.corridor, &pos(&spec.start), &pos(&spec.goal)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub converged: bool,
    pub termination: String,
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_inf: f64,
    pub wall_time: f64,
    pub cost: CostBreakdown,
    pub violations: Vec<Violation>,
    pub total_duration: f64,
    pub trajectory: TrajectoryData,
}

impl RunResult {
    fn new(r: &OptimizeResult) -> Self {
        Self {
            converged: r.converged(),
            termination: format!("{:?}", r.termination),
            iterations: r.iterations,
            evaluations: r.evaluations,
            grad_inf: r.grad_inf,
            wall_time: r.wall_time,
            cost: r.cost,
            violations: r.violations.clone(),
            total_duration: r.total_duration(),
            trajectory: r.trajectory.to_data(),
        }
    }

    pub fn worst_violation(&self) -> Option<&Violation> {
        self.violations.iter().max_by(|a, b| a.max.total_cmp(&b.max))
    }
}

pub struct RunOutput {
    pub result: RunResult,
    pub json: String,
    pub csv: String,
}

pub fn optimize(cfg: &RunConfig, se3: bool) -> Result<RunOutput, CliError> {
    let spec = cfg.problem(se3)?;
    let res = if se3 { optimize_se3(&spec)? } else { optimize_corridor(&spec)? };
    let result = RunResult::new(&res);
    let csv = samples_csv(&res.trajectory, DEFAULT_SAMPLES, se3.then_some(spec.gravity))?;
    Ok(RunOutput { json: to_json(&result), csv, result })
}

/// Samples per trajectory: `dt = T / DEFAULT_SAMPLES`.
pub const DEFAULT_SAMPLES: usize = 1000;

/// Uniformly sampled derivatives, with the attitude columns when `gravity`
/// is given.
pub fn samples_csv(traj: &Trajectory, samples: usize, gravity: Option<f64>) -> Result<String, CliError> {
    if samples == 0 {
        return Err(CliError::Input("need at least one sample interval".into()));
    }
    let mut out = String::from("t,px,py,pz,vx,vy,vz,ax,ay,az,jx,jy,jz");
    if gravity.is_some() {
        out.push_str(",f_spec,wx,wy,wz,r11,r12,r13,r21,r22,r23,r31,r32,r33");
    }
    out.push('\n');
    let total = traj.total_duration();
    for k in 0..=samples {
        let t = if k == samples { total } else { total * k as f64 / samples as f64 };
        let d: Vec<Vec<f64>> = (0..4).map(|o| traj.evaluate(t, o)).collect::<Result<_, _>>()?;
        let mut row = vec![t];
        for v in &d {
            row.extend_from_slice(v);
        }
        if let Some(g) = gravity {
            let v3 = |v: &[f64]| Vector3::new(v[0], v[1], v[2]);
            let sig = FlatSignal { p: v3(&d[0]), v: v3(&d[1]), a: v3(&d[2]), j: v3(&d[3]) };
            let st = flat_to_state(&sig, g)?;
            row.push(st.f_spec);
            row.extend(st.omega.iter());
            for i in 0..3 {
                for j in 0..3 {
                    row.push(st.rotation[(i, j)]);
                }
            }
        }
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(",")).expect("string write");
    }
    Ok(out)
}

/// Trajectory JSON, or a run result carrying one, to sample CSV.
pub fn export(input: &str, samples: usize, gravity: Option<f64>) -> Result<String, CliError> {
    let value: serde_json::Value = parse(input)?;
    let data = value.get("trajectory").cloned().unwrap_or(value);
    let data: TrajectoryData = serde_json::from_value(data).map_err(|e| CliError::Parse(e.to_string()))?;
    let traj = Trajectory::try_from(data)?;
    if gravity.is_some() && traj.dim() != 3 {
        return Err(CliError::Input("attitude columns need a 3-D trajectory".into()));
    }
    samples_csv(&traj, samples, gravity)
}

pub fn gradcheck(cfg: &GradcheckConfig) -> Result<(Vec<LayerReport>, String), CliError> {
    let reports = gradcheck::run(cfg)?;
    let mut table = String::from("layer,instances,worst,pass\n");
    for r in &reports {
        writeln!(table, "{},{},{:e},{}", r.layer, r.instances, r.worst, r.pass).expect("string write");
    }
    let failing: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.layer.as_str()).collect();
    if !failing.is_empty() {
        return Err(CliError::Check(format!("gradient check failed for {} ({table})", failing.join(", "))));
    }
    Ok((reports, table))
}

/// Best-of-`reps` construct plus gradient propagation time for each pair.
pub fn bench(sizes: &[usize], orders: &[usize], reps: usize) -> Result<String, CliError> {
    if sizes.iter().any(|&m| m < 1) || orders.iter().any(|&s| s < 1) || reps == 0 {
        return Err(CliError::Input("sizes, orders and reps must be positive".into()));
    }
    let mut out = String::from("s,m,seconds\n");
    for &s in orders {
        for &m in sizes {
            // Deterministic inputs: a zigzag route with varying durations.
            let q = DMatrix::from_fn(3, m - 1, |r, c| ((c * 7 + r * 3) % 11) as f64 - 5.0);
            let t: Vec<f64> = (0..m).map(|i| 0.5 + ((i * 13) % 17) as f64 / 10.0).collect();
            let bc0 = BoundaryCondition::rest(&[0.0; 3], s);
            let bcf = BoundaryCondition::rest(&[1.0; 3], s);
            let mut best = f64::INFINITY;
            for _ in 0..reps {
                let clock = Instant::now();
                let traj = construct(&q, &t, &bc0, &bcf, s)?;
                let e = traj.control_effort(&[1.0; 3])?;
                std::hint::black_box(traj.propagate_gradient(&e.d_coeffs, &e.d_durations)?);
                best = best.min(clock.elapsed().as_secs_f64());
            }
            writeln!(out, "{s},{m},{best:e}").expect("string write");
        }
    }
    Ok(out)
}

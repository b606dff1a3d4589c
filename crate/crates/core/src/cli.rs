//! Command-line front end.
//!
//! Exit codes: 0 success or pass, 1 usage/IO/schema error, 2 verification
//! failure or non-convergence, 3 infeasible input.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::abreu::{self, AbreuError, CurvatureSpec, FieldSummary, Mode};
use crate::estimates::{self, DetLowerReport, EstimateError};
use crate::legendre::{self, LegendreError, XBox, XGrid};
use crate::polytope::{DelzantPolytope, PolytopeError, Violation};
use crate::potential::{PotentialError, PotentialSpec, SymplecticPotential};
use crate::report::{self, format_number, summary_line, to_canonical_json};
use crate::solver::{self, BandSource, SolveConfig, SolveError, SolveResult, StepSummary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAIL: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: schema error at `{at}`: {message}")]
    Schema { path: PathBuf, at: String, message: String },
    #[error("{0}")]
    Failed(String),
    #[error("{0}")]
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } | CliError::Schema { .. } => EXIT_USAGE,
            CliError::Failed(_) => EXIT_FAIL,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
        }
    }
}

impl From<PolytopeError> for CliError {
    fn from(e: PolytopeError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<PotentialError> for CliError {
    fn from(e: PotentialError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<AbreuError> for CliError {
    fn from(e: AbreuError) -> Self {
        match e {
            AbreuError::Singular { .. } => CliError::Failed(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<LegendreError> for CliError {
    fn from(e: LegendreError) -> Self {
        match e {
            LegendreError::NewtonFailure { .. } | LegendreError::NonConvex { .. } => CliError::Failed(e.to_string()),
            LegendreError::Potential(p) => p.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::Abreu(a) => a.into(),
            EstimateError::Legendre(l) => l.into(),
            EstimateError::Polytope(p) => p.into(),
            EstimateError::NoStencil => CliError::Usage(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            SolveError::NonMetric { .. } | SolveError::BandStalled { .. } => CliError::Failed(e.to_string()),
            SolveError::Estimate(inner) => inner.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "abreu", about = "Toric Kähler geometry on Delzant polytopes", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate the Delzant conditions of a polytope.
    CheckDelzant {
        polytope: PathBuf,
        /// Write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the Abreu operator on an interior grid and write CSV.
    Curvature(CurvatureArgs),
    /// Legendre duals f, g and φ = f − g on an x-box, as CSV.
    Legendre(LegendreArgs),
    /// Determinant lower bound and determinant-ratio estimate, as JSON.
    VerifyBounds(BoundsArgs),
    /// Damped Gauss–Newton solve on an interior grid.
    Solve(SolveArgs),
    /// Exact solve on an interval.
    #[command(name = "solve-1d")]
    Solve1d(Solve1dArgs),
    /// Homotopy in K from the Guillemin curvature to the target.
    Continuation(SolveArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Analytic,
    Fd,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Analytic => Mode::Analytic,
            ModeArg::Fd => Mode::FiniteDifference,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BandArg {
    InitialGuess,
    Zero,
}

#[derive(Debug, Args)]
struct PotentialArgs {
    #[arg(long)]
    polytope: PathBuf,
    #[arg(long)]
    potential: PathBuf,
}

#[derive(Debug, Args)]
struct CurvatureArgs {
    #[command(flatten)]
    input: PotentialArgs,
    #[arg(long)]
    h: f64,
    #[arg(long)]
    margin: f64,
    #[arg(long, value_enum, default_value = "analytic")]
    mode: ModeArg,
    /// Target curvature; fills the K_target and residual columns.
    #[arg(long)]
    k: Option<PathBuf>,
    /// Class bound: exit 2 unless max |A(u)| ≤ b on the grid.
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LegendreArgs {
    #[command(flatten)]
    input: PotentialArgs,
    /// x-box JSON: {"center": [...], "half_width": w, "h": step}.
    #[arg(long = "box")]
    xbox: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[command(flatten)]
    input: PotentialArgs,
    #[arg(long = "box")]
    xbox: PathBuf,
    #[arg(long)]
    h: f64,
    #[arg(long)]
    margin: f64,
    #[arg(long, value_enum, default_value = "analytic")]
    mode: ModeArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long)]
    polytope: PathBuf,
    #[arg(long)]
    k: PathBuf,
    /// Base configuration JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Continuation steps; `solve` with this flag runs the homotopy.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    band: Option<BandArg>,
    /// Initial ψ as a JSON array of nodal values on the solve grid.
    #[arg(long)]
    psi0: Option<PathBuf>,
    /// SolveResult JSON; ψ goes to the sidecar `<stem>.psi.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Solve1dArgs {
    #[arg(long)]
    k: PathBuf,
    /// Interval polytope; (0, 1) when absent.
    #[arg(long)]
    polytope: Option<PathBuf>,
    /// Sample spacing of the sidecar CSV.
    #[arg(long, default_value_t = 1.0 / 64.0)]
    h: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Parses JSON against `T`, reporting the path of the offending field.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Schema {
        path: path.to_path_buf(),
        at: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json_text<T: Serialize>(value: &T) -> Result<String, CliError> {
    to_canonical_json(value).map_err(|e| CliError::Failed(format!("serialization: {e}")))
}

fn load_potential(args: &PotentialArgs) -> Result<SymplecticPotential, CliError> {
    let polytope = Arc::new(load::<DelzantPolytope>(&args.polytope)?);
    Ok(load::<PotentialSpec>(&args.potential)?.build(polytope)?)
}

fn describe(v: &Violation) -> String {
    let point = |p: &[f64]| p.iter().map(|&x| format_number(x)).collect::<Vec<_>>().join(", ");
    match v {
        Violation::NonPrimitiveNormal { facet, gcd } => format!("facet {facet}: normal not primitive (gcd {gcd})"),
        Violation::NonSimpleVertex { vertex, active_facets } => {
            format!("vertex ({}): not simple, {} facets meet", point(vertex), active_facets.len())
        }
        Violation::NonUnimodularVertex { vertex, determinant, .. } => {
            format!("vertex ({}): |edge determinant| = {}", point(vertex), determinant.abs())
        }
    }
}

fn check_delzant(polytope: &Path, out: Option<&Path>) -> Result<i32, CliError> {
    let p: DelzantPolytope = load(polytope)?;
    let report = p.validate_delzant()?;
    if let Some(out) = out {
        write(out, &json_text(&report)?)?;
    }
    if report.pass {
        println!("delzant: pass");
        return Ok(EXIT_OK);
    }
    println!("delzant: fail");
    for v in &report.violations {
        println!("  {}", describe(v));
    }
    Ok(EXIT_FAIL)
}

fn curvature(args: &CurvatureArgs) -> Result<i32, CliError> {
    let u = load_potential(&args.input)?;
    let grid = u.polytope().interior_grid(args.h, args.margin)?;
    let mut result = abreu::abreu_operator(&u, &grid, args.mode.into())?;
    let mut summary = json!({
        "mode": result.mode,
        "h": result.h,
        "nodes": result.nodes.len(),
        "flagged": result.flagged_count(),
        "operator": result.operator_summary(),
    });
    if let Some(k) = &args.k {
        let spec: CurvatureSpec = load(k)?;
        spec.check_dim(u.dim())?;
        result = result.with_target(&spec);
        summary["residual"] = serde_json::to_value(result.residual_summary()).expect("plain data");
    }
    let mut code = EXIT_OK;
    if let Some(b) = args.b {
        let member = abreu::membership(&result, b);
        if !member.pass {
            code = EXIT_FAIL;
        }
        summary["membership"] = serde_json::to_value(member).expect("plain data");
    }
    emit(args.out.as_deref(), &report::curvature_csv(&result))?;
    if args.out.is_some() {
        print!("{}", json_text(&summary)?);
    }
    Ok(code)
}

fn x_grid(path: &Path) -> Result<XGrid, CliError> {
    Ok(XGrid::new(load::<XBox>(path)?)?)
}

fn legendre_cmd(args: &LegendreArgs) -> Result<i32, CliError> {
    let u = load_potential(&args.input)?;
    let grid = x_grid(&args.xbox)?;
    let nodes = legendre::phi_field(&u, &grid)?;
    emit(args.out.as_deref(), &report::legendre_csv(&nodes))?;
    if args.out.is_some() {
        let (lo, hi) = nodes
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| (lo.min(n.phi), hi.max(n.phi)));
        println!("{}", summary_line("legendre", &[("nodes", nodes.len() as f64), ("min_phi", lo), ("max_phi", hi)]));
    }
    Ok(EXIT_OK)
}

fn verify_bounds(args: &BoundsArgs) -> Result<i32, CliError> {
    let u = load_potential(&args.input)?;
    let xs = x_grid(&args.xbox)?;
    let xi = u.polytope().interior_grid(args.h, args.margin)?;
    let report = estimates::verify_prop31(&u, &xs, &xi, args.mode.into())?;
    emit(args.out.as_deref(), &json_text(&report)?)?;
    let pass = report.pass_lemma32 && report.pass_prop31;
    if args.out.is_some() {
        println!(
            "verify-bounds: {} lemma32={} prop31={} H_max={} rhs_33={}",
            if pass { "pass" } else { "fail" },
            report.pass_lemma32,
            report.pass_prop31,
            format_number(report.h_max),
            format_number(report.rhs_33)
        );
    }
    Ok(if pass { EXIT_OK } else { EXIT_FAIL })
}

fn solve_config(args: &SolveArgs) -> Result<SolveConfig, CliError> {
    let mut config = match &args.config {
        Some(p) => load::<SolveConfig>(p)?,
        None => SolveConfig::default(),
    };
    if let Some(h) = args.h {
        config.h = h;
    }
    if let Some(m) = args.margin {
        config.margin = m;
    }
    if let Some(t) = args.tol {
        config.tol = t;
    }
    if let Some(n) = args.max_iter {
        config.max_iter = n;
    }
    match args.band {
        Some(BandArg::Zero) => config.band = BandSource::Zero,
        Some(BandArg::InitialGuess) => config.band = BandSource::InitialGuess,
        None => {}
    }
    config.validate()?;
    Ok(config)
}

#[derive(Serialize)]
struct SolveReport<'a> {
    converged: bool,
    iterations: usize,
    tol: f64,
    max_residual: f64,
    history: &'a [f64],
    objective: &'a [f64],
    stages: &'a [solver::StageSummary],
    h: f64,
    margin: f64,
    nodes: usize,
    free_nodes: usize,
    gauge_point: Vec<f64>,
    residual: FieldSummary,
    det_check: Option<DetLowerReport>,
    steps: Option<&'a [StepSummary]>,
    aborted_at: Option<usize>,
    psi_csv: String,
}

fn sidecar(out: &Path) -> PathBuf {
    out.with_extension("psi.csv")
}

fn write_solve(
    out: &Path,
    result: &SolveResult,
    steps: Option<&[StepSummary]>,
    aborted_at: Option<usize>,
) -> Result<(), CliError> {
    let csv_path = sidecar(out);
    let curvature = result.curvature()?;
    let det_check = if result.converged { result.det_check().ok() } else { None };
    let grid = &result.grid;
    let report = SolveReport {
        converged: result.converged,
        iterations: result.iterations,
        tol: result.tol,
        max_residual: result.max_residual(),
        history: &result.history,
        objective: &result.objective,
        stages: &result.stages,
        h: grid.h(),
        margin: grid.margin(),
        nodes: grid.len(),
        free_nodes: result.free.iter().filter(|&&f| f).count(),
        gauge_point: grid.node(result.gauge_node).iter().copied().collect(),
        residual: curvature.residual_summary(),
        det_check,
        steps,
        aborted_at,
        psi_csv: csv_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    write(out, &json_text(&report)?)?;
    write(&csv_path, &report::grid_field_csv(grid, &result.psi, &result.free))
}

fn solve(args: &SolveArgs, force_continuation: bool) -> Result<i32, CliError> {
    let polytope = Arc::new(load::<DelzantPolytope>(&args.polytope)?);
    let k: CurvatureSpec = load(&args.k)?;
    let config = solve_config(args)?;
    let psi0: Option<Vec<f64>> = args.psi0.as_deref().map(load).transpose()?;
    let steps = match (args.steps, force_continuation) {
        (Some(s), _) => Some(s),
        (None, true) => return Err(CliError::Usage("continuation needs --steps".into())),
        (None, false) => None,
    };
    let (result, summaries, aborted_at) = match steps {
        Some(s) => {
            let c = solver::continuation(polytope, &k, s, &config, psi0.as_deref())?;
            (c.result, Some(c.steps), c.aborted_at)
        }
        None => (solver::solve_nd(polytope, &k, &config, psi0.as_deref())?, None, None),
    };
    write_solve(&args.out, &result, summaries.as_deref(), aborted_at)?;
    let ok = result.converged && aborted_at.is_none();
    println!(
        "{}",
        summary_line(
            if ok { "solve: converged" } else { "solve: not converged" },
            &[("iterations", result.iterations as f64), ("max_residual", result.max_residual())]
        )
    );
    Ok(if ok { EXIT_OK } else { EXIT_FAIL })
}

fn solve_1d_cmd(args: &Solve1dArgs) -> Result<i32, CliError> {
    let polytope = match &args.polytope {
        Some(p) => Arc::new(load::<DelzantPolytope>(p)?),
        None => Arc::new(DelzantPolytope::interval(0.0, 1.0)),
    };
    let k: CurvatureSpec = load(&args.k)?;
    let s = match solver::solve_1d(&k, Arc::clone(&polytope)) {
        Ok(s) => s,
        Err(SolveError::Infeasible { residuals }) => {
            let certificate = json!({
                "feasible": false,
                "residuals": residuals,
                "constraints": ["integral K - 2", "integral (xi - alpha) K - (beta - alpha)"],
            });
            emit(args.out.as_deref(), &json_text(&certificate)?)?;
            eprintln!(
                "solve-1d: infeasible, constraint residuals ({}, {})",
                format_number(residuals[0]),
                format_number(residuals[1])
            );
            return Ok(EXIT_INFEASIBLE);
        }
        Err(e) => return Err(e.into()),
    };
    let grid = polytope.interior_grid(args.h, args.h)?;
    let psi = s.psi_on(&grid)?;
    let samples: Vec<(f64, f64, f64)> = grid
        .nodes()
        .iter()
        .zip(&psi)
        .map(|(x, &p)| (x[0], p, s.w_at(x[0])))
        .collect();
    let mid = 0.5 * (s.alpha + s.beta);
    let mut body: Value = json!({
        "feasible": true,
        "alpha": s.alpha,
        "beta": s.beta,
        "residuals": s.residuals,
        "w_coefficients": s.w,
        "w_mid": s.w_at(mid),
    });
    match &args.out {
        Some(out) => {
            let csv_path = out.with_extension("psi.csv");
            body["psi_csv"] = json!(csv_path.file_name().map(|f| f.to_string_lossy().into_owned()));
            write(out, &json_text(&body)?)?;
            write(&csv_path, &report::profile_csv(&samples))?;
            println!("{}", summary_line("solve-1d: feasible", &[("w_mid", s.w_at(mid))]));
        }
        None => print!("{}", json_text(&body)?),
    }
    Ok(EXIT_OK)
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::CheckDelzant { polytope, out } => check_delzant(polytope, out.as_deref()),
        Command::Curvature(a) => curvature(a),
        Command::Legendre(a) => legendre_cmd(a),
        Command::VerifyBounds(a) => verify_bounds(a),
        Command::Solve(a) => solve(a, false),
        Command::Solve1d(a) => solve_1d_cmd(a),
        Command::Continuation(a) => solve(a, true),
    }
}

/// Worker count from `ABREU_THREADS`; `0` or unset means automatic.
fn thread_count() -> Result<usize, CliError> {
    match std::env::var("ABREU_THREADS") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("ABREU_THREADS must be a non-negative integer, got {s:?}"))),
        Err(_) => Ok(0),
    }
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = thread_count().and_then(|threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
        pool.install(|| dispatch(cli))
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

//! Command-line front end for the `bifactor` binary.
//!
//! Exit codes: 0 on success, 2 for input and specification errors, 3 when
//! every random start fails, 1 otherwise. Errors are written to stderr as a
//! JSON object `{"error": kind, "message": text}`.

mod ingest;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::alm::{multi_start_fit, AlmConfig, FitResult};
use crate::diagnostics::{check_conditions, Tolerances};
use crate::error::{Error, Result};
use crate::model::{bifactor_constraint_pairs, hierarchy_constraint_pairs, SampleCov};
use crate::selection::{bic_bifactor, select_g};
use crate::simlab::{run_study, BlockBoundary, StudyKind, StudySpec};

pub use ingest::{ingest, parse_hierarchy, read_hierarchy, read_matrix, read_structure, InputKind};

/// Environment variable limiting the worker thread count.
pub const THREADS_ENV: &str = "BIFACTOR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "bifactor", version, about = "Exploratory bi-factor and hierarchical factor analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model with a fixed number of group factors or a given hierarchy.
    Fit(FitArgs),
    /// Choose the number of group factors by BIC.
    SelectG(SelectArgs),
    /// Run a replicated simulation study.
    Simulate(SimulateArgs),
    /// Check identifiability conditions for a loading matrix.
    CheckId(CheckIdArgs),
}

#[derive(Debug, Args, Clone)]
pub struct AlmArgs {
    /// Number of random starts.
    #[arg(long, default_value_t = 50)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parameter-change tolerance.
    #[arg(long, default_value_t = 1e-2)]
    pub delta1: f64,
    /// Structure tolerance.
    #[arg(long, default_value_t = 1e-2)]
    pub delta2: f64,
    /// Outer iteration cap.
    #[arg(long, default_value_t = 1000)]
    pub tmax: usize,
}

impl AlmArgs {
    pub fn config(&self) -> AlmConfig {
        AlmConfig {
            n_starts: self.starts,
            seed: self.seed,
            delta1: self.delta1,
            delta2: self.delta2,
            t_max: self.tmax,
            ..AlmConfig::default()
        }
    }
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = InputKind::Raw)]
    pub kind: InputKind,
    /// Sample size; required for covariance input.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of group factors.
    #[arg(long, conflicts_with = "hierarchy", required_unless_present = "hierarchy")]
    pub groups: Option<usize>,
    /// File of `child parent` lines describing a factor hierarchy.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    #[command(flatten)]
    pub alm: AlmArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub gmin: usize,
    #[arg(long)]
    pub gmax: usize,
    #[command(flatten)]
    pub alm: AlmArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub study: StudyKindArg,
    #[arg(long)]
    pub j: usize,
    /// Number of group factors (ignored for `hier`).
    #[arg(long, default_value_t = 0)]
    pub g: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Candidate `G` values for study2, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<usize>>,
    /// Boundary convention for the hierarchical blocks.
    #[arg(long, value_enum, default_value_t = BoundaryArg::Disjoint)]
    pub boundary: BoundaryArg,
    #[arg(long = "out-format", value_enum, default_value_t = OutFormat::Csv)]
    pub out_format: OutFormat,
    #[command(flatten)]
    pub alm: AlmArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyKindArg {
    Study1,
    Study2,
    Hier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoundaryArg {
    Inclusive,
    Disjoint,
}

#[derive(Debug, Args)]
pub struct CheckIdArgs {
    /// Loading matrix CSV, items by (1 + G) columns.
    #[arg(long)]
    pub lambda: PathBuf,
    /// `item,group` CSV with 1-based items and groups.
    #[arg(long)]
    pub structure: PathBuf,
    /// Optional factor correlation matrix CSV.
    #[arg(long)]
    pub phi: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    pub zero_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub rank_tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::AllStartsFailed { .. } => 3,
        Error::NonNumericCell { .. }
        | Error::AsymmetricMatrix(_)
        | Error::NotPositiveDefinite
        | Error::MissingN
        | Error::InvalidArgument(_)
        | Error::MalformedTree(_)
        | Error::StructureMismatch { .. }
        | Error::DimensionMismatch { .. }
        | Error::Io(_) => 2,
        _ => 1,
    }
}

pub fn error_json(e: &Error) -> Value {
    json!({ "error": e.kind(), "message": e.to_string() })
}

/// Row-major matrix with explicit dimensions.
pub fn matrix_json(m: &DMatrix<f64>) -> Value {
    let data: Vec<f64> = m.transpose().iter().copied().collect();
    json!({ "rows": m.nrows(), "cols": m.ncols(), "data": data })
}

/// Inverse of [`matrix_json`].
pub fn matrix_from_json(v: &Value) -> Option<DMatrix<f64>> {
    let rows = v.get("rows")?.as_u64()? as usize;
    let cols = v.get("cols")?.as_u64()? as usize;
    let data: Vec<f64> = v.get("data")?.as_array()?.iter().map(Value::as_f64).collect::<Option<_>>()?;
    (data.len() == rows * cols).then(|| DMatrix::from_row_slice(rows, cols, &data))
}

fn fit_json(fit: &FitResult, bic: Option<f64>) -> Value {
    json!({
        "lambda": matrix_json(&fit.params.lambda),
        "phi": matrix_json(fit.phi.as_matrix()),
        "psi": fit.params.psi.as_slice(),
        "gamma": fit.params.gamma.as_slice(),
        "structure": fit.structure.assignment,
        "exact": fit.structure.exact,
        "loss": fit.loss,
        "bic": bic,
        "converged": fit.converged,
        "iterations": fit.outer_iters,
        "restarts": fit.restarts_used,
        "starts_converged": fit.starts_converged,
        "max_second_largest": fit.max_second_largest,
        "param_change": fit.param_change,
    })
}

fn data_manifest(d: &DataArgs, data: &SampleCov) -> Value {
    json!({ "input": d.input, "kind": d.kind, "n": data.n(), "items": data.dim() })
}

fn manifest(subcommand: &str, fields: Value, config: &AlmConfig, out: &Option<PathBuf>, started: Instant) -> Value {
    json!({
        "subcommand": subcommand,
        "version": env!("CARGO_PKG_VERSION"),
        "arguments": fields,
        "config": config,
        "seed": config.seed,
        "out": out,
        "elapsed_seconds": started.elapsed().as_secs_f64(),
    })
}

fn cmd_fit(a: &FitArgs) -> Result<Value> {
    let started = Instant::now();
    let data = ingest(&a.data.input, a.data.kind, a.data.n)?;
    let config = a.alm.config();
    let (constraints, shape) = match (&a.hierarchy, a.groups) {
        (Some(path), _) => {
            let tree = read_hierarchy(path)?;
            let edges = tree.edges();
            (hierarchy_constraint_pairs(&tree), json!({ "hierarchy": path, "edges": edges }))
        }
        (None, Some(g)) => {
            if g == 0 {
                return Err(Error::InvalidArgument("--groups must be at least 1".into()));
            }
            (bifactor_constraint_pairs(g), json!({ "groups": g }))
        }
        (None, None) => return Err(Error::InvalidArgument("either --groups or --hierarchy is required".into())),
    };
    let fit = multi_start_fit(&data, &constraints, &config)?;
    let bic = a.groups.map(|g| bic_bifactor(fit.loss, g, data.n()));
    let mut out = fit_json(&fit, bic);
    let mut fields = data_manifest(&a.data, &data);
    merge(&mut fields, shape);
    out["manifest"] = manifest("fit", fields, &config, &a.out, started);
    Ok(out)
}

fn merge(a: &mut Value, b: Value) {
    if let (Some(a), Value::Object(b)) = (a.as_object_mut(), b) {
        a.extend(b);
    }
}

fn cmd_select_g(a: &SelectArgs) -> Result<Value> {
    let started = Instant::now();
    let data = ingest(&a.data.input, a.data.kind, a.data.n)?;
    if a.gmin == 0 || a.gmin > a.gmax {
        return Err(Error::InvalidArgument(format!("invalid candidate range {}..={}", a.gmin, a.gmax)));
    }
    let config = a.alm.config();
    let candidates: Vec<usize> = (a.gmin..=a.gmax).collect();
    let sweep = select_g(&data, &candidates, &config)?;
    let chosen = sweep.chosen_fit();
    let failures: Vec<Value> = sweep.failures.iter().map(|(g, m)| json!({ "groups": g, "message": m })).collect();
    let mut fields = data_manifest(&a.data, &data);
    merge(&mut fields, json!({ "gmin": a.gmin, "gmax": a.gmax }));
    Ok(json!({
        "candidates": sweep.candidates,
        "losses": sweep.losses,
        "bics": sweep.bics,
        "chosen": sweep.chosen,
        "failures": failures,
        "fit": fit_json(chosen, Some(bic_bifactor(chosen.loss, sweep.chosen, data.n()))),
        "manifest": manifest("select-g", fields, &config, &a.out, started),
    }))
}

fn study_spec(a: &SimulateArgs) -> StudySpec {
    StudySpec {
        kind: match a.study {
            StudyKindArg::Study1 => StudyKind::Study1,
            StudyKindArg::Study2 => StudyKind::Study2,
            StudyKindArg::Hier => StudyKind::Hier,
        },
        j: a.j,
        g: if a.study == StudyKindArg::Hier { 6 } else { a.g },
        n: a.n,
        candidates: a.candidates.clone(),
        boundary: match a.boundary {
            BoundaryArg::Inclusive => BlockBoundary::Inclusive,
            BoundaryArg::Disjoint => BlockBoundary::Disjoint,
        },
    }
}

/// Runs a study and renders the report. The report holds no timings, so
/// equal arguments give byte-identical output.
pub fn cmd_simulate(a: &SimulateArgs) -> Result<String> {
    let config = a.alm.config();
    let report = run_study(&study_spec(a), a.reps, a.alm.seed, &config)?;
    Ok(match a.out_format {
        OutFormat::Csv => report.to_csv(),
        OutFormat::Json => {
            let mut v = serde_json::to_value(&report).map_err(|e| Error::Io(e.to_string()))?;
            v["config"] = serde_json::to_value(&config).map_err(|e| Error::Io(e.to_string()))?;
            v["version"] = json!(env!("CARGO_PKG_VERSION"));
            pretty(&v)
        }
    })
}

fn cmd_check_id(a: &CheckIdArgs) -> Result<Value> {
    let lambda = read_matrix(&a.lambda)?;
    if lambda.ncols() < 2 {
        return Err(Error::InvalidArgument("loading matrix needs a general and at least one group column".into()));
    }
    let structure = read_structure(&a.structure, lambda.nrows(), lambda.ncols() - 1)?;
    let phi = a.phi.as_deref().map(read_matrix).transpose()?;
    let tol = Tolerances {
        zero_tol: a.zero_tol,
        rank_tol: a.rank_tol,
    };
    let r = check_conditions(&lambda, &structure, phi.as_ref(), &tol)?;
    let one_based: Vec<Vec<usize>> = r.q_sets.iter().map(|s| s.iter().map(|i| i + 1).collect()).collect();
    Ok(json!({
        "q_sets": one_based,
        "h_set": r.h_set,
        "condition2": r.condition2,
        "condition2_witness": r.condition2_witness,
        "condition3": r.condition3,
        "condition5": r.condition5,
        "condition5_conservative": r.condition5_conservative,
        "anderson_rubin_rows": r.anderson_rubin_rows,
        "tolerances": r.tolerances,
        "manifest": {
            "subcommand": "check-id",
            "version": env!("CARGO_PKG_VERSION"),
            "lambda": a.lambda,
            "structure": a.structure,
            "phi": a.phi,
            "out": a.out,
        },
    }))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

fn emit(text: &str, out: &Option<PathBuf>, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(path) => write_file(path, text),
        None => Ok(stdout.write_all(text.as_bytes())?),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    Ok(std::fs::write(path, text)?)
}

/// Executes a parsed command, writing results to `--out` or `stdout`.
pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => emit(&pretty(&cmd_fit(a)?), &a.out, stdout),
        Command::SelectG(a) => emit(&pretty(&cmd_select_g(a)?), &a.out, stdout),
        Command::Simulate(a) => {
            let started = Instant::now();
            let text = cmd_simulate(a)?;
            emit(&text, &a.out, stdout)?;
            eprintln!("simulate finished in {:.2}s", started.elapsed().as_secs_f64());
            Ok(())
        }
        Command::CheckId(a) => emit(&pretty(&cmd_check_id(a)?), &a.out, stdout),
    }
}

/// Parses `args`, runs the command and returns the exit code. Usage errors
/// are printed by clap.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(sink, "{}", e.render());
            return e.exit_code();
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", error_json(&e));
            exit_code(&e)
        }
    }
}

/// Applies [`THREADS_ENV`] to the global thread pool, if set.
pub fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

//! The `taem` command line.
//!
//! Every subcommand prints one JSON document on stdout that embeds an
//! [`ExperimentManifest`]; CSV outputs get a sibling `<file>.manifest.json`.
//! Validity warnings go to stderr and never change the exit code.
//!
//! Exit codes: 0 success, 2 usage, 3 validation or experiment failure, 4 I/O.
//! The worker-thread count is read from `TAEM_THREADS` (default: all cores).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::analysis::{build_transform, verify_yw, TransformOptions, YwParams};
use crate::error::Error;
use crate::noise::{Domain, SeededNormals};
use crate::problems::{get_problem, SdeProblem};
use crate::scheme::{
    empirical_moment, simulate_ensemble, simulate_path, validate_delta, LogBase, SchemeConfig,
    DEFAULT_MAX_STEPS,
};
use crate::stats::{estimate_cost, estimate_rate, InterceptShift, RatePlan};

pub const THREADS_ENV: &str = "TAEM_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "taem",
    version,
    about = "Tamed-adaptive Euler-Maruyama experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate independent paths and summarize Y_T and the step count.
    Simulate(SimulateArgs),
    /// Estimate the strong convergence rate from coupled fine/coarse paths.
    Rate(RateArgs),
    /// Estimate the cost exponent of the mean step count.
    Cost(CostArgs),
    /// Estimate E|Y_t|^p at given times.
    Moments(MomentsArgs),
    /// Numeric property checks.
    Check {
        #[command(subcommand)]
        what: CheckCommand,
    },
    /// Print a built-in problem's metadata.
    Describe {
        #[arg(long)]
        problem: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum CheckCommand {
    /// Yamada–Watanabe properties for one (delta, eps).
    Yw {
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Drift-control transform properties for a built-in problem.
    Transform {
        #[arg(long)]
        problem: String,
        #[arg(long, default_value_t = 4096)]
        grid: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SchemeArgs {
    #[arg(long)]
    pub problem: String,
    #[arg(long, default_value = "natural")]
    pub log_base: LogBase,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    pub max_steps: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub scheme: SchemeArgs,
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub t_end: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    /// Write the trajectory of path 0 as CSV.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub scheme: SchemeArgs,
    #[arg(long)]
    pub delta0: f64,
    #[arg(long)]
    pub levels: usize,
    /// One value for every level, or one per level.
    #[arg(long, value_delimiter = ',', required = true)]
    pub samples: Vec<usize>,
    #[arg(long)]
    pub t_end: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also fit at this horizon and report the intercept difference.
    #[arg(long)]
    pub compare_t_end: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CostArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub scheme: SchemeArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub deltas: Vec<f64>,
    #[arg(long)]
    pub samples: usize,
    #[arg(long)]
    pub t_end: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MomentsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub scheme: SchemeArgs,
    #[arg(long)]
    pub delta: f64,
    #[arg(long, default_value_t = 2)]
    pub order: u32,
    #[arg(long, value_delimiter = ',', required = true)]
    pub times: Vec<f64>,
    #[arg(long)]
    pub paths: usize,
    #[arg(long)]
    pub seed: u64,
}

/// Everything needed to rerun a command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub parameters: Value,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl ExperimentManifest {
    pub fn new(command: &str, parameters: impl Serialize) -> Self {
        Self {
            command: command.to_string(),
            parameters: serde_json::to_value(parameters).unwrap_or(Value::Null),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failed(Error),
    Io(PathBuf, std::io::Error),
    /// A check ran but reported failures; the report is still printed.
    ChecksFailed(Value),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownProblem { .. } | Error::InvalidConfig(_) => {
                CliError::Usage(e.to_string())
            }
            e => CliError::Failed(e),
        }
    }
}

type CliResult = std::result::Result<Value, CliError>;

struct Diagnostics<'a> {
    err: &'a mut dyn Write,
}

impl Diagnostics<'_> {
    fn warn(&mut self, msg: &str) {
        let _ = writeln!(self.err, "warning: {msg}");
    }
}

fn configure_threads(diag: &mut Diagnostics) {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return;
    };
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            // fails harmlessly if a global pool already exists
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
        _ => diag.warn(&format!(
            "ignoring {THREADS_ENV}={raw}: expected a positive integer"
        )),
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    EXIT_USAGE
                }
            };
        }
    };
    let mut diag = Diagnostics { err };
    configure_threads(&mut diag);
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, &mut diag),
        Command::Rate(a) => rate(a, &mut diag),
        Command::Cost(a) => cost(a, &mut diag),
        Command::Moments(a) => moments(a, &mut diag),
        Command::Check { what } => check(what),
        Command::Describe { problem } => describe(&problem),
    };
    let print = |out: &mut dyn Write, v: &Value| {
        let text = serde_json::to_string_pretty(v).expect("json values serialize");
        writeln!(out, "{text}")
    };
    match result {
        Ok(v) => match print(out, &v) {
            Ok(()) => EXIT_OK,
            Err(_) => EXIT_IO,
        },
        Err(CliError::ChecksFailed(v)) => {
            let _ = print(out, &v);
            let _ = writeln!(diag.err, "error: one or more checks failed");
            EXIT_FAILURE
        }
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(diag.err, "error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Failed(e)) => {
            let _ = writeln!(diag.err, "error: {e}");
            EXIT_FAILURE
        }
        Err(CliError::Io(path, e)) => {
            let _ = writeln!(diag.err, "error: {}: {e}", path.display());
            EXIT_IO
        }
    }
}

fn scheme_config(s: &SchemeArgs, delta: f64, t_end: f64) -> Result<SchemeConfig, CliError> {
    Ok(SchemeConfig::new(delta, t_end)?
        .with_log_base(s.log_base)
        .with_max_steps(s.max_steps))
}

fn warn_validity(
    problem: &SdeProblem,
    config: &SchemeConfig,
    diag: &mut Diagnostics,
) -> Vec<String> {
    let warnings = validate_delta(config, problem).warnings();
    for w in &warnings {
        diag.warn(w);
    }
    warnings
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Writes a CSV through `body` and its manifest next to it.
fn write_artifact<F>(path: &Path, manifest: &ExperimentManifest, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let io = |e| CliError::Io(path.to_path_buf(), e);
    let mut f = create(path)?;
    body(&mut f).and_then(|_| f.flush()).map_err(io)?;
    let mpath = manifest_path(path);
    let mut m = create(&mpath)?;
    serde_json::to_writer_pretty(&mut m, manifest)
        .map_err(std::io::Error::from)
        .and_then(|_| writeln!(m))
        .and_then(|_| m.flush())
        .map_err(|e| CliError::Io(mpath, e))
}

fn simulate(a: SimulateArgs, diag: &mut Diagnostics) -> CliResult {
    let problem = get_problem(&a.scheme.problem)?;
    let config = scheme_config(&a.scheme, a.delta, a.t_end)?;
    let warnings = warn_validity(&problem, &config, diag);
    let manifest = ExperimentManifest::new("simulate", &a);
    let summary = simulate_ensemble(&problem, &config, a.paths, a.seed)?;
    if let Some(path) = &a.record {
        // path 0 of the ensemble, replayed with recording on
        let mut noise = SeededNormals::new(a.seed, Domain::Paths, 0, 0);
        let outcome = simulate_path(&problem, &config.clone().recording(true), &mut noise)?;
        let traj = outcome.trajectory.expect("recording was requested");
        write_artifact(path, &manifest, |f| traj.write_csv(f))?;
    }
    Ok(json!({
        "y_end_mean": summary.y_end.mean,
        "y_end_stderr": summary.y_end.stderr,
        "n_steps_mean": summary.n_steps.mean,
        "delta": a.delta,
        "warnings": warnings,
        "manifest": manifest,
    }))
}

fn rate(a: RateArgs, diag: &mut Diagnostics) -> CliResult {
    let problem = get_problem(&a.scheme.problem)?;
    let samples = match a.samples.len() {
        1 => vec![a.samples[0]; a.levels],
        n if n == a.levels => a.samples.clone(),
        n => {
            return Err(CliError::Usage(format!(
                "--samples has {n} entries; give one or one per level ({})",
                a.levels
            )))
        }
    };
    let plan = RatePlan {
        delta0: a.delta0,
        samples,
        t_end: a.t_end,
        master_seed: a.seed,
    };
    let config = scheme_config(&a.scheme, a.delta0, a.t_end)?;
    let mut warnings = Vec::new();
    for k in 0..a.levels {
        let c = config.at_delta(plan.delta_coarse(k) / 2.0)?;
        warnings.extend(warn_validity(
            &problem,
            &config.at_delta(plan.delta_coarse(k))?,
            diag,
        ));
        warnings.extend(warn_validity(&problem, &c, diag));
    }
    warnings.dedup();
    let manifest = ExperimentManifest::new("rate", &a);
    let experiment = estimate_rate(&problem, &plan, &config)?;
    if let Some(path) = &a.out {
        write_artifact(path, &manifest, |f| experiment.write_csv(f))?;
    }
    let mut doc = json!({
        "problem": experiment.problem,
        "rate": experiment.rate(),
        "fit": experiment.fit,
        "theoretical_rate": problem.theoretical_rate(),
        "warnings": warnings,
        "manifest": manifest,
    });
    if let Some(t_b) = a.compare_t_end {
        let plan_b = RatePlan {
            t_end: t_b,
            ..plan.clone()
        };
        let other = estimate_rate(&problem, &plan_b, &config.at_horizon(t_b)?)?;
        if let Some(path) = &a.out {
            let mut name = path.as_os_str().to_owned();
            name.push(format!(".t{t_b}.csv"));
            write_artifact(Path::new(&name), &manifest, |f| other.write_csv(f))?;
        }
        let shift = InterceptShift::from_experiments(experiment, other);
        doc["intercept_shift"] = json!({
            "t_end_a": shift.t_end_a,
            "t_end_b": shift.t_end_b,
            "intercept_a": shift.intercept_a,
            "intercept_b": shift.intercept_b,
            "abs_difference": shift.abs_difference,
            "fit_b": shift.experiment_b.fit,
        });
    }
    Ok(doc)
}

fn cost(a: CostArgs, diag: &mut Diagnostics) -> CliResult {
    let problem = get_problem(&a.scheme.problem)?;
    let first = *a
        .deltas
        .first()
        .ok_or_else(|| CliError::Usage("--deltas is empty".into()))?;
    let config = scheme_config(&a.scheme, first, a.t_end)?;
    let mut warnings = Vec::new();
    for &d in &a.deltas {
        warnings.extend(warn_validity(&problem, &config.at_delta(d)?, diag));
    }
    let manifest = ExperimentManifest::new("cost", &a);
    let experiment = estimate_cost(&problem, &a.deltas, a.samples, a.t_end, a.seed, &config)?;
    if let Some(path) = &a.out {
        write_artifact(path, &manifest, |f| experiment.write_csv(f))?;
    }
    Ok(json!({
        "problem": experiment.problem,
        "exponent": experiment.exponent(),
        "fit": experiment.fit,
        "theoretical_exponent": problem.theoretical_cost_exponent(),
        "per_delta": experiment.per_delta,
        "warnings": warnings,
        "manifest": manifest,
    }))
}

fn moments(a: MomentsArgs, diag: &mut Diagnostics) -> CliResult {
    let problem = get_problem(&a.scheme.problem)?;
    let horizon = a.times.iter().copied().fold(0.0, f64::max);
    let config = scheme_config(
        &a.scheme,
        a.delta,
        if horizon > 0.0 { horizon } else { 1.0 },
    )?;
    let warnings = warn_validity(&problem, &config, diag);
    let manifest = ExperimentManifest::new("moments", &a);
    let est = empirical_moment(&problem, &config, a.order, a.paths, &a.times, a.seed)?;
    Ok(json!({
        "problem": problem.name,
        "order": est.order,
        "times": est.times,
        "estimates": est.estimates,
        "warnings": warnings,
        "manifest": manifest,
    }))
}

fn check(what: CheckCommand) -> CliResult {
    let (passed, doc) = match what {
        CheckCommand::Yw {
            delta,
            eps,
            samples,
        } => {
            let params = YwParams::new(delta, eps)?;
            let report = verify_yw(&params, samples)?;
            let manifest = ExperimentManifest::new(
                "check yw",
                json!({ "delta": delta, "eps": eps, "samples": samples }),
            );
            (
                report.passed(),
                json!({ "report": report, "passed": report.passed(), "manifest": manifest }),
            )
        }
        CheckCommand::Transform { problem, grid, tol } => {
            let p = get_problem(&problem)?;
            let options = TransformOptions {
                grid_resolution: grid,
                quad_tolerance: tol,
                ..TransformOptions::default()
            };
            let report = build_transform(&p, options)?.report()?;
            let manifest = ExperimentManifest::new(
                "check transform",
                json!({ "problem": problem, "grid": grid, "tol": tol }),
            );
            (
                report.passed(),
                json!({ "report": report, "passed": report.passed(), "manifest": manifest }),
            )
        }
    };
    if passed {
        Ok(doc)
    } else {
        Err(CliError::ChecksFailed(doc))
    }
}

fn describe(name: &str) -> CliResult {
    let p = get_problem(name)?;
    Ok(json!({
        "problem": p.describe(),
        "manifest": ExperimentManifest::new("describe", json!({ "problem": name })),
    }))
}

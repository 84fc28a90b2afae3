//! Command-line front end. Every command reads a JSON config, writes its
//! reports into the output directory and returns a process exit code.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use qlc_core::chaining::{max_local_entropy, nu1_estimate, EntropyReport, HFieldSpec, RandomFieldSpec};
use qlc_core::glm::{fit_qmle, FitResult, GlmModel};
use qlc_core::io::{load_csv, DataSummary};
use qlc_core::mc::{self, ModelKind, PenaltyConfig, SimConfig};
use qlc_core::single_index::{si_fit, LinkFunction, SiFitResult, SiModel};
use qlc_core::{EfcFamily, GridDomain, OptimOptions, ParamBox, QlcError, VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "qlc", version, about = "Quasi-likelihood concentration toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// CSV data file (design columns, then the response).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Output directory for reports.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Override the master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the number of replications.
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    /// Override the rho grid with a single value.
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    /// Override eps of a kappa penalty.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// Worker threads.
    #[arg(long, global = true, env = "QLC_THREADS")]
    pub threads: Option<usize>,
    /// Also write per-replication records as CSV.
    #[arg(long, global = true)]
    pub reps_csv: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Fit the quasi-MLE to a data set.
    Fit,
    /// Compute the target parameter of a scenario.
    Target,
    /// Tabulate the rate function of a scenario on its grid.
    Rate,
    /// Bound constants and bound curves of a scenario.
    Bounds,
    /// Local entropy of a random-field spec.
    Entropy,
    /// Run the Monte Carlo experiment of a scenario.
    Simulate,
    /// Simulate and check every bound; exit 1 on a violation.
    Verify,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Core(QlcError),
}

impl From<QlcError> for CliError {
    fn from(e: QlcError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) if e.is_input_error() => EXIT_CONFIG,
            CliError::Core(_) => EXIT_NUMERIC,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let (kind, message) = match self {
            CliError::Config(m) => ("config", m.clone()),
            CliError::Core(e) => (e.kind(), e.to_string()),
        };
        serde_json::json!({ "error": kind, "message": message, "exit_code": self.exit_code() })
    }
}

fn default_mu() -> f64 {
    1.0
}

/// Config of the `fit` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub model: ModelKind,
    pub family: EfcFamily,
    #[serde(default)]
    pub link: Option<LinkFunction>,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default)]
    pub theta_box: Option<ParamBox>,
    #[serde(default)]
    pub init: Option<Vec<f64>>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
}

/// Config of the `entropy` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyConfig {
    pub domain: GridDomain,
    pub h: HFieldSpec,
    pub eps: Vec<f64>,
    #[serde(default)]
    pub centers: Option<Vec<usize>>,
    #[serde(default)]
    pub panels: Option<usize>,
}

#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    version: &'a str,
    command: &'a str,
    config: &'a C,
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<DataSummary>,
    report: R,
}

#[derive(Serialize)]
#[serde(untagged)]
enum FitReport {
    Glm(FitResult),
    SingleIndex(SiFitResult),
}

#[derive(Serialize)]
struct EntropyRow {
    eps: f64,
    nu1: f64,
    entropy: EntropyReport,
}

fn read_config<T: for<'de> Deserialize<'de>>(path: Option<&Path>) -> Result<T, CliError> {
    let path = path.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

fn sim_config(cli: &Cli) -> Result<SimConfig, CliError> {
    let mut cfg: SimConfig = read_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(reps) = cli.reps {
        cfg.reps = reps;
    }
    if let Some(rho) = cli.rho {
        cfg.rho = vec![rho];
    }
    if let Some(eps) = cli.eps {
        match &mut cfg.penalty {
            PenaltyConfig::Kappa { eps: e, .. } => *e = Some(eps),
            _ => return Err(CliError::Config("--eps applies only to kappa penalties".into())),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn envelope<'a, C: Serialize, R: Serialize>(command: &'a str, config: &'a C, report: R) -> Envelope<'a, C, R> {
    Envelope { version: VERSION, command, config, data: None, report }
}

fn run_fit(cli: &Cli) -> Result<i32, CliError> {
    let cfg: FitConfig = read_config(cli.config.as_deref())?;
    let data_path = cli.data.as_deref().ok_or_else(|| CliError::Config("--data is required".into()))?;
    let data = load_csv(data_path)?;
    let p = data.p();
    let bx = cfg.theta_box.clone().unwrap_or_else(|| ParamBox::unbounded(p));
    let defaults = OptimOptions::default();
    let opts =
        OptimOptions { tol: cfg.tol.unwrap_or(defaults.tol), max_iter: cfg.max_iter.unwrap_or(defaults.max_iter) };
    let report = match cfg.model {
        ModelKind::Glm => {
            let m = GlmModel::new(data.design.clone(), data.responses.clone(), cfg.family, cfg.mu, bx)?;
            FitReport::Glm(fit_qmle(&m, cfg.init.as_deref(), opts)?)
        }
        ModelKind::SingleIndex => {
            let link = cfg.link.ok_or_else(|| CliError::Config("single-index fits need a link".into()))?;
            let m = SiModel::new(data.design.clone(), data.responses.clone(), cfg.family, link, cfg.mu, bx)?;
            let starts: Vec<Vec<f64>> = cfg.init.iter().cloned().collect();
            let r = if starts.is_empty() {
                si_fit(&m, opts)?
            } else {
                qlc_core::single_index::si_fit_with_starts(&m, &starts, opts)?
            };
            FitReport::SingleIndex(r)
        }
    };
    let mut env = envelope("fit", &cfg, report);
    env.data = Some((&data).into());
    write_json(&cli.out, "fit.json", &env)?;
    Ok(EXIT_OK)
}

fn run_target(cli: &Cli) -> Result<i32, CliError> {
    let cfg = sim_config(cli)?;
    let d = mc::describe(&cfg)?;
    let report = serde_json::json!({ "theta0": d.theta0, "vstar": d.vstar, "lambda_star": d.lambda_star });
    write_json(&cli.out, "target.json", &envelope("target", &cfg, report))?;
    Ok(EXIT_OK)
}

fn run_rate(cli: &Cli) -> Result<i32, CliError> {
    let cfg = sim_config(cli)?;
    let table = mc::rate_table(&cfg)?;
    let file = File::create(cli.out.join("rate.csv"))?;
    let mut w = csv_writer(file);
    let p = table.theta0.len();
    let mut header: Vec<String> = (0..p).map(|j| format!("theta_{j}")).collect();
    header.push("rate".into());
    writeln_csv(&mut w, &header)?;
    for (x, r) in table.points.iter().zip(&table.rate) {
        let mut row: Vec<String> = x.iter().map(f64::to_string).collect();
        row.push(r.to_string());
        writeln_csv(&mut w, &row)?;
    }
    let max = table.rate.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let report = serde_json::json!({ "theta0": table.theta0, "grid_points": table.points.len(), "rate_max": max });
    write_json(&cli.out, "rate.json", &envelope("rate", &cfg, report))?;
    Ok(EXIT_OK)
}

fn csv_writer(file: File) -> BufWriter<File> {
    BufWriter::new(file)
}

fn writeln_csv<W: std::io::Write>(w: &mut W, fields: &[String]) -> Result<(), CliError> {
    writeln!(w, "{}", fields.join(","))?;
    Ok(())
}

fn run_bounds(cli: &Cli) -> Result<i32, CliError> {
    let cfg = sim_config(cli)?;
    let d = mc::describe(&cfg)?;
    write_json(&cli.out, "bounds.json", &envelope("bounds", &cfg, &d))?;
    Ok(EXIT_OK)
}

fn run_entropy(cli: &Cli) -> Result<i32, CliError> {
    let cfg: EntropyConfig = read_config(cli.config.as_deref())?;
    if cfg.eps.is_empty() || cfg.eps.iter().any(|e| !(*e > 0.0)) {
        return Err(CliError::Config("eps values must be positive".into()));
    }
    cfg.domain.validate()?;
    let h = cfg.h.build(cfg.domain.dim())?;
    let mut spec = RandomFieldSpec::new(cfg.domain.clone(), h)?;
    if let Some(panels) = cfg.panels {
        spec = spec.with_panels(panels);
    }
    let rows = cfg
        .eps
        .iter()
        .map(|&eps| {
            Ok(EntropyRow {
                eps,
                nu1: nu1_estimate(&spec, eps)?,
                entropy: max_local_entropy(&spec, eps, cfg.centers.as_deref())?,
            })
        })
        .collect::<Result<Vec<_>, QlcError>>()?;
    let mut w = csv_writer(File::create(cli.out.join("entropy.csv"))?);
    writeln_csv(&mut w, &["eps".into(), "entropy".into(), "ball_size".into(), "nu1".into()])?;
    for r in &rows {
        writeln_csv(
            &mut w,
            &[r.eps.to_string(), r.entropy.value.to_string(), r.entropy.ball_size.to_string(), r.nu1.to_string()],
        )?;
    }
    write_json(&cli.out, "entropy.json", &envelope("entropy", &cfg, &rows))?;
    Ok(EXIT_OK)
}

fn write_curves(dir: &Path, result: &mc::SimResult) -> Result<(), CliError> {
    for (k, rho) in result.config.rho.iter().enumerate() {
        for (name, rows) in [("tail", &result.tails), ("coverage", &result.coverage)] {
            if rows.is_empty() {
                continue;
            }
            let file = File::create(dir.join(format!("{name}_rho{rho}.csv")))?;
            mc::write_curve_csv(BufWriter::new(file), rows, k, result.reps_ok)?;
        }
    }
    Ok(())
}

fn simulate(cli: &Cli, cfg: &SimConfig) -> Result<mc::SimResult, CliError> {
    let result = mc::run_simulation(cfg, None)?;
    write_curves(&cli.out, &result)?;
    if cli.reps_csv {
        mc::write_reps_csv(BufWriter::new(File::create(cli.out.join("reps.csv"))?), &result)?;
    }
    Ok(result)
}

fn run_simulate(cli: &Cli) -> Result<i32, CliError> {
    let cfg = sim_config(cli)?;
    let result = simulate(cli, &cfg)?;
    write_json(&cli.out, "simulation.json", &result)?;
    Ok(EXIT_OK)
}

fn run_verify(cli: &Cli) -> Result<i32, CliError> {
    let cfg = sim_config(cli)?;
    let result = simulate(cli, &cfg)?;
    let report = mc::verify(&result);
    write_json(&cli.out, "simulation.json", &result)?;
    write_json(&cli.out, "verify.json", &envelope("verify", &cfg, &report))?;
    for c in report.checks.iter().filter(|c| !c.pass) {
        eprintln!("violated: {} (empirical {} > bound {} + {})", c.name, c.empirical, c.bound, c.slack);
    }
    Ok(if report.all_pass { EXIT_OK } else { EXIT_VIOLATION })
}

fn dispatch(cli: &Cli) -> Result<i32, CliError> {
    if let Some(t) = cli.threads {
        let pool =
            rayon::ThreadPoolBuilder::new().num_threads(t).build().map_err(|e| CliError::Config(e.to_string()))?;
        return pool.install(|| dispatch_in_pool(cli));
    }
    dispatch_in_pool(cli)
}

fn dispatch_in_pool(cli: &Cli) -> Result<i32, CliError> {
    fs::create_dir_all(&cli.out).map_err(|e| CliError::Config(format!("cannot create {}: {e}", cli.out.display())))?;
    match cli.command {
        Command::Fit => run_fit(cli),
        Command::Target => run_target(cli),
        Command::Rate => run_rate(cli),
        Command::Bounds => run_bounds(cli),
        Command::Entropy => run_entropy(cli),
        Command::Simulate => run_simulate(cli),
        Command::Verify => run_verify(cli),
    }
}

/// Parse `argv`, run the command and return the exit code. Errors are
/// reported as JSON on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads == Some(0) {
        let err = CliError::Config("--threads must be positive".into());
        eprintln!("{}", err.to_json());
        return err.exit_code();
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

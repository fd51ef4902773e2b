//! Command-line front end. Each subcommand parses its inputs, calls the
//! library, and writes the result; nothing is computed here.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, unknown
//! algorithm, malformed config or parameters), 2 on data and feasibility
//! errors.

mod experiment;

pub use experiment::{
    run_experiment, write_rows, AlgorithmEntry, DataSource, ExperimentConfig, ExperimentRow, Preset,
    Protocol, CONFIG_VERSION,
};

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{
    generate_synthetic, load_csv, write_csv, CsvOptions, Dataset, DatasetError, SyntheticSpec,
};
use crate::eval::{
    greedy_submatch, mahalanobis_metric, matched_metrics, optimal_submatch, EvalError, MatchedTestSet,
};
use crate::model::{self, Algorithm, Model, ModelError, Params};
use crate::opt::{
    build_cut_menu, build_mip, check_solution, export_mps, values_from_names, OptConfig, OptError,
    TreeSkeleton,
};
use crate::risk::{ipw_risk, oracle_metrics, prescriptions, Coefficient, RiskError};

/// Environment variable read for the worker thread count.
pub const THREADS_ENV: &str = "PERSTREE_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("train/test audit failed: {0}")]
    Audit(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_)
            | CliError::Model(ModelError::UnknownAlgorithm(_) | ModelError::Params { .. })
            | CliError::Opt(OptError::Config(_)) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "perstree",
    version,
    about = "Treatment personalization trees and forests"
)]
pub struct Cli {
    /// Log progress at info level.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset and write it as CSV.
    GenData(GenDataArgs),
    /// Fit a policy and write it as JSON.
    Train(TrainArgs),
    /// Write the prescription for every row of a dataset.
    Predict(PredictArgs),
    /// Score a fitted policy.
    Evaluate(EvaluateArgs),
    /// Build a matched test set.
    Submatch(SubmatchArgs),
    /// Write the optimal-tree MIP as fixed-format MPS plus a name map.
    ExportMip(ExportMipArgs),
    /// Check a named MIP solution against every row and bound.
    CheckMip(CheckMipArgs),
    /// Run a learning-curve experiment.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "treatment")]
    pub treatment_col: String,
    #[arg(long, default_value = "outcome")]
    pub outcome_col: String,
    /// Feature column to one-hot encode; repeatable.
    #[arg(long)]
    pub categorical: Vec<String>,
}

impl DataArgs {
    pub fn load(&self) -> Result<Dataset, CliError> {
        let opts = CsvOptions {
            treatment_col: self.treatment_col.clone(),
            outcome_col: self.outcome_col.clone(),
            categorical: self.categorical.clone(),
            ..CsvOptions::default()
        };
        Ok(load_csv(&self.data, &opts)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    WarfarinLike,
    Smooth,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// JSON synthetic spec.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub spec: Option<PathBuf>,
    /// Built-in benchmark instead of a spec file.
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Covariate count for the warfarin-like preset.
    #[arg(long, default_value_t = 10)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Algorithm name, e.g. pt, pf, opt, rc-ols, 1v1b-knn.
    #[arg(long)]
    pub algo: String,
    /// JSON parameter object; missing keys take defaults.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Overrides the seed in the parameters.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("protocol").args(["oracle", "ipw", "greedy", "optimal", "matched"])))]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Score with the dataset's counterfactual columns.
    #[arg(long)]
    pub oracle: bool,
    /// Inverse-propensity risk; needs a propensity column.
    #[arg(long)]
    pub ipw: bool,
    /// Greedy submatching with this many test subjects.
    #[arg(long, value_name = "N_TEST")]
    pub greedy: Option<usize>,
    /// Optimal submatching with this many pairs.
    #[arg(long, value_name = "N_PAIR")]
    pub optimal: Option<usize>,
    /// A matched test set written by `submatch`.
    #[arg(long, value_name = "CSV")]
    pub matched: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metrics JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatchMethod {
    Greedy,
    Optimal,
}

#[derive(Debug, Args)]
pub struct SubmatchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub method: MatchMethod,
    /// Test subjects (greedy) or pairs (optimal).
    #[arg(long)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportMipArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// JSON optimal-tree parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// MPS path; the name map goes to `<out>.names.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckMipArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// JSON object from variable names to values.
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Metrics written by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub protocol: &'static str,
    /// Number of test rows scored.
    pub n: usize,
    pub risk: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p1: Option<Coefficient>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p2: Option<Coefficient>,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn params_for(algo: Algorithm, path: Option<&Path>) -> Result<Params, CliError> {
    match path {
        None => Ok(Params::defaults(algo)),
        Some(p) => {
            let value: serde_json::Value = serde_json::from_str(&read(p)?)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            Ok(Params::from_value(algo, value)?)
        }
    }
}

fn opt_config(path: Option<&Path>) -> Result<OptConfig, CliError> {
    match params_for(Algorithm::Opt, path)? {
        Params::Opt(c) => Ok(c),
        _ => unreachable!("opt parameters"),
    }
}

fn load_model(path: &Path, ds: &Dataset) -> Result<Model, CliError> {
    let model = Model::from_json(&read(path)?)?;
    if model.dim() != ds.d() {
        return Err(CliError::Data(format!(
            "model expects {} features, data has {}",
            model.dim(),
            ds.d()
        )));
    }
    Ok(model)
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn gen_data(args: &GenDataArgs) -> Result<(), CliError> {
    let spec = match (&args.spec, args.preset) {
        (Some(path), _) => {
            SyntheticSpec::from_json(&read(path)?).map_err(|e| CliError::Usage(e.to_string()))?
        }
        (None, Some(PresetArg::WarfarinLike)) => SyntheticSpec::warfarin_like(args.n, args.d, args.seed),
        (None, Some(PresetArg::Smooth)) => SyntheticSpec::smooth(args.n, args.seed),
        (None, None) => return Err(CliError::Usage("give --spec or --preset".into())),
    };
    let ds = generate_synthetic(&spec)?;
    write_csv(&ds, &args.out)?;
    log::info!("wrote {} rows to {}", ds.n(), args.out.display());
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<Model, CliError> {
    let algo: Algorithm = args.algo.parse()?;
    let mut params = params_for(algo, args.params.as_deref())?;
    if let Some(seed) = args.seed {
        params = params.with_seed(seed);
    }
    let ds = args.data.load()?;
    let model = model::train(algo, &params, &ds)?;
    let mut text = model.to_json();
    text.push('\n');
    std::fs::write(&args.out, text)?;
    Ok(model)
}

pub fn predict(args: &PredictArgs) -> Result<Vec<usize>, CliError> {
    let ds = args.data.load()?;
    let model = load_model(&args.model, &ds)?;
    let rx = prescriptions(&ds, &model);
    let mut w = csv::Writer::from_writer(create(&args.out)?);
    w.write_record(["row", "prescription"])?;
    for (i, t) in rx.iter().enumerate() {
        w.write_record([i.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(rx)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<MetricsReport, CliError> {
    let ds = args.data.load()?;
    let model = load_model(&args.model, &ds)?;
    let matched = |mts: MatchedTestSet, protocol| -> Result<MetricsReport, CliError> {
        let m = matched_metrics(&mts, &model)?;
        Ok(MetricsReport {
            protocol,
            n: mts.len(),
            risk: m.risk,
            p1: Some(m.p1),
            p2: Some(m.p2),
        })
    };
    let report = if let Some(n_test) = args.greedy {
        let metric = mahalanobis_metric(&ds)?;
        matched(greedy_submatch(&ds, n_test, &metric, args.seed)?, "greedy")?
    } else if let Some(n_pair) = args.optimal {
        let metric = mahalanobis_metric(&ds)?;
        matched(optimal_submatch(&ds, n_pair, &metric)?, "optimal")?
    } else if let Some(path) = &args.matched {
        let file = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        matched(MatchedTestSet::read_csv(BufReader::new(file), &ds)?, "matched")?
    } else if args.ipw {
        MetricsReport {
            protocol: "ipw",
            n: ds.n(),
            risk: ipw_risk(&ds, &model)?,
            p1: None,
            p2: None,
        }
    } else if args.oracle || ds.has_counterfactuals() {
        let m = oracle_metrics(&ds, &model)?;
        MetricsReport {
            protocol: "oracle",
            n: ds.n(),
            risk: m.risk,
            p1: Some(m.p1),
            p2: Some(m.p2),
        }
    } else {
        return Err(CliError::Usage(
            "no counterfactual columns: choose --ipw, --greedy, --optimal or --matched".into(),
        ));
    };
    write_json(&report, args.out.as_deref())?;
    Ok(report)
}

pub fn submatch(args: &SubmatchArgs) -> Result<MatchedTestSet, CliError> {
    let ds = args.data.load()?;
    let metric = mahalanobis_metric(&ds)?;
    let mts = match args.method {
        MatchMethod::Greedy => greedy_submatch(&ds, args.size, &metric, args.seed)?,
        MatchMethod::Optimal => optimal_submatch(&ds, args.size, &metric)?,
    };
    let mut out = create(&args.out)?;
    mts.write_csv(&mut out)?;
    out.flush()?;
    log::info!("{} test rows, {} subjects removed", mts.len(), mts.removed.len());
    Ok(mts)
}

fn mip_for(data: &DataArgs, params: Option<&Path>) -> Result<crate::opt::MipModel, CliError> {
    let ds = data.load()?;
    let cfg = opt_config(params)?;
    let skeleton = TreeSkeleton::new(cfg.delta)?;
    let menu = build_cut_menu(&ds, &skeleton, &cfg)?;
    Ok(build_mip(&ds, &skeleton, &menu, &cfg)?)
}

pub fn export_mip(args: &ExportMipArgs) -> Result<(), CliError> {
    let model = mip_for(&args.data, args.params.as_deref())?;
    export_mps(&model, &args.out)?;
    log::info!(
        "{} variables ({} binary), {} rows",
        model.variables.len(),
        model.binary_count(),
        model.constraints.len()
    );
    Ok(())
}

/// Prints one line per violation; any violation is a feasibility error.
pub fn check_mip(args: &CheckMipArgs) -> Result<(), CliError> {
    let model = mip_for(&args.data, args.params.as_deref())?;
    let map: HashMap<String, f64> = serde_json::from_str(&read(&args.solution)?)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.solution.display())))?;
    let values = values_from_names(&model, &map)?;
    let violations = check_solution(&model, &values, args.tol);
    let mut stdout = io::stdout().lock();
    for v in &violations {
        writeln!(stdout, "{}\t{}", v.name, v.excess)?;
    }
    writeln!(stdout, "objective\t{}", model.objective_value(&values))?;
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "{} violated conditions",
            violations.len()
        )))
    }
}

pub fn experiment(args: &ExperimentArgs) -> Result<Vec<ExperimentRow>, CliError> {
    let cfg = ExperimentConfig::from_json(&read(&args.config)?)?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let rows = run_experiment(&cfg, base)?;
    match args
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(|p| base.join(p)))
    {
        Some(path) => write_rows(&rows, create(&path)?)?,
        None => write_rows(&rows, io::stdout().lock())?,
    }
    Ok(rows)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a).map(drop),
        Command::Predict(a) => predict(a).map(drop),
        Command::Evaluate(a) => evaluate(a).map(drop),
        Command::Submatch(a) => submatch(a).map(drop),
        Command::ExportMip(a) => export_mip(a),
        Command::CheckMip(a) => check_mip(a),
        Command::Experiment(a) => experiment(a).map(drop),
    }
}

/// Parses `args`, runs the command, and returns the process exit code.
/// Errors go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    match threads_from_env() {
        Ok(Some(t)) => {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    }
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Reads the thread count from [`THREADS_ENV`], if set.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .map(Some)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
    }
}

//! The `gexplain` command line: dataset generation, training, explanation,
//! evaluation, α sweeps and correlation reports.
//!
//! Every command resolves its parameters (flags over `--config` file over
//! defaults) and writes the resolved set as `config.json` next to its
//! outputs. Directory outputs hold a single config; file outputs share a
//! `config.json` in their directory, keyed by output file name.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explainer::{explain, Binarize, ExplainConfig, ExplainError, Explanation, FeatureScope, MaskMode, RunnerUpMode};
use crate::gnn::{train, GcnModel, GnnError, TrainConfig};
use crate::graph::{generate_ba_shapes, generate_tree_cycles, load_dataset, save_dataset, Dataset, GraphError, Instance, Task};
use crate::metrics::{evaluate, kendall_tau, spearman_rho, EvalReport, MetricsError};

const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn invalid(message: impl Into<String>) -> CliError {
    CliError::Validation(message.into())
}

fn write_failed(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Io { .. } | GraphError::Parse { .. } | GraphError::Validation { .. } | GraphError::Usage(_) => {
                CliError::Validation(e.to_string())
            }
        }
    }
}

impl From<GnnError> for CliError {
    fn from(e: GnnError) -> Self {
        match e {
            GnnError::Usage(_) | GnnError::Checkpoint { .. } => CliError::Validation(e.to_string()),
            GnnError::Tensor(_) | GnnError::Diverged { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ExplainError> for CliError {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::Model(e) => e.into(),
            ExplainError::Usage(_) | ExplainError::Io { .. } => CliError::Validation(e.to_string()),
            ExplainError::Tensor(_) | ExplainError::NonFinite { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Explain(e) => e.into(),
            MetricsError::Model(e) => e.into(),
            MetricsError::Usage(_) | MetricsError::Undefined(_) => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gexplain", version, about = "Factual and counterfactual explanations for GCN classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic node-classification benchmark.
    Generate(GenerateArgs),
    /// Train a GCN classifier on a dataset file.
    Train(TrainArgs),
    /// Learn one explanation per instance.
    Explain(ExplainArgs),
    /// Score a directory of explanations.
    Eval(EvalArgs),
    /// Explain and score once per α value.
    SweepAlpha(SweepArgs),
    /// Rank correlation between F_NS and ground-truth scores of several reports.
    Correlate(CorrelateArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Resolved config to start from; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Entry to use when the config file holds several runs.
    #[arg(long, requires = "config")]
    entry: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    BaShapes,
    TreeCycles,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum)]
    dataset: Option<Benchmark>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MaskModeArg {
    Edges,
    Features,
    Both,
}

impl From<MaskModeArg> for MaskMode {
    fn from(m: MaskModeArg) -> Self {
        match m {
            MaskModeArg::Edges => MaskMode::Edges,
            MaskModeArg::Features => MaskMode::Features,
            MaskModeArg::Both => MaskMode::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScopeArg {
    Column,
    Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RunnerUpArg {
    Recompute,
    Fixed,
}

/// Mask-search flags shared by `explain` and `sweep-alpha`.
#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum)]
    mask_mode: Option<MaskModeArg>,
    #[arg(long, value_enum)]
    feature_scope: Option<ScopeArg>,
    /// Keep the K largest entries per mask instead of thresholding at 0.5.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, value_enum)]
    runner_up: Option<RunnerUpArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Explicit instance ids; default is every test instance with a
    /// ground-truth motif, or every test instance if none has one.
    #[arg(long, value_delimiter = ',')]
    instances: Option<Vec<usize>>,
    /// Keep only the first N selected instances.
    #[arg(long)]
    limit: Option<usize>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Pn,
    Ps,
    Fns,
    Gt,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    explanations: Option<String>,
    #[arg(long, value_enum, value_delimiter = ',')]
    metrics: Option<Vec<Metric>>,
    /// Report path; JSON is written there and CSV next to it.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
struct CorrelateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Evaluation reports (JSON or CSV), one per method.
    #[arg(long, value_delimiter = ',')]
    reports: Option<Vec<String>>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRun {
    pub dataset: Benchmark,
    pub seed: u64,
    pub out: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub data: String,
    pub out: String,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainRun {
    pub model: String,
    pub data: String,
    pub out: String,
    pub instances: Vec<usize>,
    pub jobs: usize,
    pub explain: ExplainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRun {
    pub model: String,
    pub data: String,
    pub explanations: String,
    pub metrics: Vec<Metric>,
    pub out: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRun {
    pub model: String,
    pub data: String,
    pub out: String,
    pub values: Vec<f64>,
    pub instances: Vec<usize>,
    pub jobs: usize,
    /// Shared mask-search settings; `alpha` is replaced per value.
    pub explain: ExplainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelateRun {
    pub reports: Vec<String>,
    pub out: String,
}

/// Fully resolved parameters of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Generate(GenerateRun),
    Train(TrainRun),
    Explain(ExplainRun),
    Eval(EvalRun),
    SweepAlpha(SweepRun),
    Correlate(CorrelateRun),
}

impl RunConfig {
    fn command(&self) -> &'static str {
        match self {
            RunConfig::Generate(_) => "generate",
            RunConfig::Train(_) => "train",
            RunConfig::Explain(_) => "explain",
            RunConfig::Eval(_) => "eval",
            RunConfig::SweepAlpha(_) => "sweep-alpha",
            RunConfig::Correlate(_) => "correlate",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ConfigFile {
    Single(RunConfig),
    Many(BTreeMap<String, RunConfig>),
}

/// λ used when neither a flag nor a config sets it.
pub fn default_lambda(dataset_name: Option<&str>) -> f64 {
    match dataset_name.map(str::to_ascii_lowercase).as_deref() {
        Some("mutag0" | "mutag") => 1000.0,
        Some("nci1") => 20.0,
        Some("citeseer") => 100.0,
        _ => 500.0,
    }
}

/// Instances explained by default: test instances with a ground-truth
/// motif, or all test instances when the dataset has none.
pub fn default_instances(ds: &Dataset) -> Vec<usize> {
    let has_truth = |id: usize| match ds.task {
        Task::Node => ds.graphs[0].motif_edges_of(id).is_some(),
        Task::Graph => ds.graphs[id].ground_truth().is_some_and(|gt| !gt.is_empty()),
    };
    let with_truth: Vec<usize> = ds.test_idx.iter().copied().filter(|&i| has_truth(i)).collect();
    if with_truth.is_empty() {
        ds.test_idx.clone()
    } else {
        with_truth
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate(a) => {
            let run = resolve_generate(a)?;
            run_generate(&run)
        }
        Command::Train(a) => {
            let run = resolve_train(a)?;
            run_train(&run)
        }
        Command::Explain(a) => {
            let run = resolve_explain(a)?;
            run_explain(&run)
        }
        Command::Eval(a) => {
            let run = resolve_eval(a)?;
            run_eval(&run)
        }
        Command::SweepAlpha(a) => {
            let run = resolve_sweep(a)?;
            run_sweep(&run)
        }
        Command::Correlate(a) => {
            let run = resolve_correlate(a)?;
            run_correlate(&run)
        }
    }
}

fn base_config(args: &ConfigArgs, command: &str) -> Result<Option<RunConfig>, CliError> {
    let Some(path) = &args.config else {
        return Ok(None);
    };
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let file: ConfigFile =
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let chosen = match (file, &args.entry) {
        (ConfigFile::Single(c), None) => c,
        (ConfigFile::Single(_), Some(_)) => {
            return Err(invalid(format!("{} holds a single run; drop --entry", path.display())))
        }
        (ConfigFile::Many(mut map), Some(entry)) => map
            .remove(entry)
            .ok_or_else(|| invalid(format!("{} has no entry {entry:?}", path.display())))?,
        (ConfigFile::Many(map), None) => {
            let mut matching: Vec<RunConfig> = map.into_values().filter(|c| c.command() == command).collect();
            if matching.len() != 1 {
                return Err(invalid(format!(
                    "{} holds {} {command} runs; pick one with --entry",
                    path.display(),
                    matching.len()
                )));
            }
            matching.remove(0)
        }
    };
    if chosen.command() != command {
        return Err(invalid(format!(
            "{} describes a {} run, not {command}",
            path.display(),
            chosen.command()
        )));
    }
    Ok(Some(chosen))
}

fn required(value: Option<String>, flag: &str) -> Result<String, CliError> {
    value
        .filter(|v| !v.is_empty())
        .ok_or_else(|| invalid(format!("missing --{flag}")))
}

fn resolve_generate(a: GenerateArgs) -> Result<GenerateRun, CliError> {
    let base = match base_config(&a.config, "generate")? {
        Some(RunConfig::Generate(r)) => Some(r),
        _ => None,
    };
    let dataset = a
        .dataset
        .or(base.as_ref().map(|b| b.dataset))
        .ok_or_else(|| invalid("missing --dataset"))?;
    Ok(GenerateRun {
        dataset,
        seed: a.seed.or(base.as_ref().map(|b| b.seed)).unwrap_or(0),
        out: required(a.out.or(base.map(|b| b.out)), "out")?,
    })
}

fn resolve_train(a: TrainArgs) -> Result<TrainRun, CliError> {
    let base = match base_config(&a.config, "train")? {
        Some(RunConfig::Train(r)) => Some(r),
        _ => None,
    };
    let t = base.as_ref().map(|b| b.train).unwrap_or_default();
    let train = TrainConfig {
        epochs: a.epochs.unwrap_or(t.epochs),
        learning_rate: a.lr.unwrap_or(t.learning_rate),
        seed: a.seed.unwrap_or(t.seed),
        hidden_dim: a.hidden.unwrap_or(t.hidden_dim),
        num_layers: a.layers.unwrap_or(t.num_layers),
    };
    if train.epochs == 0 || train.hidden_dim == 0 || train.num_layers == 0 {
        return Err(invalid("--epochs, --hidden and --layers must be >= 1"));
    }
    if !(train.learning_rate > 0.0 && train.learning_rate.is_finite()) {
        return Err(invalid("--lr must be > 0"));
    }
    Ok(TrainRun {
        data: required(a.data.or(base.as_ref().map(|b| b.data.clone())), "data")?,
        out: required(a.out.or(base.map(|b| b.out)), "out")?,
        train,
    })
}

/// Shared resolution of the mask-search settings.
struct Search {
    model: String,
    data: String,
    out: String,
    instances: Vec<usize>,
    jobs: usize,
    explain: ExplainConfig,
}

fn resolve_search(
    s: SearchArgs,
    alpha: Option<f64>,
    base: Option<(String, String, String, Vec<usize>, usize, ExplainConfig)>,
) -> Result<Search, CliError> {
    let (b_model, b_data, b_out, b_instances, b_jobs, b_cfg) = match base {
        Some((m, d, o, i, j, c)) => (Some(m), Some(d), Some(o), Some(i), Some(j), Some(c)),
        None => (None, None, None, None, None, None),
    };
    let data = required(s.data.or(b_data), "data")?;
    let ds = load_dataset(&data)?;
    let mut cfg = b_cfg.unwrap_or_else(|| ExplainConfig {
        lambda: default_lambda(ds.meta.as_ref().and_then(|m| m.name.as_deref())),
        ..ExplainConfig::default()
    });
    if let Some(v) = s.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = alpha {
        cfg.alpha = v;
    }
    if let Some(v) = s.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = s.mask_mode {
        cfg.mask_mode = v.into();
    }
    if let Some(v) = s.feature_scope {
        cfg.feature_scope = match v {
            ScopeArg::Column => FeatureScope::Column,
            ScopeArg::Node => FeatureScope::Node,
        };
    }
    if let Some(k) = s.top_k {
        cfg.binarize = Binarize::TopK(k);
    }
    if let Some(v) = s.runner_up {
        cfg.runner_up = match v {
            RunnerUpArg::Recompute => RunnerUpMode::Recompute,
            RunnerUpArg::Fixed => RunnerUpMode::Fixed,
        };
    }
    if let Some(v) = s.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = s.lr {
        cfg.learning_rate = v;
    }
    cfg.validate()?;
    let mut instances = s.instances.or(b_instances).unwrap_or_else(|| default_instances(&ds));
    if let Some(limit) = s.limit {
        instances.truncate(limit);
    }
    if instances.is_empty() {
        return Err(invalid("no instances to explain"));
    }
    if let Some(&bad) = instances.iter().find(|&&i| i >= ds.num_instances()) {
        return Err(invalid(format!("instance {bad} out of range ({})", ds.num_instances())));
    }
    let jobs = s.jobs.or(b_jobs).unwrap_or(1);
    if jobs == 0 {
        return Err(invalid("--jobs must be >= 1"));
    }
    Ok(Search {
        model: required(s.model.or(b_model), "model")?,
        data,
        out: required(s.out.or(b_out), "out")?,
        instances,
        jobs,
        explain: cfg,
    })
}

fn resolve_explain(a: ExplainArgs) -> Result<ExplainRun, CliError> {
    let base = match base_config(&a.config, "explain")? {
        Some(RunConfig::Explain(r)) => Some((r.model, r.data, r.out, r.instances, r.jobs, r.explain)),
        _ => None,
    };
    let s = resolve_search(a.search, a.alpha, base)?;
    Ok(ExplainRun {
        model: s.model,
        data: s.data,
        out: s.out,
        instances: s.instances,
        jobs: s.jobs,
        explain: s.explain,
    })
}

fn resolve_sweep(a: SweepArgs) -> Result<SweepRun, CliError> {
    let base = match base_config(&a.config, "sweep-alpha")? {
        Some(RunConfig::SweepAlpha(r)) => Some(r),
        _ => None,
    };
    let values = a
        .values
        .or(base.as_ref().map(|b| b.values.clone()))
        .unwrap_or_else(|| (0..=5).map(|i| i as f64 / 5.0).collect());
    if values.is_empty() || values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("--values must be a non-empty list in [0, 1]"));
    }
    let base = base.map(|r| (r.model, r.data, r.out, r.instances, r.jobs, r.explain));
    let s = resolve_search(a.search, None, base)?;
    Ok(SweepRun {
        model: s.model,
        data: s.data,
        out: s.out,
        values,
        instances: s.instances,
        jobs: s.jobs,
        explain: s.explain,
    })
}

fn resolve_eval(a: EvalArgs) -> Result<EvalRun, CliError> {
    let base = match base_config(&a.config, "eval")? {
        Some(RunConfig::Eval(r)) => Some(r),
        _ => None,
    };
    let mut metrics = a
        .metrics
        .or(base.as_ref().map(|b| b.metrics.clone()))
        .unwrap_or_else(|| vec![Metric::Pn, Metric::Ps, Metric::Fns]);
    metrics.sort();
    metrics.dedup();
    if metrics.is_empty() {
        return Err(invalid("--metrics is empty"));
    }
    Ok(EvalRun {
        model: required(a.model.or(base.as_ref().map(|b| b.model.clone())), "model")?,
        data: required(a.data.or(base.as_ref().map(|b| b.data.clone())), "data")?,
        explanations: required(
            a.explanations.or(base.as_ref().map(|b| b.explanations.clone())),
            "explanations",
        )?,
        metrics,
        out: required(a.out.or(base.map(|b| b.out)), "out")?,
    })
}

fn resolve_correlate(a: CorrelateArgs) -> Result<CorrelateRun, CliError> {
    let base = match base_config(&a.config, "correlate")? {
        Some(RunConfig::Correlate(r)) => Some(r),
        _ => None,
    };
    let reports = a
        .reports
        .or(base.as_ref().map(|b| b.reports.clone()))
        .ok_or_else(|| invalid("missing --reports"))?;
    if reports.len() < 2 {
        return Err(invalid("--reports needs at least two reports"));
    }
    Ok(CorrelateRun {
        reports,
        out: required(a.out.or(base.map(|b| b.out)), "out")?,
    })
}

fn serialize<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("config serializes");
    text.push('\n');
    text
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| write_failed(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| write_failed(dir, e))
}

/// Records the config of a run whose output is the directory `dir`.
fn write_dir_config(dir: &Path, run: &RunConfig) -> Result<(), CliError> {
    write_text(&dir.join(CONFIG_FILE), &serialize(run))
}

/// Records the config of a run whose output is the file `out`, merged into
/// the directory's shared `config.json` under the file's name.
fn write_file_config(out: &Path, run: &RunConfig) -> Result<(), CliError> {
    let dir = parent_dir(out);
    let path = dir.join(CONFIG_FILE);
    let mut map = match fs::read_to_string(&path).ok().and_then(|t| serde_json::from_str(&t).ok()) {
        Some(ConfigFile::Many(map)) => map,
        _ => BTreeMap::new(),
    };
    let key = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    map.insert(key, run.clone());
    write_text(&path, &serialize(&map))
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn prepare_file(out: &str) -> Result<PathBuf, CliError> {
    let out = PathBuf::from(out);
    create_dir(&parent_dir(&out))?;
    Ok(out)
}

fn run_generate(run: &GenerateRun) -> Result<(), CliError> {
    let ds = match run.dataset {
        Benchmark::BaShapes => generate_ba_shapes(run.seed),
        Benchmark::TreeCycles => generate_tree_cycles(run.seed),
    };
    let out = prepare_file(&run.out)?;
    save_dataset(&ds, &out).map_err(|e| write_failed(&out, e))?;
    write_file_config(&out, &RunConfig::Generate(run.clone()))?;
    eprintln!(
        "wrote {} ({} nodes, {} train / {} test)",
        out.display(),
        ds.num_instances(),
        ds.train_idx.len(),
        ds.test_idx.len()
    );
    Ok(())
}

fn run_train(run: &TrainRun) -> Result<(), CliError> {
    let ds = load_dataset(&run.data)?;
    let (model, report) = train(&ds, &run.train)?;
    let out = prepare_file(&run.out)?;
    model.save(&out).map_err(|e| write_failed(&out, e))?;
    write_file_config(&out, &RunConfig::Train(run.clone()))?;
    println!(
        "{}",
        serde_json::json!({
            "train_accuracy": report.train_accuracy,
            "test_accuracy": report.test_accuracy,
            "final_loss": report.losses.last(),
        })
    );
    Ok(())
}

fn load_model_for(path: &str, ds: &Dataset) -> Result<GcnModel, CliError> {
    let model = GcnModel::load(path)?;
    if model.arch.task != ds.task
        || model.arch.feature_dim != ds.feature_dim
        || model.arch.num_classes != ds.num_classes
    {
        return Err(invalid(format!(
            "model {path} does not match the dataset (task, feature_dim or num_classes)"
        )));
    }
    Ok(model)
}

fn instances_of(ds: &Dataset, model: &GcnModel, ids: &[usize]) -> Result<Vec<Instance>, CliError> {
    ids.iter()
        .map(|&i| ds.instance(i, model.arch.num_layers).map_err(CliError::from))
        .collect()
}

/// Explains every instance on `jobs` threads; order follows `instances`.
fn explain_all(
    model: &GcnModel,
    instances: &[Instance],
    cfg: &ExplainConfig,
    jobs: usize,
) -> Result<Vec<Explanation>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    pool.install(|| {
        instances
            .par_iter()
            .map(|inst| {
                explain(model, inst, cfg)
                    .map(|o| o.explanation)
                    .map_err(|e| match CliError::from(e) {
                        CliError::Validation(m) => CliError::Validation(format!("instance {}: {m}", inst.id)),
                        CliError::Runtime(m) => CliError::Runtime(format!("instance {}: {m}", inst.id)),
                    })
            })
            .collect()
    })
}

fn explanation_file(id: usize) -> String {
    format!("instance_{id}.json")
}

fn write_explanations(dir: &Path, explanations: &[Explanation]) -> Result<(), CliError> {
    explanations
        .iter()
        .try_for_each(|e| write_text(&dir.join(explanation_file(e.instance)), &format!("{}\n", e.to_json())))
}

fn run_explain(run: &ExplainRun) -> Result<(), CliError> {
    let ds = load_dataset(&run.data)?;
    let model = load_model_for(&run.model, &ds)?;
    let instances = instances_of(&ds, &model, &run.instances)?;
    let dir = PathBuf::from(&run.out);
    create_dir(&dir)?;
    let explanations = explain_all(&model, &instances, &run.explain, run.jobs)?;
    write_explanations(&dir, &explanations)?;
    write_dir_config(&dir, &RunConfig::Explain(run.clone()))?;
    let mean_size = explanations.iter().map(|e| e.size as f64).sum::<f64>() / explanations.len() as f64;
    eprintln!(
        "wrote {} explanations to {} (mean size {mean_size:.2})",
        explanations.len(),
        dir.display()
    );
    Ok(())
}

/// Loads every explanation file of a directory, ordered by instance id.
pub fn load_explanations(dir: impl AsRef<Path>) -> Result<Vec<Explanation>, CliError> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| invalid(format!("{}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| invalid(format!("{}: {e}", dir.display())))?.path();
        let is_json = path.extension().is_some_and(|x| x == "json");
        let is_config = path.file_name().is_some_and(|n| n == CONFIG_FILE);
        if path.is_file() && is_json && !is_config {
            paths.push(path);
        }
    }
    let mut explanations = paths
        .iter()
        .map(|p| Explanation::load(p).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    if explanations.is_empty() {
        return Err(invalid(format!("{} holds no explanation files", dir.display())));
    }
    explanations.sort_by_key(|e| e.instance);
    if let Some(w) = explanations.windows(2).find(|w| w[0].instance == w[1].instance) {
        return Err(invalid(format!(
            "{} holds two explanations of instance {}",
            dir.display(),
            w[0].instance
        )));
    }
    Ok(explanations)
}

fn score(
    model: &GcnModel,
    ds: &Dataset,
    explanations: &[Explanation],
    with_gt: bool,
) -> Result<EvalReport, CliError> {
    let ids: Vec<usize> = explanations.iter().map(|e| e.instance).collect();
    if let Some(&bad) = ids.iter().find(|&&i| i >= ds.num_instances()) {
        return Err(invalid(format!("explanation of instance {bad} outside the dataset")));
    }
    let instances = instances_of(ds, model, &ids)?;
    Ok(evaluate(model, &instances, explanations, with_gt)?)
}

fn csv_path(out: &Path) -> PathBuf {
    out.with_extension("csv")
}

fn run_eval(run: &EvalRun) -> Result<(), CliError> {
    let ds = load_dataset(&run.data)?;
    let model = load_model_for(&run.model, &ds)?;
    let explanations = load_explanations(&run.explanations)?;
    let report = score(&model, &ds, &explanations, run.metrics.contains(&Metric::Gt))?;
    let out = prepare_file(&run.out)?;
    let csv = csv_path(&out);
    if csv == out {
        return Err(invalid("--out must not end in .csv; the CSV is written next to it"));
    }
    write_text(&out, &serialize(&report))?;
    write_text(&csv, &report.to_csv())?;
    write_file_config(&out, &RunConfig::Eval(run.clone()))?;
    let a = &report.aggregate;
    let mut line = String::new();
    for m in &run.metrics {
        let _ = match m {
            Metric::Pn => write!(line, "pn {:.4} ", a.pn),
            Metric::Ps => write!(line, "ps {:.4} ", a.ps),
            Metric::Fns => write!(line, "fns {:.4} ", a.f_ns),
            Metric::Gt => match &a.gt {
                Some(g) => write!(line, "acc {:.4} pr {:.4} re {:.4} f1 {:.4} ", g.acc, g.pr, g.re, g.f1),
                None => Ok(()),
            },
        };
    }
    println!("{} instances: {}size {:.2}", a.count, line, a.mean_size);
    Ok(())
}

fn run_sweep(run: &SweepRun) -> Result<(), CliError> {
    let ds = load_dataset(&run.data)?;
    let model = load_model_for(&run.model, &ds)?;
    let instances = instances_of(&ds, &model, &run.instances)?;
    let with_gt = instances.iter().all(|i| i.ground_truth.is_some()) && run.explain.mask_mode.edges();
    let dir = PathBuf::from(&run.out);
    create_dir(&dir)?;
    let mut csv = String::from("alpha,pn,ps,f_ns,f1,acc,mean_size\n");
    for &alpha in &run.values {
        let cfg = ExplainConfig { alpha, ..run.explain };
        let explanations = explain_all(&model, &instances, &cfg, run.jobs)?;
        let sub = dir.join(format!("alpha_{alpha}"));
        create_dir(&sub)?;
        write_explanations(&sub, &explanations)?;
        let report = evaluate(&model, &instances, &explanations, with_gt)?;
        write_text(&sub.join("report.json"), &serialize(&report))?;
        let a = &report.aggregate;
        let (f1, acc) = match &a.gt {
            Some(g) => (g.f1.to_string(), g.acc.to_string()),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(csv, "{alpha},{},{},{},{f1},{acc},{}", a.pn, a.ps, a.f_ns, a.mean_size);
        eprintln!("alpha {alpha}: pn {:.4} ps {:.4} fns {:.4}", a.pn, a.ps, a.f_ns);
    }
    write_text(&dir.join("sweep.csv"), &csv)?;
    write_dir_config(&dir, &RunConfig::SweepAlpha(run.clone()))?;
    print!("{csv}");
    Ok(())
}

/// Aggregate (F_NS, F1, Acc) of one evaluation report file.
pub fn report_summary(path: impl AsRef<Path>) -> Result<(f64, f64, f64), CliError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let bad = |m: &str| invalid(format!("{}: {m}", path.display()));
    if path.extension().is_some_and(|x| x == "csv") {
        let header: Vec<&str> = text.lines().next().unwrap_or_default().split(',').collect();
        let row = text
            .lines()
            .find(|l| l.starts_with("mean,"))
            .ok_or_else(|| bad("no mean row"))?;
        let cells: Vec<&str> = row.split(',').collect();
        let cell = |name: &str| -> Result<f64, CliError> {
            let i = header.iter().position(|h| *h == name).ok_or_else(|| bad(&format!("no {name} column")))?;
            cells
                .get(i)
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| bad(&format!("mean row has no {name} value")))
        };
        let (pn, ps) = (cell("pn")?, cell("ps")?);
        return Ok((crate::metrics::f_ns(pn, ps), cell("f1")?, cell("acc")?));
    }
    let report: EvalReport = serde_json::from_str(&text).map_err(|e| bad(&e.to_string()))?;
    let gt = report
        .aggregate
        .gt
        .ok_or_else(|| bad("report has no ground-truth scores (evaluate with --metrics ...,gt)"))?;
    Ok((report.aggregate.f_ns, gt.f1, gt.acc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub fns_f1_tau: f64,
    pub fns_f1_rho: f64,
    pub fns_acc_tau: f64,
    pub fns_acc_rho: f64,
}

pub fn correlate(fns: &[f64], f1: &[f64], acc: &[f64]) -> Result<Correlations, MetricsError> {
    Ok(Correlations {
        fns_f1_tau: kendall_tau(fns, f1)?,
        fns_f1_rho: spearman_rho(fns, f1)?,
        fns_acc_tau: kendall_tau(fns, acc)?,
        fns_acc_rho: spearman_rho(fns, acc)?,
    })
}

fn run_correlate(run: &CorrelateRun) -> Result<(), CliError> {
    let rows = run
        .reports
        .iter()
        .map(report_summary)
        .collect::<Result<Vec<_>, _>>()?;
    let fns: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let f1: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let acc: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let c = correlate(&fns, &f1, &acc)?;
    let out = prepare_file(&run.out)?;
    let csv = format!(
        "pair,tau,rho\nfns_f1,{},{}\nfns_acc,{},{}\n",
        c.fns_f1_tau, c.fns_f1_rho, c.fns_acc_tau, c.fns_acc_rho
    );
    write_text(&out, &csv)?;
    write_file_config(&out, &RunConfig::Correlate(run.clone()))?;
    print!("{csv}");
    Ok(())
}

//! Config-driven command runner behind the `templar` binary.
//!
//! Exit codes: 0 success, 1 config / io / validation error (the message names
//! the offending path), 2 train/test contamination, 3 backend failure.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{self, Direction};
use crate::construction::{
    load_triples, sample_triples, ConstructionError, ConstructionOptions, Constructor, TrainingTriple,
};
use crate::corpus::{Corpus, Manifest, DEFAULT_BUDGET};
use crate::eval::{self, EvalError, Evaluator, Mode};
use crate::gateway::{Backend, BackendConfig, Gateway, HttpBackend, MockBackend};
use crate::optimizer::{
    score_templates, Aggregation, LoopContext, OptimizationConfig, OptimizerError, Refiner, SelectionConfig,
};
use crate::retrieval::{recall_at_k, Bm25Params, InvertedIndex};
use crate::template::{Decision, TemplateStore};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_CONTAMINATION: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("contamination: {0}")]
    Contamination(String),
    #[error("backend failure: {0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Contamination(_) => EXIT_CONTAMINATION,
            CliError::Backend(_) => EXIT_BACKEND,
        }
    }
}

impl From<ConstructionError> for CliError {
    fn from(e: ConstructionError) -> Self {
        match e {
            ConstructionError::Contamination(_) => CliError::Contamination(e.to_string()),
            ConstructionError::Backend { .. } => CliError::Backend(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Gateway(_) | EvalError::TooManyFailures { .. } => CliError::Backend(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<OptimizerError> for CliError {
    fn from(e: OptimizerError) -> Self {
        match e {
            OptimizerError::Aborted(inner) => inner.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendEntry {
    #[serde(default)]
    pub kind: BackendKind,
    /// Mock script (JSON) for `kind = "mock"`.
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(flatten)]
    pub config: BackendConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RolesConfig {
    pub answerer: Option<String>,
    pub constructor: Option<String>,
    pub feedback: Option<String>,
    pub updater: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Training triples used for construction and as refinement sources.
    pub triples: Option<PathBuf>,
    /// Test-split triples, only read under `--oracle`.
    pub oracle_triples: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_min_usage")]
    pub min_usage: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default = "default_iterations")]
    pub max_iterations: u32,
    #[serde(default)]
    pub early_stop: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// When non-empty (and a validation split exists), tau is tuned over it first.
    #[serde(default)]
    pub tau_grid: Vec<f64>,
}

fn default_tau() -> f64 {
    0.5
}
fn default_min_usage() -> usize {
    2
}
fn default_iterations() -> u32 {
    3
}
fn default_epsilon() -> f64 {
    0.001
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            tau: default_tau(),
            min_usage: default_min_usage(),
            aggregation: Aggregation::default(),
            max_iterations: default_iterations(),
            early_stop: false,
            epsilon: default_epsilon(),
            tau_grid: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub usage: Option<PathBuf>,
    pub percentile: Option<u32>,
    pub direction: Option<Direction>,
}

/// Contents of a run config file. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub k: Option<usize>,
    /// k values swept by `retrieve`.
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_num_triples")]
    pub num_triples: usize,
    #[serde(default)]
    pub holistic: bool,
    /// Snapshot used by `optimize`, `eval` and `analyze`.
    #[serde(default)]
    pub store: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub optimize: OptimizeConfig,
    #[serde(default)]
    pub analyze: AnalyzeConfig,
    #[serde(default)]
    pub roles: RolesConfig,
    #[serde(default)]
    pub backends: Vec<BackendEntry>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_budget() -> usize {
    DEFAULT_BUDGET
}
fn default_ks() -> Vec<usize> {
    vec![1, 3, 5, 10]
}
fn default_mode() -> Mode {
    Mode::Total
}
fn default_num_triples() -> usize {
    50
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads and parses a config, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config =
            Self::from_toml(&text).map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.out);
        for p in [
            &mut config.data.train,
            &mut config.data.validation,
            &mut config.data.test,
            &mut config.data.triples,
            &mut config.data.oracle_triples,
            &mut config.store,
            &mut config.analyze.usage,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        for b in &mut config.backends {
            if let Some(s) = b.script.as_mut() {
                resolve(s);
            }
        }
        Ok(config)
    }

    /// Backend id bound to a role; falls back to the first configured backend.
    pub fn role_backend(&self, role: &Option<String>) -> Result<String, CliError> {
        let id = match role {
            Some(id) => id.clone(),
            None => self
                .backends
                .first()
                .map(|b| b.config.backend_id.clone())
                .ok_or_else(|| config_err("no backends configured"))?,
        };
        if !self.backends.iter().any(|b| b.config.backend_id == id) {
            return Err(config_err(format!("role bound to unknown backend `{id}`")));
        }
        Ok(id)
    }

    pub fn build_gateway(&self) -> Result<Gateway, CliError> {
        let mut gateway = Gateway::new();
        for entry in &self.backends {
            let backend: Arc<dyn Backend> = match entry.kind {
                BackendKind::Mock => {
                    let script = entry.script.as_ref().ok_or_else(|| {
                        config_err(format!("mock backend `{}` needs a script", entry.config.backend_id))
                    })?;
                    Arc::new(MockBackend::load(script).map_err(config_err)?)
                }
                BackendKind::Http => Arc::new(HttpBackend::new(entry.config.clone()).map_err(config_err)?),
            };
            gateway.register(entry.config.clone(), backend).map_err(config_err)?;
        }
        Ok(gateway)
    }
}

fn require<'p>(path: &'p Option<PathBuf>, what: &str) -> Result<&'p Path, CliError> {
    let path = path
        .as_deref()
        .ok_or_else(|| config_err(format!("config is missing `{what}`")))?;
    if !path.exists() {
        return Err(config_err(format!("{what} path does not exist: {}", path.display())));
    }
    Ok(path)
}

fn load_manifest(path: &Option<PathBuf>, what: &str) -> Result<Manifest, CliError> {
    Manifest::load(require(path, what)?).map_err(config_err)
}

fn load_store(path: &Path) -> Result<TemplateStore, CliError> {
    if !path.exists() {
        return Err(config_err(format!("store path does not exist: {}", path.display())));
    }
    TemplateStore::load(path).map_err(config_err)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| config_err(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| config_err(format!("cannot write {}: {e}", path.display())))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

// ---------------------------------------------------------------- arguments

#[derive(Debug, Parser)]
#[command(name = "templar", about = "Thought-template construction, refinement and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Run config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the initial template store from sampled training triples.
    Construct {
        #[command(flatten)]
        common: Common,
        /// Build from test-split triples; the store is watermarked.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        num_triples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the refinement loop over a store snapshot.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        iterations: Option<u32>,
        #[arg(long)]
        min_usage: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        early_stop: Option<bool>,
    },
    /// Answer and score the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long)]
        answerer: Option<String>,
    },
    /// Sweep retrieval depth and write a recall table.
    Retrieve {
        #[command(flatten)]
        common: Common,
        /// Comma-separated k values.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        /// Manifest split: train, validation or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Usage histogram, co-occurrence lift and score-percentile subsets.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        usage: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        percentile: Option<u32>,
        #[arg(long)]
        direction: Option<Direction>,
    },
}

fn load_with_out(common: &Common) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    Ok(config)
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Progress goes to `out`, errors to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_CONFIG;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Construct {
            common,
            oracle,
            num_triples,
            seed,
        } => {
            let mut config = load_with_out(&common)?;
            if let Some(n) = num_triples {
                config.num_triples = n;
            }
            if let Some(s) = seed {
                config.seed = s;
            }
            let store = cmd_construct(&config, oracle)?;
            let _ = writeln!(out, "constructed {} templates -> {}", store.len(), config.out.join(TemplateStore::file_name(0)).display());
            Ok(())
        }
        Command::Optimize {
            common,
            tau,
            iterations,
            min_usage,
            k,
            store,
            early_stop,
        } => {
            let mut config = load_with_out(&common)?;
            if let Some(t) = tau {
                config.optimize.tau = t;
                config.optimize.tau_grid.clear();
            }
            if let Some(i) = iterations {
                config.optimize.max_iterations = i;
            }
            if let Some(m) = min_usage {
                config.optimize.min_usage = m;
            }
            if let Some(e) = early_stop {
                config.optimize.early_stop = e;
            }
            if k.is_some() {
                config.k = k;
            }
            if store.is_some() {
                config.store = store;
            }
            let summary = cmd_optimize(&config)?;
            let _ = out.write_all(summary.table.as_bytes());
            Ok(())
        }
        Command::Eval {
            common,
            mode,
            k,
            store,
            run_id,
            answerer,
        } => {
            let mut config = load_with_out(&common)?;
            if let Some(m) = mode {
                config.mode = m;
            }
            if k.is_some() {
                config.k = k;
            }
            if store.is_some() {
                config.store = store;
            }
            if answerer.is_some() {
                config.roles.answerer = answerer;
            }
            let (dir, result) = cmd_eval(&config, run_id.as_deref())?;
            let _ = writeln!(
                out,
                "{} {} = {:.4} over {} queries -> {}",
                result.metadata.mode,
                result.metadata.metric.label(),
                result.aggregate,
                result.rows.len(),
                dir.display()
            );
            Ok(())
        }
        Command::Retrieve { common, k, split } => {
            let mut config = load_with_out(&common)?;
            if let Some(ks) = k {
                config.ks = ks;
            }
            let rows = cmd_retrieve(&config, &split)?;
            let _ = writeln!(out, "k\trecall");
            for (k, r) in rows {
                let _ = writeln!(out, "{k}\t{r:.4}");
            }
            Ok(())
        }
        Command::Analyze {
            common,
            usage,
            store,
            percentile,
            direction,
        } => {
            let mut config = load_with_out(&common)?;
            if usage.is_some() {
                config.analyze.usage = usage;
            }
            if store.is_some() {
                config.store = store;
            }
            if percentile.is_some() {
                config.analyze.percentile = percentile;
            }
            if direction.is_some() {
                config.analyze.direction = direction;
            }
            let written = cmd_analyze(&config)?;
            for path in written {
                let _ = writeln!(out, "wrote {}", path.display());
            }
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- commands

#[derive(Debug, Serialize)]
struct ConstructSummary<'a> {
    seed: u64,
    num_triples: usize,
    oracle: bool,
    constructor: &'a str,
    sampled_query_ids: Vec<&'a str>,
    skips: &'a [crate::construction::SkipRecord],
    template_count: usize,
}

/// Samples triples, builds the initial store and writes `store.iter0.json`
/// plus `construct.json` into the output directory.
pub fn cmd_construct(config: &RunConfig, oracle: bool) -> Result<TemplateStore, CliError> {
    let triples_path = if oracle {
        require(&config.data.oracle_triples, "data.oracle_triples")?
    } else {
        require(&config.data.triples, "data.triples")?
    };
    let test = match &config.data.test {
        Some(_) => Some(load_manifest(&config.data.test, "data.test")?),
        None => None,
    };
    let gateway = config.build_gateway()?;
    let backend = config.role_backend(&config.roles.constructor)?;
    let triples = load_triples(triples_path)?;
    let sampled = sample_triples(&triples, config.num_triples, config.seed);
    let test_ids: HashSet<&str> = test
        .iter()
        .flat_map(|m| m.queries.iter().map(|q| q.query_id.as_str()))
        .collect();
    let constructor = Constructor::new(&gateway, backend.clone()).with_options(ConstructionOptions {
        holistic: config.holistic,
        oracle,
    });
    let (store, skips) = constructor.build_initial_set(&sampled, &test_ids)?;
    fs::create_dir_all(&config.out).map_err(|e| config_err(format!("cannot create {}: {e}", config.out.display())))?;
    store
        .snapshot(&config.out.join(TemplateStore::file_name(0)))
        .map_err(config_err)?;
    let summary = ConstructSummary {
        seed: config.seed,
        num_triples: config.num_triples,
        oracle,
        constructor: &backend,
        sampled_query_ids: sampled.iter().map(|t| t.query_id.as_str()).collect(),
        skips: &skips,
        template_count: store.len(),
    };
    write_file(&config.out.join("construct.json"), &pretty(&summary))?;
    Ok(store)
}

/// Result of `cmd_optimize`: the per-iteration table as printed, plus the
/// final store.
#[derive(Debug)]
pub struct OptimizeSummary {
    pub table: String,
    pub final_store: TemplateStore,
    pub report_count: usize,
    pub stopped_early: bool,
}

fn store_path(config: &RunConfig) -> PathBuf {
    config
        .store
        .clone()
        .unwrap_or_else(|| config.out.join(TemplateStore::file_name(0)))
}

pub fn cmd_optimize(config: &RunConfig) -> Result<OptimizeSummary, CliError> {
    let train = load_manifest(&config.data.train, "data.train")?;
    let validation = match &config.data.validation {
        Some(_) => Some(load_manifest(&config.data.validation, "data.validation")?),
        None => None,
    };
    let initial = load_store(&store_path(config))?;
    let triples: HashMap<String, TrainingTriple> = match &config.data.triples {
        Some(_) => load_triples(require(&config.data.triples, "data.triples")?)?
            .into_iter()
            .map(|t| (t.query_id.clone(), t))
            .collect(),
        None => HashMap::new(),
    };
    let gateway = config.build_gateway()?;
    let answerer = config.role_backend(&config.roles.answerer)?;
    let feedback = config.role_backend(&config.roles.feedback)?;
    let updater = config.role_backend(&config.roles.updater)?;
    let corpus = Corpus::load(&train.corpus_path).map_err(config_err)?;
    let index = config
        .k
        .map(|_| InvertedIndex::build(corpus.documents(), Bm25Params::default()))
        .transpose()
        .map_err(config_err)?;
    let mut evaluator = Evaluator::new(&gateway, answerer, &corpus).with_budget(config.budget);
    if let Some(index) = &index {
        evaluator = evaluator.with_index(index);
    }
    let refiner = Refiner::new(&gateway, feedback, updater, train.metric);
    let ctx = LoopContext {
        evaluator: &evaluator,
        refiner: &refiner,
        train: &train,
        triples: &triples,
        k: config.k,
    };
    let mut selection = SelectionConfig {
        tau: config.optimize.tau,
        min_usage: config.optimize.min_usage,
        aggregation: config.optimize.aggregation,
    };
    let mut table = String::new();
    if let (false, Some(v)) = (config.optimize.tau_grid.is_empty(), &validation) {
        let search = ctx.tune_tau(&initial, v, &config.optimize.tau_grid, &selection)?;
        selection.tau = search.best_tau;
        write_file(&config.out.join("tau_search.json"), &pretty(&search))?;
        table.push_str(&format!("tau = {} (tuned)\n", search.best_tau));
    }
    let opt = OptimizationConfig {
        max_iterations: config.optimize.max_iterations,
        early_stop: config.optimize.early_stop,
        epsilon: config.optimize.epsilon,
        selection,
    };
    let result = ctx.run_optimization(&initial, validation.as_ref(), &opt, Some(&config.out))?;
    result
        .final_store
        .snapshot(&config.out.join("store.final.json"))
        .map_err(config_err)?;
    table.push_str(&format!(
        "{:<5} {:>5} {:>5} {:>5} {:>8} {:>10} {:>10}\n",
        "iter", "KEEP", "ADD", "FIX", "DISCARD", "train", "validation"
    ));
    for r in &result.reports {
        let val = r.validation_metric.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        table.push_str(&format!(
            "{:<5} {:>5} {:>5} {:>5} {:>8} {:>10.4} {:>10}\n",
            r.iteration,
            r.count(Decision::Keep),
            r.count(Decision::Add),
            r.count(Decision::Fix),
            r.count(Decision::Discard),
            r.aggregate_metric,
            val
        ));
    }
    if result.stopped_early {
        table.push_str("stopped early: validation metric did not improve\n");
    }
    write_file(&config.out.join("decision_summary.txt"), &table)?;
    Ok(OptimizeSummary {
        table,
        report_count: result.reports.len(),
        stopped_early: result.stopped_early,
        final_store: result.final_store,
    })
}

/// Evaluates the test split and writes `runs/<run_id>/` under the output
/// directory. The default run id is `<mode>-<answerer>[-k<k>]`.
pub fn cmd_eval(config: &RunConfig, run_id: Option<&str>) -> Result<(PathBuf, eval::EvalResult), CliError> {
    let test = load_manifest(&config.data.test, "data.test")?;
    let gateway = config.build_gateway()?;
    let answerer = config.role_backend(&config.roles.answerer)?;
    let snapshot = config.mode.uses_templates().then(|| store_path(config));
    let store = snapshot.as_deref().map(load_store).transpose()?;
    let corpus = Corpus::load(&test.corpus_path).map_err(config_err)?;
    let index = config
        .k
        .map(|_| InvertedIndex::build(corpus.documents(), Bm25Params::default()))
        .transpose()
        .map_err(config_err)?;
    let mut evaluator = Evaluator::new(&gateway, answerer.clone(), &corpus).with_budget(config.budget);
    if let Some(index) = &index {
        evaluator = evaluator.with_index(index);
    }
    let mut outcome = evaluator.evaluate(&test, store.as_ref(), config.mode, config.k)?;
    let run_id = match run_id {
        Some(id) => id.to_string(),
        None => {
            let mut id = format!("{}-{}", config.mode, answerer);
            if let Some(k) = config.k {
                id.push_str(&format!("-k{k}"));
            }
            id
        }
    };
    let dir = config.out.join("runs").join(run_id);
    eval::write_run(&dir, &outcome).map_err(config_err)?;
    if let Some(path) = &snapshot {
        let transfer = analytics::transfer_run_config(path, &answerer, &gateway).map_err(config_err)?;
        outcome.result.metadata.transfer = Some(transfer.transfer);
        outcome.result.metadata.template_source = transfer.template_source.clone();
        write_file(&dir.join("eval.json"), &pretty(&outcome.result))?;
        write_file(&dir.join("transfer.json"), &pretty(&transfer))?;
    }
    Ok((dir, outcome.result))
}

/// Mean recall@k over queries that list gold documents, for each configured
/// k. Writes `recall.csv` (`k,recall`).
pub fn cmd_retrieve(config: &RunConfig, split: &str) -> Result<Vec<(usize, f64)>, CliError> {
    let (path, what) = match split {
        "train" => (&config.data.train, "data.train"),
        "validation" => (&config.data.validation, "data.validation"),
        "test" => (&config.data.test, "data.test"),
        other => return Err(config_err(format!("unknown split `{other}` (train|validation|test)"))),
    };
    let manifest = load_manifest(path, what)?;
    if config.ks.is_empty() {
        return Err(config_err("no k values to sweep"));
    }
    let corpus = Corpus::load(&manifest.corpus_path).map_err(config_err)?;
    let index = InvertedIndex::build(corpus.documents(), Bm25Params::default()).map_err(config_err)?;
    let queries: Vec<_> = manifest
        .queries
        .iter()
        .filter(|q| q.gold_doc_ids.as_ref().is_some_and(|g| !g.is_empty()))
        .collect();
    if queries.is_empty() {
        return Err(config_err(format!("no query in {} lists gold_doc_ids", path.as_ref().unwrap().display())));
    }
    let max_k = *config.ks.iter().max().expect("non-empty");
    let hits: Vec<_> = queries
        .iter()
        .map(|q| {
            let allow: Option<HashSet<&str>> = q.doc_allowlist.as_ref().map(|a| a.iter().map(String::as_str).collect());
            index.retrieve_filtered(&q.question, max_k, allow.as_ref()).map_err(config_err)
        })
        .collect::<Result<_, _>>()?;
    let mut ks = config.ks.clone();
    ks.sort_unstable();
    ks.dedup();
    let mut rows = Vec::with_capacity(ks.len());
    let mut csv = String::from("k,recall\n");
    for k in ks {
        let per_query: Vec<f64> = queries
            .iter()
            .zip(&hits)
            .map(|(q, h)| recall_at_k(&h.top(k), q.gold_doc_ids.as_deref().unwrap_or_default()))
            .collect::<Result<_, _>>()
            .map_err(config_err)?;
        let recall = eval::mean(per_query);
        csv.push_str(&format!("{k},{recall}\n"));
        rows.push((k, recall));
    }
    write_file(&config.out.join("recall.csv"), &csv)?;
    Ok(rows)
}

/// Writes the usage histogram, lift exports and, when a percentile is set,
/// a subset snapshot. Returns the written paths.
pub fn cmd_analyze(config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let usage_path = require(&config.analyze.usage, "analyze.usage")?;
    let usage = eval::read_usage_log(usage_path).map_err(config_err)?;
    fs::create_dir_all(&config.out).map_err(|e| config_err(format!("cannot create {}: {e}", config.out.display())))?;
    let mut written = Vec::new();
    let histogram = analytics::usage_histogram(&usage);
    let path = config.out.join("usage_histogram.csv");
    analytics::write_histogram_csv(&path, &histogram).map_err(config_err)?;
    written.push(path);
    let lift = analytics::cooccurrence_lift(&usage);
    let path = config.out.join("lift.csv");
    analytics::write_lift_csv(&path, &lift).map_err(config_err)?;
    written.push(path);
    let path = config.out.join("lift.json");
    analytics::write_lift_json(&path, &lift).map_err(config_err)?;
    written.push(path);
    if let Some(p) = &config.store {
        let store = load_store(p)?;
        let path = config.out.join("texts.jsonl");
        analytics::write_texts_jsonl(&path, &store, None).map_err(config_err)?;
        written.push(path);
        if let Some(percentile) = config.analyze.percentile {
            let direction = config.analyze.direction.unwrap_or(Direction::Bottom);
            let table = score_templates(&usage, &store);
            let subset = analytics::subset_by_score(&store, &table, percentile, direction).map_err(config_err)?;
            let name = match direction {
                Direction::Bottom => format!("store.bottom{percentile}.json"),
                Direction::Top => format!("store.top{percentile}.json"),
            };
            let path = config.out.join(name);
            subset.snapshot(&path).map_err(config_err)?;
            written.push(path);
        }
    } else if config.analyze.percentile.is_some() {
        return Err(config_err("percentile subsets need a store snapshot (`store` or --store)"));
    }
    Ok(written)
}

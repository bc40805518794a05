//! Run configuration: defaults, the `DIGRAD_SEED` environment variable, a
//! flat key=value config file, and command-line flags, in rising precedence.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use digrad_core::attribution::Method;
use digrad_core::eval::MetricSelection;
use digrad_core::knn::DistanceMetric;

pub const SEED_ENV_VAR: &str = "DIGRAD_SEED";

/// Configuration problem: reported on exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Flags shared by every subcommand. Config-file keys use the same names.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat key=value config file; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Interpolation steps m
    #[arg(long, short = 'm')]
    pub steps: Option<usize>,
    /// Path up-sampling factor f
    #[arg(long, short = 'f')]
    pub factor: Option<usize>,
    /// Neighborhood size K
    #[arg(long, short = 'K')]
    pub knn: Option<usize>,
    /// Comma-separated attribution methods
    #[arg(long)]
    pub strategy: Option<String>,
    /// Comma-separated top-k percentages
    #[arg(long)]
    pub topk: Option<String>,
    /// Master random seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parallel worker count
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Labeled JSONL dataset; the bundled toy corpus when omitted
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// GloVe-style embedding file
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Model checkpoint file
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Prebuilt neighbor index file
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Distance metric for the neighbor index (euclidean or cosine)
    #[arg(long)]
    pub metric: Option<String>,
    /// Comma-separated metric selection (log-odds,comp,suff)
    #[arg(long)]
    pub metrics: Option<String>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub enum Sweep {
    #[serde(rename = "m")]
    Steps(Vec<usize>),
    #[serde(rename = "f")]
    Factor(Vec<usize>),
    #[serde(rename = "K")]
    Knn(Vec<usize>),
    #[serde(rename = "k")]
    TopK(Vec<f64>),
}

impl Sweep {
    pub fn parse(spec: &str) -> Result<Self, ConfigError> {
        let Some((param, values)) = spec.split_once('=') else {
            return err(format!("sweep spec {spec:?} must look like m=10,30,100"));
        };
        let usize_list = |values: &str| -> Result<Vec<usize>, ConfigError> {
            values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|e| ConfigError(format!("sweep value {v:?}: {e}")))
                })
                .collect()
        };
        match param.trim() {
            "m" => Ok(Sweep::Steps(usize_list(values)?)),
            "f" => Ok(Sweep::Factor(usize_list(values)?)),
            "K" => Ok(Sweep::Knn(usize_list(values)?)),
            "k" => values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| ConfigError(format!("sweep value {v:?}: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Sweep::TopK),
            other => err(format!("sweep parameter {other:?} is not one of m, f, K, k")),
        }
    }

    pub fn param_name(&self) -> &'static str {
        match self {
            Sweep::Steps(_) => "m",
            Sweep::Factor(_) => "f",
            Sweep::Knn(_) => "K",
            Sweep::TopK(_) => "k",
        }
    }
}

/// Fully resolved configuration; embedded verbatim into every output
/// artifact so runs can be reproduced from their files alone.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub steps: usize,
    pub factor: usize,
    pub knn: usize,
    pub metric: DistanceMetric,
    pub topk: Vec<f64>,
    pub metrics: MetricSelection,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub min_count: usize,
    pub val_fraction: f64,
    pub dump_paths: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            dataset: None,
            embeddings: None,
            checkpoint: None,
            index: None,
            report: None,
            methods: vec![Method::Ig, Method::DigGreedy, Method::DigMaxCount],
            steps: 30,
            factor: 0,
            knn: 500,
            metric: DistanceMetric::Euclidean,
            topk: vec![20.0],
            metrics: MetricSelection::default(),
            seed: 42,
            out: PathBuf::from("out"),
            jobs: None,
            sweep: None,
            epochs: 30,
            learning_rate: 0.5,
            batch_size: 16,
            hidden: 16,
            embed_dim: 16,
            min_count: 1,
            val_fraction: 0.2,
            dump_paths: false,
        }
    }
}

fn parse_methods(raw: &str) -> Result<Vec<Method>, ConfigError> {
    let methods: Vec<Method> = raw
        .split(',')
        .map(|m| m.trim().parse::<Method>().map_err(ConfigError))
        .collect::<Result<_, _>>()?;
    if methods.is_empty() {
        return err("method list is empty");
    }
    Ok(methods)
}

fn parse_topk(raw: &str) -> Result<Vec<f64>, ConfigError> {
    raw.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| ConfigError(format!("top-k value {v:?}: {e}")))
        })
        .collect()
}

fn parse_metric_selection(raw: &str) -> Result<MetricSelection, ConfigError> {
    let mut selection = MetricSelection {
        log_odds: false,
        comprehensiveness: false,
        sufficiency: false,
    };
    for item in raw.split(',') {
        match item.trim() {
            "log-odds" | "log_odds" | "lo" => selection.log_odds = true,
            "comp" | "comprehensiveness" => selection.comprehensiveness = true,
            "suff" | "sufficiency" => selection.sufficiency = true,
            other => return err(format!("unknown metric {other:?}")),
        }
    }
    Ok(selection)
}

fn parse_key<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| ConfigError(format!("config key {key}: bad value {value:?}: {e}")))
}

/// Reads a flat key=value file. `#` starts a comment; keys match flag names.
fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config file {}: {e}", path.display())))?;
    let mut pairs = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return err(format!(
                "{}:{}: expected key=value, got {line:?}",
                path.display(),
                idx + 1
            ));
        };
        pairs.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(pairs)
}

impl RunConfig {
    /// Applies env, config file, and flags over the defaults, then validates.
    pub fn resolve(command: &str, args: &CommonArgs) -> Result<RunConfig, ConfigError> {
        Self::resolve_with(command, args, |_| Ok(()))
    }

    /// [`RunConfig::resolve`] with a hook for command-specific flags, applied
    /// before validation.
    pub fn resolve_with(
        command: &str,
        args: &CommonArgs,
        extra: impl FnOnce(&mut RunConfig) -> Result<(), ConfigError>,
    ) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig {
            command: command.to_string(),
            ..RunConfig::default()
        };

        // lowest precedence seed source
        if let Ok(value) = std::env::var(SEED_ENV_VAR) {
            cfg.seed = value
                .parse()
                .map_err(|e| ConfigError(format!("{SEED_ENV_VAR}={value:?}: {e}")))?;
        }

        if let Some(path) = &args.config {
            let pairs = read_config_file(path)?;
            for (key, value) in &pairs {
                cfg.apply_key(key, value)?;
            }
        }

        cfg.apply_flags(args)?;
        extra(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_key(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "steps" => self.steps = parse_key(key, value)?,
            "factor" => self.factor = parse_key(key, value)?,
            "knn" => self.knn = parse_key(key, value)?,
            "strategy" => self.methods = parse_methods(value)?,
            "topk" => self.topk = parse_topk(value)?,
            "seed" => self.seed = parse_key(key, value)?,
            "jobs" => self.jobs = Some(parse_key(key, value)?),
            "out" => self.out = PathBuf::from(value),
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "embeddings" => self.embeddings = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "index" => self.index = Some(PathBuf::from(value)),
            "report" => self.report = Some(PathBuf::from(value)),
            "metric" => {
                self.metric = value
                    .parse::<DistanceMetric>()
                    .map_err(|e| ConfigError(e.to_string()))?
            }
            "metrics" => self.metrics = parse_metric_selection(value)?,
            "sweep" => self.sweep = Some(Sweep::parse(value)?),
            "epochs" => self.epochs = parse_key(key, value)?,
            "lr" => self.learning_rate = parse_key(key, value)?,
            "batch-size" => self.batch_size = parse_key(key, value)?,
            "hidden" => self.hidden = parse_key(key, value)?,
            "embed-dim" => self.embed_dim = parse_key(key, value)?,
            "min-count" => self.min_count = parse_key(key, value)?,
            "val-fraction" => self.val_fraction = parse_key(key, value)?,
            "dump-paths" => self.dump_paths = parse_key(key, value)?,
            other => return err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    fn apply_flags(&mut self, args: &CommonArgs) -> Result<(), ConfigError> {
        if let Some(v) = args.steps {
            self.steps = v;
        }
        if let Some(v) = args.factor {
            self.factor = v;
        }
        if let Some(v) = args.knn {
            self.knn = v;
        }
        if let Some(v) = &args.strategy {
            self.methods = parse_methods(v)?;
        }
        if let Some(v) = &args.topk {
            self.topk = parse_topk(v)?;
        }
        if let Some(v) = args.seed {
            self.seed = v;
        }
        if let Some(v) = args.jobs {
            self.jobs = Some(v);
        }
        if let Some(v) = &args.out {
            self.out = v.clone();
        }
        if let Some(v) = &args.dataset {
            self.dataset = Some(v.clone());
        }
        if let Some(v) = &args.embeddings {
            self.embeddings = Some(v.clone());
        }
        if let Some(v) = &args.checkpoint {
            self.checkpoint = Some(v.clone());
        }
        if let Some(v) = &args.index {
            self.index = Some(v.clone());
        }
        if let Some(v) = &args.metric {
            self.metric = v
                .parse::<DistanceMetric>()
                .map_err(|e| ConfigError(e.to_string()))?;
        }
        if let Some(v) = &args.metrics {
            self.metrics = parse_metric_selection(v)?;
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.steps < 1 {
            return err("steps must be at least 1");
        }
        if self.knn < 1 {
            return err("knn must be at least 1");
        }
        if self.epochs < 1 {
            return err("epochs must be at least 1");
        }
        if self.batch_size < 1 {
            return err("batch-size must be at least 1");
        }
        if !(0.0..=0.9).contains(&self.val_fraction) {
            return err("val-fraction must lie in [0, 0.9]");
        }
        if self.methods.is_empty() {
            return err("method list is empty");
        }
        for &k in &self.topk {
            if !(k > 0.0 && k <= 100.0) {
                return err(format!("top-k percentage {k} outside (0, 100]"));
            }
        }
        if let Some(jobs) = self.jobs {
            if jobs < 1 {
                return err("jobs must be at least 1");
            }
        }
        for (label, path) in [
            ("dataset", &self.dataset),
            ("embeddings", &self.embeddings),
            ("checkpoint", &self.checkpoint),
            ("index", &self.index),
            ("report", &self.report),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    return err(format!("{label} file does not exist: {}", path.display()));
                }
            }
        }
        Ok(())
    }

    /// Canonical JSON of the resolved configuration.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

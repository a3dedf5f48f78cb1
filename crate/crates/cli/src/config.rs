//! Flat key-value run configuration. Unknown keys are errors so hyperparameter
//! typos fail loudly instead of silently falling back to defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use saenad::geo::Metric;
use saenad::model::Variant;
use saenad::train::TrainConfig;
use saenad::Dtype;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub checkins: PathBuf,
    pub coords: PathBuf,
    pub cache_dir: PathBuf,
    pub checkpoint: PathBuf,
    /// Report stem; defaults to `<cache_dir>/report`. `.tsv` and `.json`
    /// are appended.
    pub report: Option<PathBuf>,

    pub hidden1: usize,
    pub bottleneck: usize,
    pub aspects: usize,
    pub variant: Variant,
    pub dropout: f64,

    pub metric: Metric,
    /// Defaults per metric when unset.
    pub gamma: Option<f64>,
    pub kernel_threshold: f64,
    pub kernel_grid: bool,

    pub train: TrainConfig,
    pub precision: Dtype,
    /// Write a checkpoint every this many iterations (0 = only at the end).
    pub checkpoint_every: usize,

    pub min_user_checkins: usize,
    pub min_poi_visits: usize,
    pub test_fraction: f64,
    pub partition_count: usize,
    pub split_partition: usize,

    pub cutoffs: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            checkins: PathBuf::new(),
            coords: PathBuf::new(),
            cache_dir: PathBuf::new(),
            checkpoint: PathBuf::new(),
            report: None,
            hidden1: 200,
            bottleneck: 50,
            aspects: 20,
            variant: Variant::SaeNad,
            dropout: 0.5,
            metric: Metric::EuclideanDegrees,
            gamma: None,
            kernel_threshold: 0.1,
            kernel_grid: false,
            train: TrainConfig::default(),
            precision: Dtype::F64,
            checkpoint_every: 0,
            min_user_checkins: 20,
            min_poi_visits: 20,
            test_fraction: 0.2,
            partition_count: 1,
            split_partition: 0,
            cutoffs: vec![5, 10, 20],
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("bad value {value:?} for key {key:?}")))
}

impl RunConfig {
    pub fn effective_gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| self.metric.default_gamma())
    }

    pub fn report_stem(&self) -> PathBuf {
        self.report
            .clone()
            .unwrap_or_else(|| self.cache_dir.join("report"))
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    i + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            match key {
                "checkins" => cfg.checkins = PathBuf::from(value),
                "coords" => cfg.coords = PathBuf::from(value),
                "cache_dir" => cfg.cache_dir = PathBuf::from(value),
                "checkpoint" => cfg.checkpoint = PathBuf::from(value),
                "report" => cfg.report = Some(PathBuf::from(value)),
                "hidden1" => cfg.hidden1 = parse_value(key, value)?,
                "bottleneck" => cfg.bottleneck = parse_value(key, value)?,
                "aspects" => cfg.aspects = parse_value(key, value)?,
                "variant" => cfg.variant = value.parse().map_err(CliError::Core)?,
                "dropout" => cfg.dropout = parse_value(key, value)?,
                "metric" => cfg.metric = value.parse().map_err(CliError::Core)?,
                "gamma" => cfg.gamma = Some(parse_value(key, value)?),
                "kernel_threshold" => cfg.kernel_threshold = parse_value(key, value)?,
                "kernel_grid" => cfg.kernel_grid = parse_value(key, value)?,
                "learning_rate" => cfg.train.learning_rate = parse_value(key, value)?,
                "lambda" => cfg.train.lambda = parse_value(key, value)?,
                "alpha" => cfg.train.alpha = parse_value(key, value)?,
                "epsilon" => cfg.train.epsilon = parse_value(key, value)?,
                "batch_size" => cfg.train.batch_size = parse_value(key, value)?,
                "num_iterations" => cfg.train.num_iterations = parse_value(key, value)?,
                "seed" => cfg.train.seed = parse_value(key, value)?,
                "adam_beta1" => cfg.train.adam_beta1 = parse_value(key, value)?,
                "adam_beta2" => cfg.train.adam_beta2 = parse_value(key, value)?,
                "adam_eps" => cfg.train.adam_eps = parse_value(key, value)?,
                "weight_exponent" => cfg.train.weight_exponent = parse_value(key, value)?,
                "precision" => {
                    cfg.precision = match value {
                        "f32" => Dtype::F32,
                        "f64" => Dtype::F64,
                        other => {
                            return Err(CliError::Config(format!(
                                "precision must be f32 or f64, got {other:?}"
                            )))
                        }
                    }
                }
                "checkpoint_every" => cfg.checkpoint_every = parse_value(key, value)?,
                "min_user_checkins" => cfg.min_user_checkins = parse_value(key, value)?,
                "min_poi_visits" => cfg.min_poi_visits = parse_value(key, value)?,
                "test_fraction" => cfg.test_fraction = parse_value(key, value)?,
                "partition_count" => cfg.partition_count = parse_value(key, value)?,
                "split_partition" => cfg.split_partition = parse_value(key, value)?,
                "cutoffs" => {
                    cfg.cutoffs = value
                        .split(',')
                        .map(|s| parse_value("cutoffs", s.trim()))
                        .collect::<CliResult<Vec<usize>>>()?;
                }
                unknown => {
                    return Err(CliError::Config(format!("unknown config key {unknown:?}")));
                }
            }
        }
        Ok(cfg)
    }
}

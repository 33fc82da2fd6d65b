//! Effective run configuration with the precedence chain
//! defaults < config file < command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use hate_core::dataset::{InputFormat, PrepOptions};
use hate_core::model::Variant;
use hate_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// The fully resolved configuration of one command invocation. A copy is
/// serialized next to every artifact a command writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    // Paths (no defaults; commands state which ones they require).
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,

    // Dataset preparation.
    pub format: InputFormat,
    pub window: usize,
    pub min_count: usize,
    pub test_fraction: f64,
    pub recent_days: i64,

    // Training.
    pub dim: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub nce_k: usize,
    pub noise_power: f64,
    pub adagrad_epsilon: f64,
    pub batch_mean: bool,
    pub seed: u64,
    pub variant: Variant,

    // Evaluation and recommendation.
    pub k: Vec<usize>,
    pub topk: usize,
    pub windows: Vec<usize>,

    /// Worker threads; 0 = one per core, 1 = fully sequential.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            out: None,
            ckpt: None,
            format: InputFormat::Jsonl,
            window: 2,
            min_count: 1,
            test_fraction: 0.2,
            recent_days: 30,
            dim: 50,
            batch_size: 30,
            lr: 0.5,
            epochs: 20,
            nce_k: 10,
            noise_power: 0.75,
            adagrad_epsilon: 1e-8,
            batch_mean: false,
            seed: 42,
            variant: Variant::Hate,
            k: vec![10, 50],
            topk: 10,
            windows: vec![1, 2, 3],
            threads: 0,
        }
    }
}

/// A sparse overlay: any subset of [`RunConfig`] fields, as read from a
/// config file or collected from explicitly-set flags.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigOverlay {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub format: Option<InputFormat>,
    pub window: Option<usize>,
    pub min_count: Option<usize>,
    pub test_fraction: Option<f64>,
    pub recent_days: Option<i64>,
    pub dim: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub nce_k: Option<usize>,
    pub noise_power: Option<f64>,
    pub adagrad_epsilon: Option<f64>,
    pub batch_mean: Option<bool>,
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub k: Option<Vec<usize>>,
    pub topk: Option<usize>,
    pub windows: Option<Vec<usize>>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn apply(&mut self, overlay: ConfigOverlay) {
        macro_rules! take {
            ($($field:ident),* $(,)?) => {
                $(if let Some(value) = overlay.$field {
                    self.$field = Some(value);
                })*
            };
        }
        macro_rules! set {
            ($($field:ident),* $(,)?) => {
                $(if let Some(value) = overlay.$field {
                    self.$field = value;
                })*
            };
        }
        take!(data, out, ckpt);
        set!(
            format,
            window,
            min_count,
            test_fraction,
            recent_days,
            dim,
            batch_size,
            lr,
            epochs,
            nce_k,
            noise_power,
            adagrad_epsilon,
            batch_mean,
            seed,
            variant,
            k,
            topk,
            windows,
            threads,
        );
    }

    /// Defaults, overlaid with the config file (if any), overlaid with the
    /// explicitly set flags.
    pub fn resolve(config_file: Option<&Path>, flags: ConfigOverlay) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            let overlay: ConfigOverlay = serde_json::from_str(&text)
                .with_context(|| format!("cannot parse config file {}", path.display()))?;
            config.apply(overlay);
        }
        config.apply(flags);
        Ok(config)
    }

    pub fn prep_options(&self) -> PrepOptions {
        PrepOptions {
            window: self.window,
            min_count: self.min_count,
            test_fraction: self.test_fraction,
            recent_days: self.recent_days,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            nce_k: self.nce_k,
            noise_power: self.noise_power,
            seed: self.seed,
            variant: self.variant,
            dim: self.dim,
            adagrad_epsilon: self.adagrad_epsilon,
            batch_mean: self.batch_mean,
        }
    }
}

/// Writes the effective config next to an artifact as
/// `<artifact>.config.json`.
pub fn write_config_echo(config: &RunConfig, artifact: &Path) -> Result<PathBuf> {
    let mut name = artifact.as_os_str().to_os_string();
    name.push(".config.json");
    let path = PathBuf::from(name);
    let mut json = serde_json::to_string_pretty(config)?;
    json.push('\n');
    std::fs::write(&path, json)
        .with_context(|| format!("cannot write config echo {}", path.display()))?;
    Ok(path)
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nested_fdon::metrics::FieldKind;
use nested_fdon::model::ArchSpec;
use nested_fdon::nested::{in_channels, NestedModelSet};
use nested_fdon::study::StudyConfig;
use nested_fdon::synth::GenConfig;
use nested_fdon::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Fine-tuning settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    /// Models to tune, e.g. `["P1", "P4", "S1", "S2"]`; empty selects the default set.
    pub targets: Vec<String>,
    pub noise_seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            targets: Vec::new(),
            noise_seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub time_batches: Vec<usize>,
    /// Number of training samples in the sweep.
    pub samples: usize,
    pub epochs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            time_batches: vec![1, 2, 4, 6, 12, 24],
            samples: 4,
            epochs: 2,
        }
    }
}

/// The JSON run configuration shared by every subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset file; `<out>/dataset.ngcs` when absent.
    pub dataset: Option<PathBuf>,
    /// Checkpoint directory; `<out>/checkpoints` when absent.
    pub checkpoints: Option<PathBuf>,
    pub generation: GenConfig,
    /// Architecture overrides keyed by model name (`P0`, `S1`, ...).
    pub archs: BTreeMap<String, ArchSpec>,
    pub train: TrainConfig,
    /// Models to train; all levels of the dataset when empty.
    pub models: Vec<String>,
    /// Fraction of samples (taken from the end) held out for testing.
    pub test_fraction: f64,
    pub finetune: FinetuneConfig,
    pub study: StudyConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            checkpoints: None,
            generation: GenConfig::default(),
            archs: BTreeMap::new(),
            train: TrainConfig::default(),
            models: Vec::new(),
            test_fraction: 0.2,
            finetune: FinetuneConfig::default(),
            study: StudyConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

pub fn model_name(kind: FieldKind, level: usize) -> String {
    format!("{}{level}", kind.short())
}

pub fn parse_model_name(name: &str) -> Result<(FieldKind, usize), CliError> {
    let bad = || CliError::config("models", format!("`{name}` is not a model name like P0 or S2"));
    let (k, l) = name.split_at(1.min(name.len()));
    let kind = match k {
        "P" => FieldKind::Pressure,
        "S" => FieldKind::Saturation,
        _ => return Err(bad()),
    };
    let level: usize = l.parse().map_err(|_| bad())?;
    if kind == FieldKind::Saturation && level == 0 {
        return Err(CliError::config("models", "there is no level-0 saturation model"));
    }
    Ok((kind, level))
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| CliError::config("config", format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(CliError::config("test_fraction", "must lie in (0, 1)"));
        }
        for name in self.archs.keys().chain(&self.models).chain(&self.finetune.targets) {
            parse_model_name(name)?;
        }
        if self.bench.time_batches.is_empty() || self.bench.samples == 0 {
            return Err(CliError::config("bench", "needs time batches and at least one sample"));
        }
        Ok(())
    }

    pub fn dataset_path(&self, out: &Path) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| out.join("dataset.ngcs"))
    }

    pub fn checkpoint_dir(&self, out: &Path) -> PathBuf {
        self.checkpoints.clone().unwrap_or_else(|| out.join("checkpoints"))
    }

    /// Architecture of one model: the override if present, else the toy preset.
    pub fn arch(&self, geometry: &nested_fdon::geometry::Geometry, kind: FieldKind, level: usize) -> ArchSpec {
        self.archs
            .get(&model_name(kind, level))
            .cloned()
            .unwrap_or_else(|| ArchSpec::toy(geometry.grid(level), in_channels(level)))
    }

    pub fn model_set(&self, geometry: &nested_fdon::geometry::Geometry, seed: u64) -> Result<NestedModelSet, CliError> {
        Ok(NestedModelSet::build(geometry, |l, k| self.arch(geometry, k, l), seed)?)
    }
}

//! Every tunable knob of the pipeline in one TOML-serializable structure.
//!
//! Values are layered: built-in defaults, then a config file, then
//! command-line overrides. A config file only needs the keys it changes:
//!
//! ```toml
//! seed = 7
//! [model]
//! hidden_dim = 64
//! [miner.spans]
//! similarity_threshold = 0.45
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::SplitSpec;
use crate::detect::DetectionConfig;
use crate::error::{Error, Result};
use crate::ingest::Format;
use crate::models::{ModelConfig, TrainConfig};
use crate::synth::AnomalySpec;
use crate::template_miner::MinerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputConfig {
    pub format: Format,
    /// Optional adapter TOML binding external column names.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<PathBuf>,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig {
            format: Format::Jsonl,
            adapter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinerSection {
    pub logs: MinerConfig,
    pub spans: MinerConfig,
}

impl Default for MinerSection {
    fn default() -> Self {
        MinerSection {
            logs: MinerConfig::for_logs(),
            spans: MinerConfig::for_spans(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Word slots per log template.
    pub max_log_size: usize,
    /// Word slots per span template.
    pub max_span_size: usize,
    pub window_size: usize,
    pub max_block_logs: usize,
    /// History length of the logs-only model.
    pub log_history: usize,
    pub train_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            max_log_size: 32,
            max_span_size: 16,
            window_size: 3,
            max_block_logs: 32,
            log_history: 10,
            train_fraction: 0.7,
        }
    }
}

impl DatasetConfig {
    pub fn split(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_traces: usize,
    pub anomaly: AnomalySpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_traces: 2000,
            anomaly: AnomalySpec::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub input: InputConfig,
    pub miner: MinerSection,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub detect: DetectionConfig,
    pub synth: SynthConfig,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Defaults overlaid with the keys present in `text`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let over: toml::Value =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        let mut base = toml::Value::try_from(RunConfig::default())
            .map_err(|e| Error::Config(format!("config defaults: {e}")))?;
        merge(&mut base, over);
        let cfg: RunConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Applies the seed everywhere a seed is consumed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.miner.logs.validate()?;
        self.miner.spans.validate()?;
        self.model.validate()?;
        self.detect.validate()?;
        let d = &self.dataset;
        if d.max_log_size == 0 || d.max_span_size == 0 {
            return Err(Error::Config("template sizes must be positive".into()));
        }
        if d.window_size == 0 || d.max_block_logs == 0 || d.log_history == 0 {
            return Err(Error::Config(
                "window_size, max_block_logs and log_history must be positive".into(),
            ));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} not in (0, 1)",
                d.train_fraction
            )));
        }
        if self.train.batch_size == 0 || self.train.epochs == 0 {
            return Err(Error::Config(
                "batch_size and epochs must be positive".into(),
            ));
        }
        let lr = self.train.learning_rate;
        if lr.is_nan() || lr <= 0.0 || !(0.0..1.0).contains(&self.train.momentum) {
            return Err(Error::Config(
                "learning_rate must be positive and momentum in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

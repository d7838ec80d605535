use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ConfigError;
use crate::grpo::GrpoConfig;
use crate::metrics::{BleuConfig, ChrfConfig, RewardWeights};
use crate::policy::{ModelConfig, SamplingConfig};
use crate::roundtrip::{substream, CreditScope, RewardSettings, TrainSettings, WarmStartConfig};
use crate::synthdata::BenchmarkSpec;

/// Where the corpora come from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Synthetic benchmark, used when `corpus_dir` is absent.
    pub benchmark: BenchmarkSpec,
    /// Directory in the layout written by `gen-data`.
    pub corpus_dir: Option<PathBuf>,
}

/// Model shape; the vocabulary size is taken from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    pub tie_embeddings: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSettings {
            d_model: m.d_model,
            heads: m.heads,
            d_ff: m.d_ff,
            max_positions: m.max_positions,
            tie_embeddings: m.tie_embeddings,
        }
    }
}

impl ModelSettings {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            heads: self.heads,
            d_ff: self.d_ff,
            max_positions: self.max_positions,
            tie_embeddings: self.tie_embeddings,
            ..ModelConfig::default()
        }
    }
}

/// Sampler settings; the random stream comes from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSettings {
    pub temperature: f64,
    pub top_k: usize,
    pub top_p: f64,
    pub max_len: usize,
}

impl Default for SamplingSettings {
    fn default() -> Self {
        let s = SamplingConfig::default();
        SamplingSettings { temperature: s.temperature, top_k: s.top_k, top_p: s.top_p, max_len: s.max_len }
    }
}

impl SamplingSettings {
    pub fn sampling_config(&self) -> SamplingConfig {
        SamplingConfig {
            temperature: self.temperature,
            top_k: self.top_k,
            top_p: self.top_p,
            max_len: self.max_len,
            seed: 0,
        }
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random stream is derived from it by name.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub max_steps: Option<usize>,
    pub credit_scope: CreditScope,
    /// Add-k constant of the fluency trigram LM.
    pub fluency_add_k: f64,
    pub data: DataConfig,
    pub model: ModelSettings,
    pub warm_start: WarmStartConfig,
    pub grpo: GrpoConfig,
    pub sampling: SamplingSettings,
    pub reward: RewardWeights,
    pub chrf: ChrfConfig,
    pub bleu: BleuConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            output_dir: PathBuf::from("runs/default"),
            eval_every: 100,
            checkpoint_every: 500,
            max_steps: None,
            credit_scope: CreditScope::default(),
            fluency_add_k: 0.1,
            data: DataConfig::default(),
            model: ModelSettings::default(),
            warm_start: WarmStartConfig::default(),
            grpo: GrpoConfig::default(),
            sampling: SamplingSettings::default(),
            reward: RewardWeights::default(),
            chrf: ChrfConfig::default(),
            bleu: BleuConfig::default(),
        }
    }
}

/// Names of the random substreams derived from the master seed.
pub const SEED_STREAMS: [&str; 3] = ["init", "warm_start", "train"];

impl RunConfig {
    /// Parses TOML, applies `key.path=value` overrides and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let field =
            |f: &str, e: &dyn std::fmt::Display| ConfigError::Invalid { field: f.into(), message: e.to_string() };
        self.data.benchmark.validate().map_err(|e| field("data.benchmark", &e))?;
        self.model.model_config(16).validate().map_err(|e| field("model", &e))?;
        self.warm_start.validate().map_err(|e| field("warm_start", &e))?;
        self.grpo.validate().map_err(|e| field("grpo", &e))?;
        self.sampling.sampling_config().validate().map_err(|e| field("sampling", &e))?;
        self.reward.validate().map_err(|e| field("reward", &e))?;
        self.chrf.validate().map_err(|e| field("chrf", &e))?;
        self.bleu.validate().map_err(|e| field("bleu", &e))?;
        if !(self.fluency_add_k > 0.0 && self.fluency_add_k.is_finite()) {
            return Err(field("fluency_add_k", &"must be positive"));
        }
        if self.sampling.max_len + 1 > self.model.max_positions {
            return Err(field("sampling.max_len", &"back-translation inputs must fit in model.max_positions"));
        }
        Ok(())
    }

    pub fn stream_seed(&self, name: &str) -> u64 {
        substream(self.seed, name)
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            grpo: self.grpo.clone(),
            sampling: self.sampling.sampling_config(),
            reward: RewardSettings { weights: self.reward, chrf: self.chrf, bleu: self.bleu },
            credit_scope: self.credit_scope,
            eval_every: self.eval_every,
            checkpoint_every: self.checkpoint_every,
            max_steps: self.max_steps,
            seed: self.stream_seed("train"),
        }
    }
}

/// Sets a dotted key such as `grpo.learning_rate=1e-4`. The value is read
/// as a TOML literal, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse(format!("override {assignment:?} is not key=value")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut node = table;
    for p in path {
        let entry = node.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Parse(format!("override {key:?}: {p:?} is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

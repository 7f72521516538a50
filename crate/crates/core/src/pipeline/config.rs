//! Experiment configuration: one TOML file, flags layered on top.
//!
//! Precedence is flags > file > `PHONMAP_SEED` > built-in defaults; the
//! environment variable only replaces the default seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::models::{AsrConfig, PtnConfig, TrainConfig};
use crate::synth::{minutes_to_frames, PairConfig};

pub const DEFAULT_SEED: u64 = 7;
pub const SEED_ENV: &str = "PHONMAP_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub dim: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub overlap: f64,
    pub sigma: f64,
    pub mean_scale: f64,
    pub min_duration: usize,
    pub max_duration: usize,
    /// Symbols per utterance.
    pub min_length: usize,
    pub max_length: usize,
    /// Training budgets in synthetic minutes (100 frames per second).
    pub source_minutes: f64,
    pub target_minutes: f64,
    pub dev_utterances: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let pair = PairConfig::default();
        Self {
            dim: pair.dim,
            n_source: pair.n_source,
            n_target: pair.n_target,
            overlap: pair.overlap,
            sigma: pair.sigma,
            mean_scale: pair.mean_scale,
            min_duration: pair.min_duration,
            max_duration: pair.max_duration,
            min_length: 5,
            max_length: 15,
            source_minutes: 30.0,
            target_minutes: 15.0,
            dev_utterances: 100,
        }
    }
}

impl SynthSection {
    pub fn pair(&self) -> PairConfig {
        PairConfig {
            dim: self.dim,
            n_source: self.n_source,
            n_target: self.n_target,
            overlap: self.overlap,
            sigma: self.sigma,
            mean_scale: self.mean_scale,
            min_duration: self.min_duration,
            max_duration: self.max_duration,
        }
    }

    pub fn source_frames(&self) -> usize {
        minutes_to_frames(self.source_minutes)
    }

    pub fn target_frames(&self) -> usize {
        minutes_to_frames(self.target_minutes)
    }

    fn validate(&self) -> Result<()> {
        self.pair().validate()?;
        if self.min_length == 0 {
            return Err(Error::config("synthlang.min_length", "must be at least 1"));
        }
        if self.max_length < self.min_length {
            return Err(Error::config("synthlang.max_length", "must be >= min_length"));
        }
        for (key, v) in [("source_minutes", self.source_minutes), ("target_minutes", self.target_minutes)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("synthlang.{key}"), "must be positive"));
            }
        }
        if self.dev_utterances == 0 {
            return Err(Error::config("synthlang.dev_utterances", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsrSection {
    pub hidden: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
}

impl Default for AsrSection {
    fn default() -> Self {
        let model = AsrConfig::new(1, 1);
        let train = TrainConfig::default();
        Self {
            hidden: model.hidden,
            blocks: model.blocks,
            kernel: model.kernel,
            epochs: 50,
            patience: train.patience,
            learning_rate: train.learning_rate,
        }
    }
}

impl AsrSection {
    pub fn model(&self, input_dim: usize, n_symbols: usize) -> AsrConfig {
        AsrConfig {
            input_dim,
            n_symbols,
            hidden: self.hidden,
            blocks: self.blocks,
            kernel: self.kernel,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            patience: self.patience,
            learning_rate: self.learning_rate,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("asr.hidden", "must be at least 1"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config("asr.kernel", "must be odd"));
        }
        self.train().validate("asr")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PtnSection {
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
}

impl Default for PtnSection {
    fn default() -> Self {
        let model = PtnConfig::new(1, 1);
        let train = TrainConfig::default();
        Self {
            hidden: model.hidden,
            dropout: model.dropout,
            epochs: 100,
            patience: train.patience,
            learning_rate: train.learning_rate,
        }
    }
}

impl PtnSection {
    pub fn model(&self, n_source: usize, n_target: usize) -> PtnConfig {
        PtnConfig {
            n_source,
            n_target,
            hidden: self.hidden,
            dropout: self.dropout,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            patience: self.patience,
            learning_rate: self.learning_rate,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("ptn.hidden", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("ptn.dropout", "must be in [0, 1)"));
        }
        self.train().validate("ptn")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingSection {
    /// Transformation threshold.
    pub xi: f64,
    /// Weight of the uniform distribution mixed into each probe.
    pub smoothing: f64,
}

impl Default for MappingSection {
    fn default() -> Self {
        Self { xi: 0.4, smoothing: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Separate,
    Unified,
    Learned,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separate" => Ok(Self::Separate),
            "unified" => Ok(Self::Unified),
            "learned" => Ok(Self::Learned),
            other => Err(Error::config(
                "embedding.strategy",
                format!("unknown strategy `{other}` (separate, unified, learned)"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub dim: usize,
    pub strategy: Strategy,
    /// Handcrafted correspondence for `unified`; the generated reference
    /// mapping when absent.
    pub unified_table: Option<PathBuf>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            dim: 16,
            strategy: Strategy::Learned,
            unified_table: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub baseline_trials: usize,
    /// Thresholds re-scored from the stored probe distributions.
    pub xi_sweep: Vec<f64>,
    /// Dev utterances summarized in the posteriorgram report.
    pub report_utterances: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            baseline_trials: 100_000,
            xi_sweep: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            report_utterances: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub synthlang: SynthSection,
    pub asr: AsrSection,
    pub ptn: PtnSection,
    pub mapping: MappingSection,
    pub embedding: EmbeddingSection,
    pub evaluation: EvaluationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            output_dir: PathBuf::from("phonmap-run"),
            synthlang: SynthSection::default(),
            asr: AsrSection::default(),
            ptn: PtnSection::default(),
            mapping: MappingSection::default(),
            embedding: EmbeddingSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

/// Pipeline stages in execution order. Each stage's configuration scope
/// covers its own section and everything upstream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Data,
    Asr,
    Ptn,
    Mapping,
    Embeddings,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Asr => "asr",
            Stage::Ptn => "ptn",
            Stage::Mapping => "mapping",
            Stage::Embeddings => "embeddings",
            Stage::Eval => "eval",
        }
    }

    pub fn command(self) -> &'static str {
        match self {
            Stage::Data => "gen-data",
            Stage::Asr => "train-asr",
            Stage::Ptn => "train-ptn",
            Stage::Mapping => "discover-map",
            Stage::Embeddings => "transfer-embeddings",
            Stage::Eval => "eval-map",
        }
    }

    /// Stages whose artifacts this one reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Data => &[],
            Stage::Asr => &[Stage::Data],
            Stage::Ptn => &[Stage::Data, Stage::Asr],
            Stage::Mapping => &[Stage::Data, Stage::Asr, Stage::Ptn],
            Stage::Embeddings => &[Stage::Data, Stage::Asr, Stage::Ptn, Stage::Mapping],
            Stage::Eval => &[Stage::Data, Stage::Asr, Stage::Ptn, Stage::Mapping],
        }
    }

    fn sections(self) -> &'static [&'static str] {
        match self {
            Stage::Data => &["seed", "synthlang"],
            Stage::Asr => &["seed", "synthlang", "asr"],
            Stage::Ptn => &["seed", "synthlang", "asr", "ptn"],
            Stage::Mapping => &["seed", "synthlang", "asr", "ptn", "mapping"],
            Stage::Embeddings => &["seed", "synthlang", "asr", "ptn", "mapping", "embedding"],
            Stage::Eval => &["seed", "synthlang", "asr", "ptn", "mapping", "evaluation"],
        }
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().filter(|l| !l.is_empty()).ok_or_else(|| Error::config(key, "empty key"))?;
    let mut table = root;
    for part in parts {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not a section")))?;
    }
    table.insert(leaf.to_string(), value);
    Ok(())
}

/// Reads `raw` as a TOML literal, falling back to a bare string.
fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn describe_toml_error(e: &toml::de::Error) -> (String, String) {
    // toml reports unknown keys and type errors with the offending key in the message.
    let msg = e.message().to_string();
    let key = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<file>".to_string());
    (key, msg)
}

/// Rejects keys the configuration does not define, naming them by full path.
fn check_keys(table: &toml::Table, known: &serde_json::Map<String, serde_json::Value>, prefix: &str) -> Result<()> {
    for (key, value) in table {
        let path = format!("{prefix}{key}");
        match known.get(key) {
            None => return Err(Error::config(path, "unknown key")),
            Some(serde_json::Value::Object(inner)) => {
                if let toml::Value::Table(t) = value {
                    check_keys(t, inner, &format!("{path}."))?;
                }
            }
            Some(_) => {}
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Builds the effective configuration from an optional file's text, the
    /// seed environment variable, and `key=value` overrides.
    pub fn resolve(file_text: Option<&str>, env_seed: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = match file_text {
            Some(text) => toml::from_str(text).map_err(|e| {
                let (key, msg) = describe_toml_error(&e);
                Error::config(key, msg)
            })?,
            None => toml::Table::new(),
        };
        if !table.contains_key("seed") {
            if let Some(raw) = env_seed {
                let seed: u64 = raw
                    .trim()
                    .parse()
                    .map_err(|_| Error::config("seed", format!("{SEED_ENV}=`{raw}` is not an unsigned integer")))?;
                table.insert("seed".into(), toml::Value::Integer(seed as i64));
            }
        }
        for (key, raw) in overrides {
            set_path(&mut table, key, parse_literal(raw))?;
        }
        check_keys(&table, &Self::default().canonical_with_output_dir(), "")?;
        let config: Self = serde_path_to_error::deserialize(toml::Value::Table(table))
            .map_err(|e| Error::config(e.path().to_string(), e.inner().message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, env_seed: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        Self::resolve(text.as_deref(), env_seed, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.synthlang.validate()?;
        self.asr.validate()?;
        self.ptn.validate()?;
        if !(0.0..1.0).contains(&self.mapping.xi) {
            return Err(Error::config("mapping.xi", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.mapping.smoothing) {
            return Err(Error::config("mapping.smoothing", "must be in [0, 1)"));
        }
        if self.embedding.dim == 0 {
            return Err(Error::config("embedding.dim", "must be at least 1"));
        }
        if self.evaluation.baseline_trials < 2 {
            return Err(Error::config("evaluation.baseline_trials", "must be at least 2"));
        }
        if let Some(bad) = self.evaluation.xi_sweep.iter().find(|x| !(0.0..1.0).contains(*x)) {
            return Err(Error::config("evaluation.xi_sweep", format!("{bad} is outside [0, 1)")));
        }
        if self.evaluation.report_utterances == 0 {
            return Err(Error::config("evaluation.report_utterances", "must be at least 1"));
        }
        Ok(())
    }

    fn canonical_with_output_dir(&self) -> serde_json::Map<String, serde_json::Value> {
        let serde_json::Value::Object(map) = serde_json::to_value(self).expect("config serializes") else {
            unreachable!("config is a struct")
        };
        map
    }

    /// Canonical JSON without `output_dir`; object keys are sorted.
    fn canonical(&self) -> serde_json::Map<String, serde_json::Value> {
        let mut map = self.canonical_with_output_dir();
        map.remove("output_dir");
        map
    }

    /// SHA-256 of the canonical configuration.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::Value::Object(self.canonical()).to_string().as_bytes())
    }

    /// Digest of the sections `stage` depends on.
    pub fn stage_digest(&self, stage: Stage) -> String {
        let full = self.canonical();
        let scoped: serde_json::Map<_, _> = stage
            .sections()
            .iter()
            .map(|k| (k.to_string(), full[*k].clone()))
            .collect();
        sha256_hex(serde_json::Value::Object(scoped).to_string().as_bytes())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("<config>", e.to_string()))
    }
}

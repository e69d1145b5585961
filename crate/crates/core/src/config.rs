//! Experiment configuration as flat `section.key = value` text.
//!
//! The canonical text lists every key in a fixed order; its SHA-256 (first
//! 16 hex digits) is the config hash stamped into every output.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::ClipMode;
use crate::causal::{EvalProtocol, MeConfig};
use crate::dataset::SplitCounts;
use crate::probe::ProbeConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("{key}: cannot parse {value:?}")]
    Value { key: String, value: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub seed: u64,
    pub counts: SplitCounts,
    /// Category table path; empty for the shipped table.
    pub table: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            counts: SplitCounts::default(),
            table: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Master seed for training and analysis.
    pub seed: u64,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub me: MeConfig,
    pub eval: EvalProtocol,
    pub probe: ProbeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            me: MeConfig::default(),
            eval: EvalProtocol::default(),
            probe: ProbeConfig::default(),
        }
    }
}

fn f(v: f64) -> String {
    format!("{v:?}")
}

impl ExperimentConfig {
    fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let p = &self.probe;
        vec![
            ("seed", self.seed.to_string()),
            ("data.seed", self.data.seed.to_string()),
            ("data.train_samples", self.data.counts.train.to_string()),
            ("data.other_samples", self.data.counts.other.to_string()),
            ("data.table", self.data.table.clone()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.total_batches", t.total_batches.to_string()),
            ("train.learning_rate", f(t.rmsprop.lr)),
            ("train.rmsprop_decay", f(t.rmsprop.decay)),
            ("train.rmsprop_eps", f(t.rmsprop.eps)),
            ("train.clip", f(t.clip)),
            ("train.clip_mode", t.clip_mode.as_str().to_string()),
            ("train.validation_every", t.validation_every.to_string()),
            ("train.validation_games", t.validation_games.to_string()),
            ("train.success_threshold", f(t.success_threshold)),
            ("train.credit_unheard", t.credit_unheard.to_string()),
            ("game.memory", t.memory.to_string()),
            ("game.communication", t.communication.to_string()),
            ("game.max_turns", t.max_turns.to_string()),
            ("me.k", self.me.k.to_string()),
            ("me.j", self.me.j.to_string()),
            ("me.theta", f(self.me.theta)),
            ("me.exhaustive", self.me.exhaustive.to_string()),
            ("eval.test_seeds", self.eval.test_seeds.to_string()),
            (
                "eval.batches_per_config",
                self.eval.batches_per_config.to_string(),
            ),
            (
                "eval.games_per_batch",
                self.eval.games_per_batch.to_string(),
            ),
            ("probe.embedding", p.embedding.to_string()),
            ("probe.hidden", p.hidden.to_string()),
            ("probe.partition_seeds", p.partition_seeds.to_string()),
            ("probe.epochs", p.epochs.to_string()),
            ("probe.patience", p.patience.to_string()),
            ("probe.batch_size", p.batch_size.to_string()),
            ("probe.learning_rate", f(p.rmsprop.lr)),
            ("probe.train_fraction", f(p.train_fraction)),
            ("probe.validation_fraction", f(p.validation_fraction)),
            ("probe.games", p.games.to_string()),
        ]
    }

    /// Canonical text: every key, fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: i + 1,
                msg: "expected key = value".into(),
            })?;
            c.set(k.trim(), v.trim())?;
        }
        Ok(c)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn p<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::Value {
                key: key.to_string(),
                value: value.to_string(),
            })
        }
        let t = &mut self.train;
        let pr = &mut self.probe;
        match key {
            "seed" => self.seed = p(key, value)?,
            "data.seed" => self.data.seed = p(key, value)?,
            "data.train_samples" => self.data.counts.train = p(key, value)?,
            "data.other_samples" => self.data.counts.other = p(key, value)?,
            "data.table" => self.data.table = value.to_string(),
            "train.batch_size" => t.batch_size = p(key, value)?,
            "train.total_batches" => t.total_batches = p(key, value)?,
            "train.learning_rate" => t.rmsprop.lr = p(key, value)?,
            "train.rmsprop_decay" => t.rmsprop.decay = p(key, value)?,
            "train.rmsprop_eps" => t.rmsprop.eps = p(key, value)?,
            "train.clip" => t.clip = p(key, value)?,
            "train.clip_mode" => {
                t.clip_mode = ClipMode::parse(value).ok_or_else(|| ConfigError::Value {
                    key: key.to_string(),
                    value: value.to_string(),
                })?
            }
            "train.validation_every" => t.validation_every = p(key, value)?,
            "train.validation_games" => t.validation_games = p(key, value)?,
            "train.success_threshold" => t.success_threshold = p(key, value)?,
            "train.credit_unheard" => t.credit_unheard = p(key, value)?,
            "game.memory" => t.memory = p(key, value)?,
            "game.communication" => t.communication = p(key, value)?,
            "game.max_turns" => t.max_turns = p(key, value)?,
            "me.k" => self.me.k = p(key, value)?,
            "me.j" => self.me.j = p(key, value)?,
            "me.theta" => self.me.theta = p(key, value)?,
            "me.exhaustive" => self.me.exhaustive = p(key, value)?,
            "eval.test_seeds" => self.eval.test_seeds = p(key, value)?,
            "eval.batches_per_config" => self.eval.batches_per_config = p(key, value)?,
            "eval.games_per_batch" => self.eval.games_per_batch = p(key, value)?,
            "probe.embedding" => pr.embedding = p(key, value)?,
            "probe.hidden" => pr.hidden = p(key, value)?,
            "probe.partition_seeds" => pr.partition_seeds = p(key, value)?,
            "probe.epochs" => pr.epochs = p(key, value)?,
            "probe.patience" => pr.patience = p(key, value)?,
            "probe.batch_size" => pr.batch_size = p(key, value)?,
            "probe.learning_rate" => pr.rmsprop.lr = p(key, value)?,
            "probe.train_fraction" => pr.train_fraction = p(key, value)?,
            "probe.validation_fraction" => pr.validation_fraction = p(key, value)?,
            "probe.games" => pr.games = p(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex::encode(&digest[..8])
    }

    /// The header line stamped into output files.
    pub fn stamp(&self) -> String {
        format!("# config_hash={} seed={}", self.hash(), self.seed)
    }
}

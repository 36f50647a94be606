use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::centrality::CentralityMeasure;
use crate::models::{AggregationScope, Arch, ModelConfig, Normalization};
use crate::scheduler::Order;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {msg}")]
    Value {
        key: String,
        value: String,
        msg: String,
    },
    #[error("{0}")]
    Invalid(String),
}

/// How nodes are batched into layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Camp,
    Ramp,
    Sync,
}

impl FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "camp" => Ok(RunMode::Camp),
            "ramp" => Ok(RunMode::Ramp),
            "sync" => Ok(RunMode::Sync),
            _ => Err("expected camp, ramp or sync".into()),
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Camp => "camp",
            RunMode::Ramp => "ramp",
            RunMode::Sync => "sync",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub data_dir: PathBuf,
    pub arch: Arch,
    pub layers: usize,
    pub hidden_dim: usize,
    pub measure: Option<CentralityMeasure>,
    pub order: Order,
    pub p: f64,
    pub mode: RunMode,
    pub lr: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub scope: AggregationScope,
    /// `None` picks the architecture default.
    pub normalization: Option<Normalization>,
    /// Redraw sampled or random schedules every epoch.
    pub resample_per_epoch: bool,
    pub output_dir: PathBuf,
    pub run_id: Option<String>,
    pub save_checkpoint: bool,
    /// Worker threads for trials; 0 lets the pool decide.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "MUTAG".into(),
            data_dir: "data".into(),
            arch: Arch::Gcn,
            layers: 4,
            hidden_dim: 64,
            measure: None,
            order: Order::Descending,
            p: 1.0,
            mode: RunMode::Sync,
            lr: 1e-3,
            dropout: 0.5,
            weight_decay: 1e-5,
            batch_size: 64,
            epochs: 200,
            trials: 25,
            base_seed: 0,
            scope: AggregationScope::AllNeighbors,
            normalization: None,
            resample_per_epoch: false,
            output_dir: "results".into(),
            run_id: None,
            save_checkpoint: false,
            threads: 0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        msg: e.to_string(),
    })
}

/// `none` (or an empty value) means unset.
fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    match value.to_ascii_lowercase().as_str() {
        "none" | "" => Ok(None),
        _ => parse_value(key, value).map(Some),
    }
}

fn optional_text<T: fmt::Display>(v: &Option<T>, empty: &str) -> String {
    v.as_ref().map_or(empty.to_string(), T::to_string)
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "dataset",
        "data_dir",
        "arch",
        "layers",
        "hidden_dim",
        "measure",
        "order",
        "p",
        "mode",
        "lr",
        "dropout",
        "weight_decay",
        "batch_size",
        "epochs",
        "trials",
        "base_seed",
        "scope",
        "normalization",
        "resample_per_epoch",
        "output_dir",
        "run_id",
        "save_checkpoint",
        "threads",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key.trim() {
            "dataset" => self.dataset = value.into(),
            "data_dir" => self.data_dir = value.into(),
            "arch" => self.arch = parse_value(key, value)?,
            "layers" | "L" => self.layers = parse_value(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, value)?,
            "measure" => self.measure = parse_optional(key, value)?,
            "order" => self.order = parse_value(key, value)?,
            "p" => self.p = parse_value(key, value)?,
            "mode" => self.mode = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "trials" => self.trials = parse_value(key, value)?,
            "base_seed" => self.base_seed = parse_value(key, value)?,
            "scope" => self.scope = parse_value(key, value)?,
            "normalization" => {
                self.normalization = match value.to_ascii_lowercase().as_str() {
                    "auto" | "" => None,
                    _ => Some(parse_value(key, value)?),
                }
            }
            "resample_per_epoch" => self.resample_per_epoch = parse_value(key, value)?,
            "output_dir" => self.output_dir = value.into(),
            "run_id" => self.run_id = parse_optional(key, value)?,
            "save_checkpoint" => self.save_checkpoint = parse_value(key, value)?,
            "threads" => self.threads = parse_value(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: kv.into(),
        })?;
        self.set(k, v)
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.into(),
            })?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dataset", self.dataset.clone()),
            ("data_dir", self.data_dir.display().to_string()),
            ("arch", self.arch.to_string()),
            ("layers", self.layers.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("measure", optional_text(&self.measure, "none")),
            ("order", self.order.to_string()),
            ("p", format!("{:?}", self.p)),
            ("mode", self.mode.to_string()),
            ("lr", format!("{:?}", self.lr)),
            ("dropout", format!("{:?}", self.dropout)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("trials", self.trials.to_string()),
            ("base_seed", self.base_seed.to_string()),
            ("scope", self.scope.to_string()),
            ("normalization", optional_text(&self.normalization, "auto")),
            ("resample_per_epoch", self.resample_per_epoch.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("run_id", optional_text(&self.run_id, "none")),
            ("save_checkpoint", self.save_checkpoint.to_string()),
            ("threads", self.threads.to_string()),
        ]
    }

    pub fn emit(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.dataset.is_empty() {
            return bad("dataset must be set");
        }
        if self.layers == 0
            || self.hidden_dim == 0
            || self.batch_size == 0
            || self.epochs == 0
            || self.trials == 0
        {
            return bad("layers, hidden_dim, batch_size, epochs and trials must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad("p must lie in (0, 1]");
        }
        match (self.mode, self.measure) {
            (RunMode::Camp, None) => return bad("mode = camp requires a centrality measure"),
            (RunMode::Ramp | RunMode::Sync, Some(_)) => {
                return bad("a centrality measure is only used with mode = camp")
            }
            _ => {}
        }
        if self.mode == RunMode::Sync && self.p != 1.0 {
            return bad("node sampling (p < 1) needs mode = camp or ramp");
        }
        if let Some(id) = &self.run_id {
            if id.contains(['/', '\\']) || id == ".." || id == "." {
                return bad("run_id must be a plain directory name");
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = ModelConfig::new(self.arch, self.layers, self.hidden_dim);
        m.dropout = self.dropout;
        m.scope = self.scope;
        if let Some(n) = self.normalization {
            m.normalization = n;
        }
        m.sync = self.mode == RunMode::Sync;
        m
    }

    /// `run_id`, or a name derived from the main settings.
    pub fn resolved_run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| {
            let measure = self.measure.map_or(String::new(), |m| format!("-{m}"));
            format!(
                "{}-{}-{}{}-L{}-p{}-{}-s{}",
                self.dataset,
                self.arch,
                self.mode,
                measure,
                self.layers,
                self.p,
                self.order,
                self.base_seed
            )
        })
    }
}

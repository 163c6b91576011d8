//! JSON experiment configs.
//!
//! ```json
//! {
//!   "system": "E",
//!   "params": { "kappa": -1.0 },
//!   "stages": [
//!     { "tags": ["flat:minkowski"], "epochs": 3000, "lr": [5e-3, 1e-3, 2e-4] }
//!   ],
//!   "seed": 0
//! }
//! ```
//!
//! Unknown keys are rejected. Omitted optional fields take the defaults
//! below (widths [128, 128], batch 2000, ε = 1e-3).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::DEFAULT_WIDTHS;
use crate::symmetry::SymmetrySpec;
use crate::systems::{SystemDef, SystemId, SystemParams};
use crate::trainer::{
    ExperimentOptions, NoiseFrame, StageConfig, StepGuard, DEFAULT_BATCH, DEFAULT_EPSILON,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column} (key `{key}`): {msg}")]
    Parse {
        key: String,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("invalid `{key}`: {msg}")]
    Invalid { key: String, msg: String },
}

impl ConfigError {
    /// Key path of the offending field, if the error has one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Parse { key, .. } | ConfigError::Invalid { key, .. } => Some(key),
            ConfigError::Io { .. } => None,
        }
    }
}

/// A learning rate or an anneal list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LrSpec {
    One(f64),
    Schedule(Vec<f64>),
}

impl LrSpec {
    fn to_vec(&self) -> Vec<f64> {
        match self {
            LrSpec::One(l) => vec![*l],
            LrSpec::Schedule(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageFile {
    pub tags: Vec<String>,
    pub epochs: usize,
    pub lr: LrSpec,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub sigma: f64,
}

fn default_batch() -> usize {
    DEFAULT_BATCH
}

fn default_widths() -> Vec<usize> {
    DEFAULT_WIDTHS.to_vec()
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_true() -> bool {
    true
}

fn default_frame() -> String {
    "transformed".into()
}

/// The on-disk form, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub system: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub stages: Vec<StageFile>,
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Write a checkpoint every this many epochs (0: only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Flush losses.csv every this many records.
    #[serde(default = "default_flush")]
    pub flush_every: usize,
    #[serde(default = "default_frame")]
    pub noise_frame: String,
    #[serde(default = "default_true")]
    pub step_guard: bool,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub log_every: Option<usize>,
}

fn default_flush() -> usize {
    100
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemDef,
    pub stages: Vec<StageConfig>,
    pub options: ExperimentOptions,
    pub out: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub flush_every: usize,
    /// The file as read, for echoing into reports.
    pub source: ConfigFile,
}

impl ExperimentConfig {
    /// Every distinct tag across stages, in first-use order.
    pub fn all_tags(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.stages {
            for t in &s.tags {
                if !out.contains(t) {
                    out.push(t.clone());
                }
            }
        }
        out
    }
}

impl fmt::Display for ConfigFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_string_pretty(self).map_err(|_| fmt::Error)?;
        f.write_str(&s)
    }
}

fn invalid(key: impl Into<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        msg: msg.into(),
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::Parse {
            key,
            line: inner.line(),
            column: inner.column(),
            msg: inner.to_string(),
        }
    })?;
    validate(file)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn validate(file: ConfigFile) -> Result<ExperimentConfig, ConfigError> {
    let id: SystemId = file
        .system
        .parse()
        .map_err(|e| invalid("system", format!("{e}")))?;
    let mut params = SystemParams::default();
    for (k, v) in &file.params {
        params
            .set(id, k, *v)
            .map_err(|e| invalid(format!("params.{k}"), e.to_string()))?;
    }
    let system = SystemDef::with_params(id, params);
    if file.stages.is_empty() {
        return Err(invalid("stages", "at least one stage required"));
    }
    let phase = system.phase_layout();
    let mut stages = Vec::with_capacity(file.stages.len());
    for (i, s) in file.stages.iter().enumerate() {
        if s.tags.is_empty() {
            return Err(invalid(format!("stages[{i}].tags"), "no symmetry tags"));
        }
        for (j, t) in s.tags.iter().enumerate() {
            SymmetrySpec::parse(t, system.kind(), system.dim(), &phase)
                .map_err(|e| invalid(format!("stages[{i}].tags[{j}]"), e.to_string()))?;
        }
        let lr = s.lr.to_vec();
        if lr.is_empty() || lr.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(invalid(format!("stages[{i}].lr"), "learning rates must be positive"));
        }
        if s.batch == 0 {
            return Err(invalid(format!("stages[{i}].batch"), "must be positive"));
        }
        if !(s.sigma >= 0.0) || !s.sigma.is_finite() {
            return Err(invalid(format!("stages[{i}].sigma"), "must be ≥ 0"));
        }
        stages.push(StageConfig {
            tags: s.tags.clone(),
            epochs: s.epochs,
            lr,
            batch: s.batch,
            seed: 0,
            sigma: s.sigma,
        });
    }
    if file.widths.is_empty() || file.widths.contains(&0) {
        return Err(invalid("widths", "need at least one positive width"));
    }
    if !(file.epsilon > 0.0) {
        return Err(invalid("epsilon", "must be positive"));
    }
    let noise_frame = NoiseFrame::parse(&file.noise_frame)
        .ok_or_else(|| invalid("noise_frame", "expected \"original\" or \"transformed\""))?;
    if file.threads == Some(0) {
        return Err(invalid("threads", "must be positive"));
    }
    if file.flush_every == 0 {
        return Err(invalid("flush_every", "must be positive"));
    }
    let options = ExperimentOptions {
        widths: file.widths.clone(),
        seed: file.seed,
        epsilon: file.epsilon,
        noise_frame,
        threads: file.threads,
        log_every: file.log_every,
        guard: file.step_guard.then(StepGuard::default),
        ..ExperimentOptions::default()
    };
    Ok(ExperimentConfig {
        system,
        stages,
        options,
        out: file.out.clone(),
        checkpoint_every: file.checkpoint_every,
        flush_every: file.flush_every,
        source: file,
    })
}

//! Run configuration: one TOML document with a section per subsystem.
//!
//! Every key has a default and unknown keys are rejected, so a typo in an
//! ablation script fails loudly instead of silently running the baseline.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::ControllerGains;
use crate::qnet::optim::OptimizerConfig;
use crate::qnet::{NetworkShape, RecurrentKind};
use crate::reward::RewardConfig;
use crate::sim::{SimParams, MAX_OTHER_VEHICLES};
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected section.key=value")]
    OverrideSyntax(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub h1: usize,
    pub h2: usize,
    pub h_ego: usize,
    pub h3: usize,
    pub h4: usize,
    /// Keep probability of the feed-forward dropout masks.
    pub dropout_keep: f64,
    pub precision: Precision,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let s = NetworkShape::default();
        Self { h1: s.h1, h2: s.h2, h_ego: s.h_ego, h3: s.h3, h4: s.h4, dropout_keep: 0.8, precision: Precision::F32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Training episodes between evaluation points.
    pub interval: usize,
    /// Greedy episodes per evaluation point.
    pub episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { interval: 300, episodes: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { name: "drqn".into(), seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub sim: SimParams,
    pub controller: ControllerGains,
    pub reward: RewardConfig,
    pub network: NetworkConfig,
    pub trainer: TrainConfig,
    pub optimizer: OptimizerConfig,
    pub eval: EvalConfig,
}

/// The part of the configuration a checkpoint depends on.
#[derive(Serialize)]
struct Fingerprint<'a> {
    sim: &'a SimParams,
    controller: &'a ControllerGains,
    reward: &'a RewardConfig,
    shape: NetworkShape,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load `path` (or the defaults when `None`) and apply `section.key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: String| ConfigError::Invalid { key: key.into(), message };
        self.sim.validate().map_err(|e| invalid("sim", e.to_string()))?;
        if self.sim.max_other_vehicles > MAX_OTHER_VEHICLES {
            return Err(invalid("sim.max_other_vehicles", format!("at most {MAX_OTHER_VEHICLES}")));
        }
        self.controller.validate().map_err(|e| invalid("controller", e))?;
        self.trainer.validate().map_err(|(k, m)| invalid(&format!("trainer.{k}"), m))?;
        let n = &self.network;
        if [n.h1, n.h2, n.h_ego, n.h3, n.h4].contains(&0) {
            return Err(invalid("network", "layer widths must be positive".into()));
        }
        if !(n.dropout_keep > 0.0 && n.dropout_keep <= 1.0) {
            return Err(invalid("network.dropout_keep", "must lie in (0, 1]".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && (0.0..1.0).contains(&o.decay) && o.epsilon > 0.0 && o.grad_clip > 0.0) {
            return Err(invalid("optimizer", "learning_rate, epsilon, grad_clip > 0 and decay in [0, 1)".into()));
        }
        if self.eval.interval == 0 {
            return Err(invalid("eval.interval", "must be positive".into()));
        }
        Ok(())
    }

    pub fn network_shape(&self) -> NetworkShape {
        let n = &self.network;
        NetworkShape {
            n_slots: MAX_OTHER_VEHICLES,
            vehicle_features: crate::percept::VEHICLE_FEATURES,
            n_actions: crate::control::N_ACTIONS,
            h1: n.h1,
            h2: n.h2,
            h_ego: n.h_ego,
            h3: n.h3,
            h4: n.h4,
            recurrent: if self.trainer.use_lstm { RecurrentKind::Lstm } else { RecurrentKind::Dense },
            shared: self.trainer.share_weights,
        }
    }

    /// SHA-256 over the environment, reward and network-shape settings.
    /// Checkpoints carry it so a policy is never rolled out in a different world.
    pub fn hash(&self) -> String {
        let fp = Fingerprint {
            sim: &self.sim,
            controller: &self.controller,
            reward: &self.reward,
            shape: self.network_shape(),
        };
        let text = toml::to_string(&fp).expect("fingerprint is serializable");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Set `section.key` in `doc` to `value`, parsed as a TOML value when possible
/// and taken as a bare string otherwise.
pub fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| ConfigError::OverrideSyntax(spec.into()))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::OverrideSyntax(spec.into()));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| ConfigError::Invalid {
            key: path.into(),
            message: format!("`{key}` is not a section"),
        })?;
        node = table.entry(key.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| ConfigError::Invalid { key: path.into(), message: "parent is not a section".into() })?;
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

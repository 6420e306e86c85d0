use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partitions::{classify, PartitionSpec, Side};
use crate::spef::SpefModel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message} (line {line}, column {column})")]
    Parse {
        path: PathBuf,
        message: String,
        line: usize,
        column: usize,
    },
    #[error("invalid `{field}`: {message}")]
    Invalid {
        field: &'static str,
        message: String,
    },
}

impl ConfigError {
    pub fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field,
            message: message.into(),
        }
    }
}

fn default_deltas() -> Vec<f64> {
    vec![0.1]
}
fn default_replications() -> usize {
    100
}
fn default_max_steps() -> u64 {
    1_000_000
}
fn default_risk_max_steps() -> u64 {
    100_000
}
fn default_c_const() -> f64 {
    std::f64::consts::E
}

/// A batch of Track-and-Stop runs on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub arms: Vec<SpefModel>,
    pub true_means: Vec<f64>,
    pub partition: PartitionSpec,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default = "default_c_const")]
    pub c_const: f64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub parallelism: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let k = self.arms.len();
        if k == 0 {
            return Err(ConfigError::invalid("arms", "at least one arm is required"));
        }
        for (i, m) in self.arms.iter().enumerate() {
            m.validate()
                .map_err(|e| ConfigError::invalid("arms", format!("arm {}: {e}", i + 1)))?;
        }
        if self.true_means.len() != k {
            return Err(ConfigError::invalid(
                "true_means",
                format!("{} values for {k} arms", self.true_means.len()),
            ));
        }
        for (i, (m, &x)) in self.arms.iter().zip(&self.true_means).enumerate() {
            m.check_mean(x)
                .map_err(|e| ConfigError::invalid("true_means", format!("arm {}: {e}", i + 1)))?;
        }
        self.partition
            .validate(k)
            .map_err(|e| ConfigError::invalid("partition", e.to_string()))?;
        match classify(&self.partition, &self.true_means) {
            Ok(Side::Boundary) => {
                return Err(ConfigError::invalid(
                    "true_means",
                    "the means lie on the partition boundary",
                ))
            }
            Err(e) => return Err(ConfigError::invalid("partition", e.to_string())),
            Ok(_) => {}
        }
        if self.deltas.is_empty() {
            return Err(ConfigError::invalid(
                "deltas",
                "at least one value is required",
            ));
        }
        if let Some(d) = self.deltas.iter().find(|&&d| !(d > 0.0 && d < 1.0)) {
            return Err(ConfigError::invalid(
                "deltas",
                format!("{d} is outside (0, 1)"),
            ));
        }
        if self.replications == 0 {
            return Err(ConfigError::invalid("replications", "must be at least 1"));
        }
        if self.max_steps < k as u64 {
            return Err(ConfigError::invalid(
                "max_steps",
                format!("{} is below the number of arms", self.max_steps),
            ));
        }
        if !(self.c_const > 0.0 && self.c_const.is_finite()) {
            return Err(ConfigError::invalid(
                "c_const",
                "must be positive and finite",
            ));
        }
        Ok(())
    }
}

/// Step distribution of the simulated factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorModel {
    /// Standard deviation of each random-walk increment.
    pub volatility: f64,
}

/// Map from a factor path prefix to the mean loss at that date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffMap {
    /// `Z_t = X_t`.
    #[default]
    Identity,
}

/// Nested-simulation estimate of `P(max_t Z_t >= u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskDemoConfig {
    pub n_outer: usize,
    /// Number of dates `K`, i.e. inner arms per path.
    pub horizon: usize,
    /// Loss threshold `u`.
    pub threshold: f64,
    pub inner_delta: f64,
    pub factor_model: FactorModel,
    #[serde(default)]
    pub payoff: PayoffMap,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_risk_max_steps")]
    pub max_steps: u64,
    #[serde(default = "default_c_const")]
    pub c_const: f64,
    #[serde(default)]
    pub parallelism: usize,
}

impl RiskDemoConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_outer == 0 {
            return Err(ConfigError::invalid("n_outer", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(ConfigError::invalid("horizon", "must be at least 1"));
        }
        if !self.threshold.is_finite() {
            return Err(ConfigError::invalid("threshold", "must be finite"));
        }
        if !(self.inner_delta > 0.0 && self.inner_delta < 1.0) {
            return Err(ConfigError::invalid("inner_delta", "must lie in (0, 1)"));
        }
        let v = self.factor_model.volatility;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(ConfigError::invalid(
                "factor_model",
                format!("volatility {v} must be finite and non-negative"),
            ));
        }
        if self.max_steps < self.horizon as u64 {
            return Err(ConfigError::invalid("max_steps", "is below the horizon"));
        }
        if !(self.c_const > 0.0 && self.c_const.is_finite()) {
            return Err(ConfigError::invalid(
                "c_const",
                "must be positive and finite",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Config {
    Experiment(ExperimentConfig),
    RiskDemo(RiskDemoConfig),
}

impl Config {
    pub fn seed_mut(&mut self) -> &mut u64 {
        match self {
            Config::Experiment(c) => &mut c.seed,
            Config::RiskDemo(c) => &mut c.seed,
        }
    }
}

/// Parses and validates a config document. Risk-demo configs are recognised
/// by their `n_outer` field.
pub fn parse_config_str(text: &str, path: &Path) -> Result<Config, ConfigError> {
    let parse_err = |e: serde_json::Error| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
        line: e.line(),
        column: e.column(),
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
    if value.get("n_outer").is_some() {
        let cfg: RiskDemoConfig = serde_json::from_str(text).map_err(parse_err)?;
        cfg.validate()?;
        Ok(Config::RiskDemo(cfg))
    } else {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(parse_err)?;
        cfg.validate()?;
        Ok(Config::Experiment(cfg))
    }
}

pub fn parse_config(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text, path)
}

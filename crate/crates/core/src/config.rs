//! Run configuration, read from a single TOML file.
//!
//! Every hyperparameter has a default, so an empty file is a valid config.
//! Section and key names follow the usual names of the hyperparameters
//! (`lambda_token`, `lambda_dpo_filter`, `beta`, `alpha`, `gamma`, `d`, `k`).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::influence::ProbeConfig;
use crate::mcts::{FilterConfig, SynthesisConfig};
use crate::policy::{RemoteConfig, ToySpec};
use crate::reward::RewardConfig;
use crate::selection::SelectConfig;
use crate::topology::TopologyGraph;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyBackend {
    #[default]
    Toy,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default)]
    pub backend: PolicyBackend,
    #[serde(default)]
    pub toy: ToySpec,
    /// Initial parameters are uniform in `[-init_scale, init_scale]`.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteConfig>,
}

fn default_init_scale() -> f64 {
    0.5
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { backend: PolicyBackend::Toy, toy: ToySpec::default(), init_scale: default_init_scale(), remote: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftInit {
    /// Each iteration restarts SFT from the initial parameters.
    #[default]
    FromInitial,
    /// Each iteration continues from the previous iteration's parameters.
    FromPrevious,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub samples_per_problem: usize,
    /// Kept trajectories need `r_task` strictly above this.
    pub reward_floor: f64,
    pub learn_rate: f64,
    pub epochs: usize,
    pub init: SftInit,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self { samples_per_problem: 8, reward_floor: 0.5, learn_rate: 1.0, epochs: 50, init: SftInit::FromInitial }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoConfig {
    pub beta: f64,
    pub learn_rate: f64,
    pub epochs: usize,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self { beta: 0.5, learn_rate: 1.0, epochs: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub iterations: usize,
    pub topology: TopologyGraph,
    pub policy: PolicyConfig,
    pub synthesis: SynthesisConfig,
    pub reward: RewardConfig,
    pub filter: FilterConfig,
    pub select: SelectConfig,
    pub probe: ProbeConfig,
    pub sft: SftConfig,
    pub dpo: DpoConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 1,
            topology: TopologyGraph::ping_pong(crate::env::FIRST_AGENT, crate::env::SECOND_AGENT, 2),
            policy: PolicyConfig::default(),
            synthesis: SynthesisConfig::default(),
            reward: RewardConfig::default(),
            filter: FilterConfig::default(),
            select: SelectConfig::default(),
            probe: ProbeConfig::default(),
            sft: SftConfig::default(),
            dpo: DpoConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.into(), message: locate(text, &e) })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 over the canonical TOML rendering.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.iterations < 1 {
            return invalid("iterations must be at least 1".into());
        }
        if let Err(e) = self.topology.unroll() {
            return invalid(format!("topology: {e}"));
        }
        if let Err(e) = self.synthesis.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.reward.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.select.validate() {
            return invalid(format!("select: {e}"));
        }
        if let Err(e) = self.probe.validate(usize::MAX) {
            return invalid(e.to_string());
        }
        let f = &self.filter;
        if !(f.keep_fraction > 0.0 && f.keep_fraction <= 1.0) {
            return invalid("filter.keep_fraction must lie in (0, 1]".into());
        }
        if self.policy.backend == PolicyBackend::Remote && self.policy.remote.is_none() {
            return invalid("policy.backend = \"remote\" needs a [policy.remote] section".into());
        }
        if self.policy.toy.templates.is_empty() {
            return invalid("policy.toy.templates is empty".into());
        }
        if self.policy.toy.sharing == crate::policy::Sharing::PerAgent && self.policy.toy.agents.is_empty() {
            return invalid("per_agent sharing needs policy.toy.agents".into());
        }
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.dpo.beta) || !pos(self.dpo.learn_rate) || !pos(self.sft.learn_rate) {
            return invalid("beta and learn rates must be positive".into());
        }
        if self.sft.samples_per_problem < 1 {
            return invalid("sft.samples_per_problem must be at least 1".into());
        }
        if !(self.policy.init_scale >= 0.0 && self.policy.init_scale.is_finite()) {
            return invalid("policy.init_scale must be non-negative".into());
        }
        Ok(())
    }
}

/// `line L, column C: message` for a TOML error.
fn locate(text: &str, err: &toml::de::Error) -> String {
    let message = err.message().trim().to_string();
    match err.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            format!("line {line}, column {column}: {message}")
        }
        None => message,
    }
}

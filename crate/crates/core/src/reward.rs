//! Trajectory reward: task score, minus a normalised token cost, plus an
//! inverse fluency term.
//!
//! `total = r_task − λ_token · r_token + λ_loss / r_loss`
//!
//! `r_token` divides a trajectory's token count by the longest trajectory in
//! its sibling set (all rollouts of the same problem in one search tree).
//! The fluency scorer is pluggable; the default returns the constant 1.0,
//! which shifts every reward in a tree by `λ_loss` and so leaves within-tree
//! comparisons untouched. Absolute reward values are therefore not
//! comparable to ones computed with a language-model fluency term.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{trajectory_metric, ProblemInstance, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("sibling set is empty")]
    EmptySiblingSet,
    #[error("fluency scorer returned {0}, expected a positive finite value")]
    InvalidFluency(f64),
    #[error("reward weights must be finite and non-negative")]
    InvalidConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub lambda_token: f64,
    pub lambda_loss: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { lambda_token: 0.6, lambda_loss: 1.0 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.lambda_token) && ok(self.lambda_loss) {
            Ok(())
        } else {
            Err(RewardError::InvalidConfig)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_task: f64,
    pub r_token: f64,
    pub r_loss: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn compose(r_task: f64, r_token: f64, r_loss: f64, cfg: &RewardConfig) -> Self {
        let total = r_task - cfg.lambda_token * r_token + cfg.lambda_loss * (1.0 / r_loss);
        Self { r_task, r_token, r_loss, total }
    }
}

/// Fluency term of the reward; must return a positive value.
pub trait FluencyScorer: Send + Sync {
    fn score(&self, t: &Trajectory) -> f64;
}

/// Returns the same value for every trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantFluency(pub f64);

impl Default for ConstantFluency {
    fn default() -> Self {
        Self(1.0)
    }
}

impl FluencyScorer for ConstantFluency {
    fn score(&self, _t: &Trajectory) -> f64 {
        self.0
    }
}

impl<F: Fn(&Trajectory) -> f64 + Send + Sync> FluencyScorer for F {
    fn score(&self, t: &Trajectory) -> f64 {
        self(t)
    }
}

/// Token count of `t` over the largest sibling token count. Zero when every
/// sibling is empty.
pub fn token_reward(t: &Trajectory, siblings: &[&Trajectory]) -> Result<f64, RewardError> {
    let max = siblings.iter().map(|s| s.token_count()).max().ok_or(RewardError::EmptySiblingSet)?;
    let max = max.max(t.token_count());
    if max == 0 {
        return Ok(0.0);
    }
    Ok(t.token_count() as f64 / max as f64)
}

pub fn fluency_score(t: &Trajectory, scorer: &dyn FluencyScorer) -> Result<f64, RewardError> {
    let v = scorer.score(t);
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(RewardError::InvalidFluency(v))
    }
}

pub fn trajectory_reward(
    t: &Trajectory,
    siblings: &[&Trajectory],
    cfg: &RewardConfig,
    problem: &ProblemInstance,
    scorer: &dyn FluencyScorer,
) -> Result<RewardBreakdown, RewardError> {
    let r_task = trajectory_metric(t, problem);
    let r_token = token_reward(t, siblings)?;
    let r_loss = fluency_score(t, scorer)?;
    Ok(RewardBreakdown::compose(r_task, r_token, r_loss, cfg))
}

//! Agent policies.
//!
//! [`ToyPolicy`] is a log-linear softmax over a small vocabulary of message
//! templates and is the only differentiable kind. [`ReplayPolicy`] answers
//! from a fixed table keyed by state digest. [`RemotePolicy`] forwards
//! sampling requests to an HTTP endpoint.

mod remote;
mod replay;
mod toy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{DialogueState, Message};
use crate::topology::AgentId;

pub use remote::{RemoteConfig, RemotePolicy, RemoteRequest, RemoteResponse};
pub use replay::ReplayPolicy;
pub use toy::{FeatureSpec, TemplateKind, ToyPolicy, ToySpec};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("replay table has no entry for state {0}")]
    ReplayMiss(String),
    #[error("remote policy unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("remote policy returned a malformed response: {0}")]
    RemoteMalformedResponse(String),
    #[error("action is outside the policy's support: {0:?}")]
    UnsupportedAction(String),
    #[error("{0} policies are not differentiable")]
    NotDifferentiable(PolicyKind),
    #[error("agent {0} has no parameter block")]
    UnknownAgent(String),
    #[error("invalid policy parameters: {0}")]
    InvalidParams(String),
    #[error("at least one sample must be requested")]
    ZeroSamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Toy,
    Replay,
    Remote,
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PolicyKind::Toy => "toy",
            PolicyKind::Replay => "replay",
            PolicyKind::Remote => "remote",
        })
    }
}

/// Whether one parameter vector plays every slot or each agent has its own block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    #[default]
    SharedAcrossAgents,
    PerAgent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub message: Message,
    pub logprob: Option<f64>,
}

pub trait Policy: Send + Sync {
    fn kind(&self) -> PolicyKind;

    /// Draw `d` actions (with replacement) for `agent` acting in `state`.
    /// Temperature 0 returns `d` copies of the most likely action.
    fn sample_actions(
        &self,
        state: &DialogueState,
        agent: &AgentId,
        d: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<ActionSample>, PolicyError>;

    /// `log π(action | state)` at temperature 1.
    fn action_logprob(&self, state: &DialogueState, agent: &AgentId, action: &Message) -> Result<f64, PolicyError>;

    fn as_toy(&self) -> Option<&ToyPolicy> {
        None
    }
}

/// Any of the supported policy kinds.
#[derive(Debug, Clone)]
pub enum PolicyParams {
    Toy(ToyPolicy),
    Replay(ReplayPolicy),
    Remote(RemotePolicy),
}

impl PolicyParams {
    fn inner(&self) -> &dyn Policy {
        match self {
            PolicyParams::Toy(p) => p,
            PolicyParams::Replay(p) => p,
            PolicyParams::Remote(p) => p,
        }
    }

    /// The differentiable policy, or `NotDifferentiable`.
    pub fn require_toy(&self) -> Result<&ToyPolicy, PolicyError> {
        match self {
            PolicyParams::Toy(p) => Ok(p),
            other => Err(PolicyError::NotDifferentiable(other.kind())),
        }
    }
}

impl Policy for PolicyParams {
    fn kind(&self) -> PolicyKind {
        match self {
            PolicyParams::Toy(_) => PolicyKind::Toy,
            PolicyParams::Replay(_) => PolicyKind::Replay,
            PolicyParams::Remote(_) => PolicyKind::Remote,
        }
    }

    fn sample_actions(
        &self,
        state: &DialogueState,
        agent: &AgentId,
        d: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<ActionSample>, PolicyError> {
        self.inner().sample_actions(state, agent, d, temperature, seed)
    }

    fn action_logprob(&self, state: &DialogueState, agent: &AgentId, action: &Message) -> Result<f64, PolicyError> {
        self.inner().action_logprob(state, agent, action)
    }

    fn as_toy(&self) -> Option<&ToyPolicy> {
        self.inner().as_toy()
    }
}

/// Exact gradient of `log π(action | state)` with respect to the parameters.
pub fn logprob_grad(
    policy: &dyn Policy,
    state: &DialogueState,
    agent: &AgentId,
    action: &Message,
) -> Result<Vec<f64>, PolicyError> {
    match policy.as_toy() {
        Some(toy) => toy.logprob_grad(state, agent, action),
        None => Err(PolicyError::NotDifferentiable(policy.kind())),
    }
}

/// Index of a draw from unnormalised `weights` given a uniform `u ∈ [0,1)`.
pub(crate) fn categorical(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut target = u * total;
    for (i, w) in weights.iter().enumerate() {
        if target < *w {
            return i;
        }
        target -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ActionSample, Policy, PolicyError, PolicyKind};
use crate::env::{DialogueState, Message};
use crate::seed;
use crate::topology::AgentId;

/// Deterministic policy answering from a table of state digest → candidate
/// message contents. Sampling draws uniformly from the listed contents
/// (duplicates weight an entry); temperature 0 returns the first entry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayPolicy {
    table: BTreeMap<String, Vec<String>>,
}

impl ReplayPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, state: &DialogueState, contents: Vec<String>) {
        self.table.insert(state.digest(), contents);
    }

    pub fn insert_digest(&mut self, digest: String, contents: Vec<String>) {
        self.table.insert(digest, contents);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    fn entries(&self, state: &DialogueState) -> Result<&[String], PolicyError> {
        let digest = state.digest();
        match self.table.get(&digest) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(PolicyError::ReplayMiss(digest)),
        }
    }
}

impl Policy for ReplayPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Replay
    }

    fn sample_actions(
        &self,
        state: &DialogueState,
        agent: &AgentId,
        d: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<ActionSample>, PolicyError> {
        if d == 0 {
            return Err(PolicyError::ZeroSamples);
        }
        let entries = self.entries(state)?;
        let mut rng = seed::rng(seed);
        (0..d)
            .map(|_| {
                let i = if temperature == 0.0 { 0 } else { rng.gen_range(0..entries.len()) };
                let message = Message::new(state.next_slot, agent.clone(), entries[i].clone());
                let logprob = self.action_logprob(state, agent, &message)?;
                Ok(ActionSample { message, logprob: Some(logprob) })
            })
            .collect()
    }

    fn action_logprob(&self, state: &DialogueState, _agent: &AgentId, action: &Message) -> Result<f64, PolicyError> {
        let entries = self.entries(state)?;
        let hits = entries.iter().filter(|c| **c == action.content).count();
        if hits == 0 {
            return Err(PolicyError::UnsupportedAction(action.content.clone()));
        }
        Ok((hits as f64 / entries.len() as f64).ln())
    }
}

//! Agent collaboration graphs and their unrolling into linear slot schedules.
//!
//! A graph may contain cycles; unrolling walks successor edges from the entry
//! agent for `max_rounds` passes over the cycle, producing one slot per visit.
//! The same agent can occupy many slots ("virtual agents").

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(name: impl Into<String>) -> Result<Self, TopologyError> {
        let name = name.into();
        if name.is_empty() {
            return Err(TopologyError::EmptyAgentName);
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    /// Panics on an empty name; use [`AgentId::new`] for untrusted input.
    fn from(s: &str) -> Self {
        Self::new(s).expect("agent id must be non-empty")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("agent names must be non-empty")]
    EmptyAgentName,
    #[error("topology has no agents")]
    EmptyGraph,
    #[error("agent {0} declared more than once")]
    DuplicateAgent(String),
    #[error("edge {from} -> {to} references an unknown agent")]
    DanglingEdge { from: String, to: String },
    #[error("entry agent {0} is not in the agent set")]
    UnknownEntry(String),
    #[error("agent {0} is unreachable from the entry agent")]
    UnreachableAgent(String),
    #[error("max_rounds must be at least 1")]
    ZeroRounds,
    #[error("agent {0} has more than one outgoing edge")]
    AmbiguousSuccessor(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyGraph {
    pub agents: Vec<AgentId>,
    pub edges: Vec<(AgentId, AgentId)>,
    pub entry: AgentId,
    pub max_rounds: usize,
}

impl TopologyGraph {
    /// The two-agent alternation used by both task settings.
    pub fn ping_pong(a: &str, b: &str, max_rounds: usize) -> Self {
        Self {
            agents: vec![a.into(), b.into()],
            edges: vec![(a.into(), b.into()), (b.into(), a.into())],
            entry: a.into(),
            max_rounds,
        }
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.agents.is_empty() {
            return Err(TopologyError::EmptyGraph);
        }
        let mut known = BTreeSet::new();
        for a in &self.agents {
            if !known.insert(a) {
                return Err(TopologyError::DuplicateAgent(a.to_string()));
            }
        }
        if self.max_rounds == 0 {
            return Err(TopologyError::ZeroRounds);
        }
        for (from, to) in &self.edges {
            if !known.contains(from) || !known.contains(to) {
                return Err(TopologyError::DanglingEdge {
                    from: from.to_string(),
                    to: to.to_string(),
                });
            }
        }
        if !known.contains(&self.entry) {
            return Err(TopologyError::UnknownEntry(self.entry.to_string()));
        }

        let mut adjacency: BTreeMap<&AgentId, Vec<&AgentId>> = BTreeMap::new();
        for (from, to) in &self.edges {
            adjacency.entry(from).or_default().push(to);
        }
        let mut seen = BTreeSet::from([&self.entry]);
        let mut queue = VecDeque::from([&self.entry]);
        while let Some(a) = queue.pop_front() {
            for next in adjacency.get(a).into_iter().flatten() {
                if seen.insert(*next) {
                    queue.push_back(next);
                }
            }
        }
        if let Some(missing) = self.agents.iter().find(|a| !seen.contains(a)) {
            return Err(TopologyError::UnreachableAgent(missing.to_string()));
        }
        Ok(())
    }

    /// Unroll into a slot schedule.
    ///
    /// The walk follows the unique successor of each agent. One round is one
    /// pass over the distinct agents reachable along the walk, so a 2-cycle
    /// with `max_rounds = 2` yields `[A, B, A, B]`. A walk that reaches an
    /// agent with no successor stops there.
    pub fn unroll(&self) -> Result<TopologySchedule, TopologyError> {
        self.validate()?;
        let mut successor: BTreeMap<&AgentId, &AgentId> = BTreeMap::new();
        for (from, to) in &self.edges {
            if successor.insert(from, to).is_some_and(|prev| prev != to) {
                return Err(TopologyError::AmbiguousSuccessor(from.to_string()));
            }
        }

        // Length of one round: agents visited before the walk revisits one or dead-ends.
        let mut round = vec![&self.entry];
        let mut current = &self.entry;
        let mut closes = false;
        while let Some(next) = successor.get(current) {
            if round.contains(next) {
                closes = true;
                break;
            }
            round.push(next);
            current = next;
        }
        // A cycle that re-enters mid-path (a "lasso") repeats only its loop.
        let loop_start = if closes {
            let next = successor[current];
            round.iter().position(|a| *a == next).unwrap_or(0)
        } else {
            0
        };

        let mut agents: Vec<AgentId> = round.iter().map(|a| (*a).clone()).collect();
        if closes {
            let looped: Vec<AgentId> = round[loop_start..].iter().map(|a| (*a).clone()).collect();
            for _ in 1..self.max_rounds {
                agents.extend(looped.iter().cloned());
            }
        }

        let slots = agents
            .into_iter()
            .enumerate()
            .map(|(i, agent)| Slot { index: i + 1, agent })
            .collect();
        Ok(TopologySchedule { slots })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub index: usize,
    pub agent: AgentId,
}

/// Linear sequence of agent slots `1..=M`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySchedule {
    slots: Vec<Slot>,
}

impl TopologySchedule {
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Number of slots, `M`.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Agent acting at 1-based `slot`.
    pub fn agent_at(&self, slot: usize) -> Option<&AgentId> {
        slot.checked_sub(1).and_then(|i| self.slots.get(i)).map(|s| &s.agent)
    }

    /// Distinct agents in order of first appearance.
    pub fn distinct_agents(&self) -> Vec<AgentId> {
        let mut out: Vec<AgentId> = Vec::new();
        for s in &self.slots {
            if !out.contains(&s.agent) {
                out.push(s.agent.clone());
            }
        }
        out
    }
}

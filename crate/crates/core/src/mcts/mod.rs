//! Per-problem search trees over dialogue actions.
//!
//! Each round selects a candidate node by a softmax over Q-values (after
//! removing nodes whose action text is too close to an already expanded
//! node), expands it with `d` sampled actions, rolls every new child out to
//! a terminal state and backs the trajectory rewards up as child averages.
//! Preference pairs are the best- and worst-valued children of each node.

mod pairs;
mod similarity;
mod synth;
mod tree;

use thiserror::Error;

use crate::env::EnvError;
use crate::policy::PolicyError;
use crate::reward::RewardError;

pub use pairs::{extract_pairs, initial_filter, FilterConfig, PreferencePair};
pub use similarity::{edit_distance, normalized_similarity};
pub use synth::{synthesize, SynthesisConfig, Synthesizer};
pub use tree::{candidate_set, select_node, NodeId, SearchNode, SearchTree, TreeTrajectory};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("node {0} is already expanded")]
    AlreadyExpanded(NodeId),
    #[error("node {0} is terminal")]
    TerminalNode(NodeId),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("trajectory {0} has no reward")]
    RewardMissing(usize),
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

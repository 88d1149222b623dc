//! Search-based synthesis, scoring and selection of preference data for
//! multi-agent dialogue systems.

pub mod env;
pub mod policy;
pub mod reward;
pub mod seed;
pub mod topology;
pub mod mcts;
pub mod training;
pub mod influence;
pub mod stats;
pub mod selection;
pub mod config;
pub mod artifacts;
pub mod pipeline;
pub mod report;

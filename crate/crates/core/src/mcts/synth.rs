use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::tree::{candidate_set, select_node, NodeId, SearchTree};
use super::SynthesisError;
use crate::env::{Environment, ProblemInstance};
use crate::policy::Policy;
use crate::reward::{ConstantFluency, FluencyScorer, RewardConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    /// Actions sampled per expansion.
    pub d: usize,
    /// Select → expand → simulate → backpropagate rounds after the bootstrap.
    pub k: usize,
    #[serde(default = "default_floor")]
    pub similarity_floor: f64,
    #[serde(default = "default_one")]
    pub softmax_temperature: f64,
    /// Sampling temperature of the agent policy during expansion and rollout.
    #[serde(default = "default_one")]
    pub expansion_temperature: f64,
}

fn default_floor() -> f64 {
    0.25
}

fn default_one() -> f64 {
    1.0
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { d: 3, k: 8, similarity_floor: 0.25, softmax_temperature: 1.0, expansion_temperature: 1.0 }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        let err = |m: &str| Err(SynthesisError::InvalidConfig(m.into()));
        if self.d < 2 {
            return err("d must be at least 2");
        }
        if self.k < 1 {
            return err("k must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.similarity_floor) {
            return err("similarity_floor must lie in [0, 1]");
        }
        if !(self.softmax_temperature > 0.0 && self.softmax_temperature.is_finite()) {
            return err("softmax_temperature must be positive");
        }
        if !(self.expansion_temperature >= 0.0 && self.expansion_temperature.is_finite()) {
            return err("expansion_temperature must be non-negative");
        }
        Ok(())
    }
}

/// Bundles everything a synthesis run reads.
pub struct Synthesizer<'a> {
    pub policy: &'a dyn Policy,
    pub env: &'a Environment,
    pub config: SynthesisConfig,
    pub reward: RewardConfig,
    pub fluency: &'a dyn FluencyScorer,
}

impl Synthesizer<'_> {
    /// Expand `node`, roll out each child and back the rewards up.
    fn grow(&self, tree: &mut SearchTree, node: NodeId, round_seed: u64) -> Result<(), SynthesisError> {
        let cfg = &self.config;
        let children = tree.expand(
            node,
            self.policy,
            self.env,
            cfg.d,
            cfg.expansion_temperature,
            seed::derive(round_seed, "expand"),
        )?;
        let sim_seed = seed::derive(round_seed, "simulate");
        for (i, child) in children.into_iter().enumerate() {
            let t = tree.simulate(child, self.policy, self.env, cfg.expansion_temperature, seed::derive_index(sim_seed, i as u64))?;
            tree.score_trajectory(t, &self.reward, self.fluency)?;
            tree.backpropagate(t)?;
        }
        tree.refresh(&self.reward, self.fluency)
    }

    /// Build the search tree for `problem`.
    ///
    /// Round 0 expands the root; rounds `1..=k` each select one candidate.
    /// Round `r` draws only from seeds derived from `(seed, r)`, so a run
    /// with budget `k` is a prefix of any run with a larger budget.
    pub fn run(&self, problem: Arc<ProblemInstance>, seed: u64) -> Result<SearchTree, SynthesisError> {
        self.config.validate()?;
        self.reward.validate()?;
        let mut tree = SearchTree::new(problem, self.env, seed);
        if tree.nodes[SearchTree::ROOT].terminal {
            return Ok(tree);
        }
        self.grow(&mut tree, SearchTree::ROOT, seed::derive_index(seed, 0))?;
        for round in 1..=self.config.k {
            let round_seed = seed::derive_index(seed, round as u64);
            let candidates: Vec<(NodeId, f64)> = candidate_set(&tree, self.config.similarity_floor)
                .into_iter()
                .map(|id| (id, tree.nodes[id].q))
                .collect();
            if candidates.is_empty() {
                continue;
            }
            let node = select_node(&candidates, self.config.softmax_temperature, seed::derive(round_seed, "select"))?;
            self.grow(&mut tree, node, round_seed)?;
        }
        Ok(tree)
    }
}

/// Convenience wrapper using the constant fluency scorer.
pub fn synthesize(
    problem: Arc<ProblemInstance>,
    policy: &dyn Policy,
    env: &Environment,
    config: SynthesisConfig,
    reward: RewardConfig,
    seed: u64,
) -> Result<SearchTree, SynthesisError> {
    let fluency = ConstantFluency::default();
    Synthesizer { policy, env, config, reward, fluency: &fluency }.run(problem, seed)
}

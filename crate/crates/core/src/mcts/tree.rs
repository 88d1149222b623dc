use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::similarity::normalized_similarity;
use super::SynthesisError;
use crate::env::{trans, DialogueState, Environment, Message, ProblemInstance, Termination, Trajectory, TerminalReason};
use crate::policy::{categorical, Policy};
use crate::reward::{trajectory_reward, FluencyScorer, RewardConfig};
use crate::seed;

pub type NodeId = usize;

/// A node `(s, a)`: the action taken in the state reached through its ancestors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    /// Digest of the state in which `action` is taken.
    pub state_digest: String,
    pub action: Option<Message>,
    pub q: f64,
    pub children: Vec<NodeId>,
    pub expanded: bool,
    pub terminal: bool,
    pub action_string: String,
}

/// A finished rollout and the node it ends at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeTrajectory {
    pub leaf: NodeId,
    #[serde(flatten)]
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone)]
pub struct SearchTree {
    pub problem: Arc<ProblemInstance>,
    pub nodes: Vec<SearchNode>,
    pub expanded_ids: Vec<NodeId>,
    pub trajectories: Vec<TreeTrajectory>,
    pub rng_seed: u64,
    /// Smallest similarity from each node's action to any expanded node's action.
    min_similarity: Vec<f64>,
    similarity_memo: HashMap<(String, String), f64>,
}

impl SearchTree {
    pub const ROOT: NodeId = 0;

    /// A tree holding only the root, which carries the task instruction.
    pub fn new(problem: Arc<ProblemInstance>, env: &Environment, rng_seed: u64) -> Self {
        let initial = DialogueState::initial(Arc::clone(&problem));
        let root = SearchNode {
            id: Self::ROOT,
            parent: None,
            state_digest: initial.digest(),
            action: None,
            q: 0.0,
            children: Vec::new(),
            expanded: false,
            terminal: env.termination(&initial).is_terminal(),
            action_string: String::new(),
        };
        Self {
            problem,
            nodes: vec![root],
            expanded_ids: Vec::new(),
            trajectories: Vec::new(),
            rng_seed,
            min_similarity: vec![f64::INFINITY],
            similarity_memo: HashMap::new(),
        }
    }

    pub fn problem_id(&self) -> &str {
        &self.problem.id
    }

    pub fn node(&self, id: NodeId) -> Result<&SearchNode, SynthesisError> {
        self.nodes.get(id).ok_or(SynthesisError::UnknownNode(id))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Actions on the path root → `id`, inclusive.
    pub fn path_actions(&self, id: NodeId) -> Result<Vec<Message>, SynthesisError> {
        let mut out = Vec::new();
        let mut cur = Some(id);
        while let Some(n) = cur {
            let node = self.node(n)?;
            if let Some(a) = &node.action {
                out.push(a.clone());
            }
            cur = node.parent;
        }
        out.reverse();
        Ok(out)
    }

    /// State after taking the node's action, `s' = Trans(s, a)`.
    pub fn state_after(&self, id: NodeId) -> Result<DialogueState, SynthesisError> {
        Ok(DialogueState::with_transcript(Arc::clone(&self.problem), self.path_actions(id)?))
    }

    /// State in which the node's action was taken.
    pub fn state_before(&self, id: NodeId) -> Result<DialogueState, SynthesisError> {
        let mut actions = self.path_actions(id)?;
        actions.pop();
        Ok(DialogueState::with_transcript(Arc::clone(&self.problem), actions))
    }

    fn similarity(&mut self, a: &str, b: &str) -> f64 {
        if a == b {
            return 0.0;
        }
        let key = if a < b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
        *self.similarity_memo.entry(key).or_insert_with(|| normalized_similarity(a, b))
    }

    pub(crate) fn push_child(&mut self, parent: NodeId, action: Message, state_digest: String, terminal: bool) -> NodeId {
        let id = self.nodes.len();
        let action_string = action.content.clone();
        let mut min_sim = f64::INFINITY;
        for e in self.expanded_ids.clone() {
            let other = self.nodes[e].action_string.clone();
            min_sim = min_sim.min(self.similarity(&action_string, &other));
        }
        self.nodes.push(SearchNode {
            id,
            parent: Some(parent),
            state_digest,
            action: Some(action),
            q: 0.0,
            children: Vec::new(),
            expanded: false,
            terminal,
            action_string,
        });
        self.min_similarity.push(min_sim);
        self.nodes[parent].children.push(id);
        id
    }

    fn mark_expanded(&mut self, id: NodeId) {
        self.nodes[id].expanded = true;
        self.expanded_ids.push(id);
        let expanded = self.nodes[id].action_string.clone();
        for n in 0..self.nodes.len() {
            let s = self.nodes[n].action_string.clone();
            let v = self.similarity(&expanded, &s);
            self.min_similarity[n] = self.min_similarity[n].min(v);
        }
    }

    /// Sample `d` actions at `s' = Trans(s, a)` and attach them as children.
    pub fn expand(
        &mut self,
        id: NodeId,
        policy: &dyn Policy,
        env: &Environment,
        d: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<NodeId>, SynthesisError> {
        let node = self.node(id)?;
        if node.expanded {
            return Err(SynthesisError::AlreadyExpanded(id));
        }
        if node.terminal {
            return Err(SynthesisError::TerminalNode(id));
        }
        let state = self.state_after(id)?;
        let agent = env.acting_agent(&state)?.clone();
        let samples = policy.sample_actions(&state, &agent, d, temperature, seed)?;
        let digest = state.digest();
        let mut children = Vec::with_capacity(samples.len());
        for s in samples {
            let terminal = env.termination(&trans(&state, &s.message)?).is_terminal();
            children.push(self.push_child(id, s.message, digest.clone(), terminal));
        }
        self.mark_expanded(id);
        Ok(children)
    }

    /// Roll out from `child` to a terminal state, adding every step as a node.
    /// Returns the index of the recorded trajectory.
    pub fn simulate(
        &mut self,
        child: NodeId,
        policy: &dyn Policy,
        env: &Environment,
        temperature: f64,
        seed: u64,
    ) -> Result<usize, SynthesisError> {
        let mut current = child;
        let mut state = self.state_after(child)?;
        let mut step = 0u64;
        let answer = loop {
            match env.termination(&state) {
                Termination::Continue => {}
                Termination::Answer(a) => break Some(a),
                Termination::MaxSlots => break None,
            }
            let agent = env.acting_agent(&state)?.clone();
            let mut samples = policy.sample_actions(&state, &agent, 1, temperature, seed::derive_index(seed, step))?;
            let action = samples.remove(0).message;
            let next = trans(&state, &action)?;
            let terminal = env.termination(&next).is_terminal();
            current = self.push_child(current, action, state.digest(), terminal);
            state = next;
            step += 1;
        };
        let terminal_reason = if answer.is_some() { TerminalReason::AnswerMarker } else { TerminalReason::MaxSlots };
        self.trajectories.push(TreeTrajectory {
            leaf: current,
            trajectory: Trajectory {
                problem_id: self.problem.id.clone(),
                messages: state.transcript,
                final_answer: answer,
                terminal_reason,
                reward: None,
            },
        });
        Ok(self.trajectories.len() - 1)
    }

    /// Reward trajectory `index` against the current sibling set.
    pub fn score_trajectory(
        &mut self,
        index: usize,
        cfg: &RewardConfig,
        scorer: &dyn FluencyScorer,
    ) -> Result<(), SynthesisError> {
        let siblings: Vec<&Trajectory> = self.trajectories.iter().map(|t| &t.trajectory).collect();
        let reward = trajectory_reward(&self.trajectories[index].trajectory, &siblings, cfg, &self.problem, scorer)?;
        self.trajectories[index].trajectory.reward = Some(reward);
        Ok(())
    }

    /// Set the trajectory's leaf to its reward and re-average every ancestor.
    pub fn backpropagate(&mut self, index: usize) -> Result<(), SynthesisError> {
        let t = self.trajectories.get(index).ok_or(SynthesisError::RewardMissing(index))?;
        let reward = t.trajectory.reward.ok_or(SynthesisError::RewardMissing(index))?;
        let leaf = t.leaf;
        self.nodes[leaf].q = reward.total;
        let mut cur = self.nodes[leaf].parent;
        while let Some(id) = cur {
            self.nodes[id].q = self.children_mean(id);
            cur = self.nodes[id].parent;
        }
        Ok(())
    }

    fn children_mean(&self, id: NodeId) -> f64 {
        let children = &self.nodes[id].children;
        children.iter().map(|c| self.nodes[*c].q).sum::<f64>() / children.len() as f64
    }

    /// Recompute every reward against the full sibling set, then every Q
    /// bottom-up. Children always have larger ids than their parent.
    pub fn refresh(&mut self, cfg: &RewardConfig, scorer: &dyn FluencyScorer) -> Result<(), SynthesisError> {
        for i in 0..self.trajectories.len() {
            self.score_trajectory(i, cfg, scorer)?;
            let leaf = self.trajectories[i].leaf;
            self.nodes[leaf].q = self.trajectories[i].trajectory.reward.map_or(0.0, |r| r.total);
        }
        for id in (0..self.nodes.len()).rev() {
            if !self.nodes[id].children.is_empty() {
                self.nodes[id].q = self.children_mean(id);
            }
        }
        Ok(())
    }

    pub fn max_reward(&self) -> Option<f64> {
        self.trajectories.iter().filter_map(|t| t.trajectory.reward.map(|r| r.total)).reduce(f64::max)
    }

    pub(crate) fn min_similarity(&self, id: NodeId) -> f64 {
        self.min_similarity[id]
    }
}

/// Non-terminal, unexpanded nodes whose action is at least `floor` away from
/// every expanded node's action.
pub fn candidate_set(tree: &SearchTree, floor: f64) -> Vec<NodeId> {
    tree.nodes
        .iter()
        .filter(|n| !n.terminal && !n.expanded && tree.min_similarity(n.id) >= floor)
        .map(|n| n.id)
        .collect()
}

/// Sample one candidate with probability ∝ `exp(q / temperature)`.
pub fn select_node(candidates: &[(NodeId, f64)], temperature: f64, seed: u64) -> Result<NodeId, SynthesisError> {
    if candidates.is_empty() {
        return Err(SynthesisError::EmptyCandidates);
    }
    let max = candidates.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = candidates.iter().map(|(_, q)| ((q - max) / temperature).exp()).collect();
    let u = seed::rng(seed).gen::<f64>();
    Ok(candidates[categorical(&weights, u)].0)
}

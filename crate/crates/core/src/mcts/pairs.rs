use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::tree::{NodeId, SearchTree};
use crate::env::{DialogueState, Message, ProblemInstance};

/// `(s, a_high, a_low)` taken from sibling children of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub pair_id: String,
    pub problem_id: String,
    pub slot: usize,
    pub state_transcript: Vec<Message>,
    pub chosen: Message,
    pub rejected: Message,
    pub q_chosen: f64,
    pub q_rejected: f64,
    pub parent_node: NodeId,
}

impl PreferencePair {
    pub fn state(&self, problem: Arc<ProblemInstance>) -> DialogueState {
        DialogueState::with_transcript(problem, self.state_transcript.clone())
    }

    pub fn gap(&self) -> f64 {
        self.q_chosen - self.q_rejected
    }

    /// The same pair with chosen and rejected exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            pair_id: format!("{}~swap", self.pair_id),
            chosen: self.rejected.clone(),
            rejected: self.chosen.clone(),
            q_chosen: self.q_rejected,
            q_rejected: self.q_chosen,
            ..self.clone()
        }
    }
}

/// One pair per node with at least two children of different value.
///
/// Chosen is the highest-q child, rejected the lowest-q child whose text
/// differs from the chosen one; ties go to the lower node id.
pub fn extract_pairs(tree: &SearchTree) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    for node in &tree.nodes {
        if node.children.len() < 2 {
            continue;
        }
        let kids: Vec<_> = node.children.iter().map(|c| &tree.nodes[*c]).collect();
        let mut best = kids[0];
        for k in &kids[1..] {
            if k.q > best.q || (k.q == best.q && k.id < best.id) {
                best = k;
            }
        }
        let mut worst: Option<NodeId> = None;
        for k in &kids {
            if k.action_string == best.action_string {
                continue;
            }
            match worst {
                Some(w) if !(k.q < tree.nodes[w].q || (k.q == tree.nodes[w].q && k.id < w)) => {}
                _ => worst = Some(k.id),
            }
        }
        let Some(worst) = worst.map(|w| &tree.nodes[w]) else { continue };
        if best.q <= worst.q {
            continue;
        }
        let chosen = best.action.clone().expect("non-root node has an action");
        let rejected = worst.action.clone().expect("non-root node has an action");
        let state_transcript = tree.path_actions(node.id).expect("node exists");
        out.push(PreferencePair {
            pair_id: format!("{}/{:06}", tree.problem_id(), node.id),
            problem_id: tree.problem_id().to_string(),
            slot: chosen.slot_index,
            state_transcript,
            chosen,
            rejected,
            q_chosen: best.q,
            q_rejected: worst.q,
            parent_node: node.id,
        });
    }
    out
}

/// Thresholds for the initial quality filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub lambda_dpo_filter: f64,
    pub lambda_dpo_diff: f64,
    /// Fraction of survivors kept per problem (ceiling).
    #[serde(default = "default_keep")]
    pub keep_fraction: f64,
}

fn default_keep() -> f64 {
    0.5
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { lambda_dpo_filter: 0.4, lambda_dpo_diff: 0.2, keep_fraction: 0.5 }
    }
}

/// Keep pairs with `q_chosen > λ_filter` and `q_chosen − q_rejected > λ_diff`,
/// then the top `⌈keep_fraction · n⌉` per problem by `q_chosen`.
/// Output is sorted by pair id.
pub fn initial_filter(pairs: &[PreferencePair], cfg: &FilterConfig) -> Vec<PreferencePair> {
    let mut by_problem: BTreeMap<&str, Vec<&PreferencePair>> = BTreeMap::new();
    for p in pairs {
        if p.q_chosen > cfg.lambda_dpo_filter && p.q_chosen - p.q_rejected > cfg.lambda_dpo_diff {
            by_problem.entry(&p.problem_id).or_default().push(p);
        }
    }
    let mut out = Vec::new();
    for (_, mut group) in by_problem {
        group.sort_by(|a, b| b.q_chosen.total_cmp(&a.q_chosen).then_with(|| a.pair_id.cmp(&b.pair_id)));
        let keep = (cfg.keep_fraction * group.len() as f64).ceil() as usize;
        out.extend(group.into_iter().take(keep).cloned());
    }
    out.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    out
}

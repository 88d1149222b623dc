//! Hybrid scoring and top-α selection of filtered preference pairs.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::influence::InfluenceRecord;
use crate::mcts::PreferencePair;
use crate::seed;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// `influence + γ·q_chosen`.
    #[default]
    Hybrid,
    /// Uniformly random subset of the same size.
    Random,
    /// `q_chosen` alone.
    QOnly,
    /// Influence alone.
    InfluenceOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectConfig {
    pub alpha: f64,
    pub gamma: f64,
    #[serde(default)]
    pub strategy: Strategy,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self { alpha: 0.5, gamma: 1.0, strategy: Strategy::Hybrid }
    }
}

impl SelectConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err("alpha must lie in (0, 1]".into());
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err("gamma must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub pair: PreferencePair,
    pub influence: f64,
    pub f_before: f64,
    pub f_after: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub hybrid: f64,
    /// 1-based position in the selection order.
    pub rank: usize,
    pub selected: bool,
}

pub fn hybrid_score(pair: &PreferencePair, influence: f64, gamma: f64) -> f64 {
    influence + gamma * pair.q_chosen
}

/// Join pairs with their influence records (matched by position) and score them.
pub fn score_pairs(pairs: &[PreferencePair], records: &[InfluenceRecord], gamma: f64) -> Vec<ScoredPair> {
    assert_eq!(pairs.len(), records.len(), "one influence record per pair");
    pairs
        .iter()
        .zip(records)
        .map(|(p, r)| {
            debug_assert_eq!(p.pair_id, r.pair_id);
            ScoredPair {
                pair: p.clone(),
                influence: r.influence,
                f_before: r.f_before,
                f_after: r.f_after,
                eta: r.eta,
                epsilon: r.epsilon,
                hybrid: hybrid_score(p, r.influence, gamma),
                rank: 0,
                selected: false,
            }
        })
        .collect()
}

/// `⌈α·n⌉`, robust to representation error in `α·n`.
pub fn selection_size(alpha: f64, n: usize) -> usize {
    ((alpha * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Rank by `hybrid` descending (ties: lower pair id) and mark the top `⌈α·N⌉`.
pub fn select_top(scored: &mut [ScoredPair], alpha: f64) {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[b].hybrid.total_cmp(&scored[a].hybrid).then_with(|| scored[a].pair.pair_id.cmp(&scored[b].pair.pair_id))
    });
    mark(scored, &order, alpha);
}

fn mark(scored: &mut [ScoredPair], order: &[usize], alpha: f64) {
    let keep = selection_size(alpha, scored.len());
    for (pos, &i) in order.iter().enumerate() {
        scored[i].rank = pos + 1;
        scored[i].selected = pos < keep;
    }
}

/// Rank and select according to `cfg.strategy`. `seed` only affects `Random`.
pub fn select(scored: &mut [ScoredPair], cfg: &SelectConfig, seed: u64) {
    let by_id = |s: &[ScoredPair], a: usize, b: usize| s[a].pair.pair_id.cmp(&s[b].pair.pair_id);
    let mut order: Vec<usize> = (0..scored.len()).collect();
    match cfg.strategy {
        Strategy::Hybrid => return select_top(scored, cfg.alpha),
        Strategy::Random => {
            order.sort_by(|&a, &b| by_id(scored, a, b));
            order.shuffle(&mut seed::rng(seed::derive(seed, seed::streams::SELECT)));
        }
        Strategy::QOnly => order.sort_by(|&a, &b| {
            scored[b].pair.q_chosen.total_cmp(&scored[a].pair.q_chosen).then_with(|| by_id(scored, a, b))
        }),
        Strategy::InfluenceOnly => order.sort_by(|&a, &b| {
            scored[b].influence.total_cmp(&scored[a].influence).then_with(|| by_id(scored, a, b))
        }),
    }
    mark(scored, &order, cfg.alpha);
}

/// Selected pairs in rank order.
pub fn selected_pairs(scored: &[ScoredPair]) -> Vec<PreferencePair> {
    let mut sel: Vec<&ScoredPair> = scored.iter().filter(|s| s.selected).collect();
    sel.sort_by_key(|s| s.rank);
    sel.into_iter().map(|s| s.pair.clone()).collect()
}

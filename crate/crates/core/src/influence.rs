//! Influence of a single preference pair on a validation metric.
//!
//! The probe takes one gradient step on the pair's DPO loss,
//! `θ' = θ − η·ε·∇L(pair; θ)`, re-evaluates the metric and reports
//! `(F(θ') − F(θ)) / ε`. The metric need not be differentiable.
//!
//! Two reference estimators are included for checking the probe at desk
//! scale: a retrain oracle that solves the upweighted problem to
//! convergence, and the classical `−gᵀH⁻¹g` formula. The classical value
//! measures loss-space influence, not metric change, and is never used for
//! selection.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{
    eval_validation, task_metric, trans, DialogueState, EnvError, Environment, ProblemInstance, Termination,
};
use crate::policy::{Policy, PolicyError, ToyPolicy};
use crate::training::{dpo_grad, DpoObjective, PairExample, TrainingError, TrainingObjective};

#[derive(Debug, Error)]
pub enum InfluenceError {
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error("Hessian is singular even with damping {0:e}")]
    SingularHessian(f64),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Training(#[from] TrainingError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestrictUpdate {
    #[default]
    FullGradient,
    /// Only the indices in `ProbeConfig::mask` move.
    MaskedSubset,
}

/// Validation metric evaluated inside the probe.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Mean task metric of greedy rollouts.
    #[default]
    Greedy,
    /// Exact expected task metric under temperature-1 sampling.
    Expected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub eta: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub restrict_update: RestrictUpdate,
    #[serde(default)]
    pub mask: Vec<usize>,
    #[serde(default)]
    pub metric: MetricKind,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { eta: 0.1, epsilon: 1.0, restrict_update: RestrictUpdate::FullGradient, mask: Vec::new(), metric: MetricKind::Greedy }
    }
}

impl ProbeConfig {
    pub fn validate(&self, n_params: usize) -> Result<(), InfluenceError> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.eta) || !pos(self.epsilon) {
            return Err(InfluenceError::InvalidConfig("eta and epsilon must be positive".into()));
        }
        if self.restrict_update == RestrictUpdate::MaskedSubset {
            if self.mask.is_empty() {
                return Err(InfluenceError::InvalidConfig("masked_subset needs a non-empty mask".into()));
            }
            if let Some(i) = self.mask.iter().find(|i| **i >= n_params) {
                return Err(InfluenceError::InvalidConfig(format!("mask index {i} out of range")));
            }
        }
        Ok(())
    }

    /// Hex digest of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("probe config serializes");
        hex::encode(&Sha256::digest(&json)[..16])
    }

    /// Zero every gradient entry outside the mask.
    fn restrict(&self, g: &mut [f64]) {
        if self.restrict_update == RestrictUpdate::MaskedSubset {
            let mut keep = vec![false; g.len()];
            for &i in &self.mask {
                keep[i] = true;
            }
            for (v, k) in g.iter_mut().zip(keep) {
                if !k {
                    *v = 0.0;
                }
            }
        }
    }
}

/// A scalar score of a parameter setting, higher is better.
pub trait ValidationMetric: Sync {
    fn evaluate(&self, policy: &ToyPolicy) -> Result<f64, InfluenceError>;
}

impl<F: Fn(&ToyPolicy) -> f64 + Sync> ValidationMetric for F {
    fn evaluate(&self, policy: &ToyPolicy) -> Result<f64, InfluenceError> {
        Ok(self(policy))
    }
}

/// Mean greedy-rollout task metric over a validation set.
pub struct GreedyValidation<'a> {
    d_val: &'a [Arc<ProblemInstance>],
    env: &'a Environment,
}

impl<'a> GreedyValidation<'a> {
    pub fn new(d_val: &'a [Arc<ProblemInstance>], env: &'a Environment) -> Result<Self, InfluenceError> {
        if d_val.is_empty() {
            return Err(EnvError::EmptyValidation.into());
        }
        Ok(Self { d_val, env })
    }
}

impl ValidationMetric for GreedyValidation<'_> {
    fn evaluate(&self, policy: &ToyPolicy) -> Result<f64, InfluenceError> {
        Ok(eval_validation(policy, self.d_val, self.env)?)
    }
}

/// Exact expected task metric, enumerating every template path.
///
/// Cost grows as `templates ^ slots` per problem.
pub struct ExpectedValidation<'a> {
    d_val: &'a [Arc<ProblemInstance>],
    env: &'a Environment,
}

impl<'a> ExpectedValidation<'a> {
    pub fn new(d_val: &'a [Arc<ProblemInstance>], env: &'a Environment) -> Result<Self, InfluenceError> {
        if d_val.is_empty() {
            return Err(EnvError::EmptyValidation.into());
        }
        Ok(Self { d_val, env })
    }
}

fn expected_metric(policy: &ToyPolicy, state: &DialogueState, env: &Environment) -> Result<f64, InfluenceError> {
    let p = &state.problem;
    match env.termination(state) {
        Termination::Answer(a) => return Ok(task_metric(Some(&a), &p.gold, p.setting)),
        Termination::MaxSlots => return Ok(task_metric(None, &p.gold, p.setting)),
        Termination::Continue => {}
    }
    let agent = env.acting_agent(state)?;
    let probs = policy.template_probs(state, agent)?;
    let support = policy.support(state, agent)?;
    let mut total = 0.0;
    for (prob, action) in probs.iter().zip(&support) {
        total += prob * expected_metric(policy, &trans(state, action)?, env)?;
    }
    Ok(total)
}

impl ValidationMetric for ExpectedValidation<'_> {
    fn evaluate(&self, policy: &ToyPolicy) -> Result<f64, InfluenceError> {
        let mut ordered: Vec<&Arc<ProblemInstance>> = self.d_val.iter().collect();
        ordered.sort_by(|a, b| a.id.cmp(&b.id));
        let scores = ordered
            .par_iter()
            .map(|p| expected_metric(policy, &DialogueState::initial(Arc::clone(p)), self.env))
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }
}

/// Build the metric selected by `kind`.
pub fn validation_metric<'a>(
    kind: MetricKind,
    d_val: &'a [Arc<ProblemInstance>],
    env: &'a Environment,
) -> Result<Box<dyn ValidationMetric + 'a>, InfluenceError> {
    Ok(match kind {
        MetricKind::Greedy => Box::new(GreedyValidation::new(d_val, env)?),
        MetricKind::Expected => Box::new(ExpectedValidation::new(d_val, env)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRecord {
    pub pair_id: String,
    pub influence: f64,
    pub f_before: f64,
    pub f_after: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub probe_digest: String,
}

/// Probes pairs against a fixed `θ`, evaluating `F(θ)` once.
pub struct Prober<'a> {
    policy: &'a ToyPolicy,
    reference: &'a ToyPolicy,
    metric: &'a dyn ValidationMetric,
    cfg: ProbeConfig,
    beta: f64,
    f_before: f64,
    digest: String,
}

impl<'a> Prober<'a> {
    pub fn new(
        policy: &'a dyn Policy,
        reference: &'a dyn Policy,
        metric: &'a dyn ValidationMetric,
        cfg: ProbeConfig,
        beta: f64,
    ) -> Result<Self, InfluenceError> {
        let policy = policy.as_toy().ok_or(PolicyError::NotDifferentiable(policy.kind()))?;
        let reference = reference.as_toy().ok_or(PolicyError::NotDifferentiable(reference.kind()))?;
        cfg.validate(policy.n_params())?;
        let norm = policy.theta().iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && cfg.eta * cfg.epsilon > 0.1 * norm {
            log::warn!("probe step eta*epsilon = {} is large relative to |theta| = {norm:.4}", cfg.eta * cfg.epsilon);
        }
        let f_before = metric.evaluate(policy)?;
        let digest = cfg.digest();
        Ok(Self { policy, reference, metric, cfg, beta, f_before, digest })
    }

    pub fn f_before(&self) -> f64 {
        self.f_before
    }

    /// `θ − η·ε·∇L(pair; θ)`, restricted to the mask.
    pub fn probed_theta(&self, ex: &PairExample) -> Result<Vec<f64>, InfluenceError> {
        let mut g = dpo_grad(self.policy, self.reference, ex, self.beta)?;
        self.cfg.restrict(&mut g);
        let step = self.cfg.eta * self.cfg.epsilon;
        Ok(self.policy.theta().iter().zip(&g).map(|(t, g)| t - step * g).collect())
    }

    pub fn probe(&self, pair_id: &str, ex: &PairExample) -> Result<InfluenceRecord, InfluenceError> {
        let probed = self.policy.with_theta(self.probed_theta(ex)?)?;
        let f_after = self.metric.evaluate(&probed)?;
        Ok(InfluenceRecord {
            pair_id: pair_id.to_string(),
            influence: (f_after - self.f_before) / self.cfg.epsilon,
            f_before: self.f_before,
            f_after,
            eta: self.cfg.eta,
            epsilon: self.cfg.epsilon,
            probe_digest: self.digest.clone(),
        })
    }

    /// Probe every pair in parallel; output follows input order.
    pub fn probe_all(&self, pairs: &[(String, PairExample)]) -> Result<Vec<InfluenceRecord>, InfluenceError> {
        pairs.par_iter().map(|(id, ex)| self.probe(id, ex)).collect()
    }
}

/// One-shot probe of a single pair.
pub fn probe_influence(
    policy: &dyn Policy,
    reference: &dyn Policy,
    pair_id: &str,
    ex: &PairExample,
    metric: &dyn ValidationMetric,
    cfg: &ProbeConfig,
    beta: f64,
) -> Result<InfluenceRecord, InfluenceError> {
    Prober::new(policy, reference, metric, cfg.clone(), beta)?.probe(pair_id, ex)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub max_steps: usize,
    /// Stop once the largest gradient entry of the retrain objective is below this.
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { max_steps: 20_000, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub influence: f64,
    pub f_before: f64,
    pub f_after: f64,
    /// False when the step budget ran out; `influence` is then the best estimate.
    pub converged: bool,
    pub steps: usize,
}

/// Retrain with the pair upweighted by `ε` and measure the metric change.
///
/// The current parameters are treated as the optimum of a base objective
/// whose curvature is `1/η` in every direction, so the upweighted problem is
/// `min ‖θ' − θ‖² / (2η) + ε·L(pair; θ')`, solved by gradient descent. Its
/// one-step linearisation is exactly the probe update.
pub fn oracle_retrain_influence(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    ex: &PairExample,
    metric: &dyn ValidationMetric,
    cfg: &ProbeConfig,
    beta: f64,
    budget: &OracleConfig,
) -> Result<OracleEstimate, InfluenceError> {
    cfg.validate(policy.n_params())?;
    let objective = DpoObjective::new(policy, reference, vec![ex.clone()], beta)?;
    let theta0 = policy.theta();
    let (eta, eps) = (cfg.eta, cfg.epsilon);
    let value = |t: &[f64]| -> Result<(f64, Vec<f64>), InfluenceError> {
        let (l, mut g) = objective.loss_and_grad(t)?;
        cfg.restrict(&mut g);
        let mut j = eps * l;
        for i in 0..t.len() {
            let d = t[i] - theta0[i];
            j += d * d / (2.0 * eta);
            g[i] = eps * g[i] + d / eta;
        }
        Ok((j, g))
    };
    let mut theta = theta0.to_vec();
    let (mut j, mut g) = value(&theta)?;
    let mut lr = eta;
    let mut converged = false;
    let mut steps = 0;
    while steps < budget.max_steps {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < budget.tolerance {
            converged = true;
            break;
        }
        let candidate: Vec<f64> = theta.iter().zip(&g).map(|(t, g)| t - lr * g).collect();
        let (jc, gc) = value(&candidate)?;
        if jc <= j {
            theta = candidate;
            j = jc;
            g = gc;
            steps += 1;
        } else {
            lr *= 0.5;
            if lr < 1e-30 {
                break;
            }
        }
    }
    if !converged {
        log::warn!("oracle retrain stopped after {steps} steps without converging");
    }
    let f_before = metric.evaluate(policy)?;
    let f_after = metric.evaluate(&policy.with_theta(theta)?)?;
    Ok(OracleEstimate { influence: (f_after - f_before) / eps, f_before, f_after, converged, steps })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalInfluence {
    /// `−gᵀ (H + λI)⁻¹ g`.
    pub value: f64,
    /// `λ`, zero unless the Hessian needed damping.
    pub damping: f64,
}

const DAMPING_FLOOR: f64 = 1e4;

/// `−∇L(z)ᵀ H⁻¹ ∇L(z)`, with `H` the Hessian of the training objective.
///
/// A Hessian that is not positive definite is damped by `λI`, starting at
/// `1e-10 · max(1, mean diagonal)` and growing tenfold up to a fixed floor.
pub fn classical_influence(
    pair: &dyn TrainingObjective,
    train: &dyn TrainingObjective,
    theta: &[f64],
) -> Result<ClassicalInfluence, InfluenceError> {
    let g = pair.grad(theta)?;
    let h = train.hessian(theta)?;
    classical_influence_from(&g, &h)
}

/// As `classical_influence` with the gradient and row-major Hessian given.
pub fn classical_influence_from(g: &[f64], h: &[f64]) -> Result<ClassicalInfluence, InfluenceError> {
    let n = g.len();
    if h.len() != n * n {
        return Err(TrainingError::DimensionMismatch { expected: n * n, got: h.len() }.into());
    }
    if g.iter().all(|v| *v == 0.0) {
        return Ok(ClassicalInfluence { value: 0.0, damping: 0.0 });
    }
    let h = DMatrix::from_row_slice(n, n, h);
    let h = (&h + h.transpose()) * 0.5;
    let gv = nalgebra::DVector::from_column_slice(g);
    let scale = (h.trace() / n as f64).abs().max(1.0);
    let mut damping = 0.0;
    loop {
        let damped = &h + DMatrix::identity(n, n) * damping;
        if let Some(chol) = damped.cholesky() {
            let x = chol.solve(&gv);
            if damping > 0.0 {
                log::warn!("classical influence used damping {damping:e}");
            }
            return Ok(ClassicalInfluence { value: -gv.dot(&x), damping });
        }
        damping = if damping == 0.0 { 1e-10 * scale } else { damping * 10.0 };
        if damping > DAMPING_FLOOR * scale {
            return Err(InfluenceError::SingularHessian(damping / 10.0));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_synthetic_tasks, Setting};
    use crate::policy::{FeatureSpec, ReplayPolicy, TemplateKind, ToySpec};
    use crate::topology::{AgentId, TopologyGraph};
    use crate::training::QuadraticObjective;

    /// Two templates, bias feature only: `π(Answer) = σ(θ₁ − θ₀)`.
    fn logistic() -> ToySpec {
        ToySpec {
            templates: vec![TemplateKind::Share, TemplateKind::Answer],
            features: FeatureSpec { context_load: false, buckets: 0 },
            ..Default::default()
        }
    }

    fn logistic_pair(chosen_answer: bool) -> PairExample {
        let p = Arc::new(generate_synthetic_tasks(Setting::InfoExchange, 1, 0).remove(0));
        let state = DialogueState::initial(p);
        let agent = AgentId::from("A");
        let support = ToyPolicy::zeros(logistic()).support(&state, &agent).unwrap();
        let (c, r) = if chosen_answer { (1, 0) } else { (0, 1) };
        PairExample { state, agent, chosen: support[c].clone(), rejected: support[r].clone() }
    }

    fn p_answer(policy: &ToyPolicy) -> f64 {
        let t = policy.theta();
        1.0 / (1.0 + (t[0] - t[1]).exp())
    }

    #[test]
    fn logistic_probe_sign_matches_hand_derivation() {
        // Preferring Answer raises θ₁ − θ₀, so π(Answer) goes up; the swap lowers it.
        let policy = ToyPolicy::new(logistic(), vec![0.2, -0.1]).unwrap();
        let metric = p_answer;
        let cfg = ProbeConfig::default();
        let up = probe_influence(&policy, &policy, "up", &logistic_pair(true), &metric, &cfg, 0.5).unwrap();
        let down = probe_influence(&policy, &policy, "down", &logistic_pair(false), &metric, &cfg, 0.5).unwrap();
        assert!(up.influence > 0.0 && down.influence < 0.0);
        assert_eq!(up.influence, (up.f_after - up.f_before) / up.epsilon);
        let oracle = |ex| {
            oracle_retrain_influence(&policy, &policy, &ex, &metric, &cfg, 0.5, &OracleConfig::default()).unwrap()
        };
        let (ou, od) = (oracle(logistic_pair(true)), oracle(logistic_pair(false)));
        assert!(ou.converged && od.converged);
        assert!(ou.influence > 0.0 && od.influence < 0.0);
        assert!((ou.influence - up.influence).abs() < 0.1 * up.influence.abs());
    }

    #[test]
    fn probe_leaves_theta_untouched_and_swaps_negate_the_step() {
        let policy = ToyPolicy::new(logistic(), vec![0.3, 0.7]).unwrap();
        let before = policy.clone();
        let metric = p_answer;
        let prober = Prober::new(&policy, &policy, &metric, ProbeConfig::default(), 0.5).unwrap();
        let a = prober.probed_theta(&logistic_pair(true)).unwrap();
        let b = prober.probed_theta(&logistic_pair(false)).unwrap();
        for i in 0..2 {
            assert_eq!(a[i] - policy.theta()[i], -(b[i] - policy.theta()[i]));
        }
        prober.probe("x", &logistic_pair(true)).unwrap();
        assert_eq!(policy, before);
    }

    #[test]
    fn saturated_pair_has_zero_influence() {
        // Reference far behind: the margin is huge and the gradient vanishes.
        let policy = ToyPolicy::new(logistic(), vec![-400.0, 400.0]).unwrap();
        let reference = ToyPolicy::new(logistic(), vec![0.0, 0.0]).unwrap();
        let metric = p_answer;
        let r = probe_influence(&policy, &reference, "s", &logistic_pair(true), &metric, &ProbeConfig::default(), 0.5)
            .unwrap();
        assert!(r.influence.abs() < 1e-9);
        let o = oracle_retrain_influence(
            &policy,
            &reference,
            &logistic_pair(true),
            &metric,
            &ProbeConfig::default(),
            0.5,
            &OracleConfig::default(),
        )
        .unwrap();
        assert!(o.influence.abs() < 1e-9);
    }

    #[test]
    fn linear_metric_is_invariant_to_epsilon_scaling() {
        let policy = ToyPolicy::new(logistic(), vec![0.1, 0.4]).unwrap();
        let w = [0.3, -1.7];
        let metric = move |p: &ToyPolicy| p.theta().iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        let ex = logistic_pair(true);
        let at = |epsilon| {
            let cfg = ProbeConfig { epsilon, ..Default::default() };
            probe_influence(&policy, &policy, "l", &ex, &metric, &cfg, 0.5).unwrap().influence
        };
        let base = at(1.0);
        for c in [0.5, 0.1, 0.01] {
            assert!((at(c) - base).abs() < 1e-12 * base.abs().max(1.0));
        }
        // Nonlinear metric: invariant to first order.
        let ex = logistic_pair(true);
        let nl = |epsilon| {
            let cfg = ProbeConfig { epsilon, ..Default::default() };
            probe_influence(&policy, &policy, "n", &ex, &p_answer, &cfg, 0.5).unwrap().influence
        };
        assert!((nl(0.01) - nl(0.02)).abs() < 1e-3 * nl(0.01).abs());
    }

    #[test]
    fn oracle_estimates_converge_as_epsilon_shrinks() {
        let policy = ToyPolicy::new(logistic(), vec![0.5, -0.5]).unwrap();
        let ex = logistic_pair(true);
        let est: Vec<f64> = [0.5, 0.1, 0.01]
            .iter()
            .map(|&epsilon| {
                let cfg = ProbeConfig { epsilon, eta: 1.0, ..Default::default() };
                oracle_retrain_influence(&policy, &policy, &ex, &p_answer, &cfg, 0.5, &OracleConfig::default())
                    .unwrap()
                    .influence
            })
            .collect();
        assert!((est[2] - est[1]).abs() < (est[1] - est[0]).abs());
    }

    #[test]
    fn masked_probe_moves_only_masked_entries() {
        let policy = ToyPolicy::new(logistic(), vec![0.0, 0.0]).unwrap();
        let cfg = ProbeConfig { restrict_update: RestrictUpdate::MaskedSubset, mask: vec![1], ..Default::default() };
        let prober = Prober::new(&policy, &policy, &p_answer, cfg, 0.5).unwrap();
        let t = prober.probed_theta(&logistic_pair(true)).unwrap();
        assert_eq!(t[0], 0.0);
        assert!(t[1] > 0.0);
        let bad = ProbeConfig { restrict_update: RestrictUpdate::MaskedSubset, mask: vec![5], ..Default::default() };
        assert!(Prober::new(&policy, &policy, &p_answer, bad, 0.5).is_err());
    }

    #[test]
    fn greedy_and_expected_metrics() {
        let env = Environment::new(TopologyGraph::ping_pong("A", "B", 2).unroll().unwrap());
        let val: Vec<Arc<ProblemInstance>> =
            generate_synthetic_tasks(Setting::InfoExchange, 3, 4).into_iter().map(Arc::new).collect();
        assert!(matches!(GreedyValidation::new(&[], &env), Err(InfluenceError::Env(EnvError::EmptyValidation))));
        // Always Share then always Answer: the expected metric equals the greedy one.
        let spec = ToySpec {
            templates: vec![TemplateKind::Share, TemplateKind::Answer],
            features: FeatureSpec { context_load: false, buckets: 0 },
            ..Default::default()
        };
        let share = ToyPolicy::new(spec.clone(), vec![60.0, 0.0]).unwrap();
        let g = GreedyValidation::new(&val, &env).unwrap().evaluate(&share).unwrap();
        let e = ExpectedValidation::new(&val, &env).unwrap().evaluate(&share).unwrap();
        assert!((g - e).abs() < 1e-12);
        // Uniform policy over two templates: expected metric is the mean over the four paths.
        let uniform = ToyPolicy::zeros(spec);
        let e = ExpectedValidation::new(&val[..1], &env).unwrap().evaluate(&uniform).unwrap();
        let mut paths = 0.0;
        let p0 = DialogueState::initial(Arc::clone(&val[0]));
        for a in uniform.support(&p0, &"A".into()).unwrap() {
            let s1 = trans(&p0, &a).unwrap();
            if let Termination::Answer(ans) = env.termination(&s1) {
                paths += 0.5 * task_metric(Some(&ans), &val[0].gold, Setting::InfoExchange);
                continue;
            }
            for b in uniform.support(&s1, &"B".into()).unwrap() {
                let s2 = trans(&s1, &b).unwrap();
                if let Termination::Answer(ans) = env.termination(&s2) {
                    paths += 0.25 * task_metric(Some(&ans), &val[0].gold, Setting::InfoExchange);
                    continue;
                }
                let s2p = uniform.template_probs(&s2, &"A".into()).unwrap();
                for (pa, a2) in s2p.iter().zip(uniform.support(&s2, &"A".into()).unwrap()) {
                    let s3 = trans(&s2, &a2).unwrap();
                    let mut rec = |s: &DialogueState, w: f64| {
                        if let Termination::Answer(ans) = env.termination(s) {
                            paths += w * task_metric(Some(&ans), &val[0].gold, Setting::InfoExchange);
                        }
                    };
                    if env.termination(&s3).is_terminal() {
                        rec(&s3, 0.25 * pa);
                        continue;
                    }
                    for b2 in uniform.support(&s3, &"B".into()).unwrap() {
                        rec(&trans(&s3, &b2).unwrap(), 0.25 * pa * 0.5);
                    }
                }
            }
        }
        assert!((e - paths).abs() < 1e-12, "{e} vs {paths}");
    }

    #[test]
    fn remote_and_replay_policies_cannot_be_probed() {
        let replay = ReplayPolicy::new();
        let toy = ToyPolicy::zeros(logistic());
        let err = Prober::new(&replay, &toy, &p_answer, ProbeConfig::default(), 0.5).err().unwrap();
        assert!(matches!(err, InfluenceError::Policy(PolicyError::NotDifferentiable(_))));
    }

    #[test]
    fn classical_influence_on_quadratic() {
        // H = [[2,1,0],[1,3,1],[0,1,4]], det = 18; adjugate inverse by hand.
        let h = vec![2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0];
        let inv = [[11.0, -4.0, 1.0], [-4.0, 8.0, -2.0], [1.0, -2.0, 5.0]].map(|r| r.map(|v| v / 18.0));
        let train = QuadraticObjective::new(h.clone(), vec![0.0; 3]).unwrap();
        let pair = QuadraticObjective::new(h, vec![1.0, -2.0, 0.5]).unwrap();
        let theta = [0.3, 0.1, -0.2];
        let g = pair.grad(&theta).unwrap();
        let mut expected = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                expected -= g[i] * inv[i][j] * g[j];
            }
        }
        let got = classical_influence(&pair, &train, &theta).unwrap();
        assert!((got.value - expected).abs() < 1e-12);
        assert_eq!(got.damping, 0.0);
        assert_eq!(classical_influence_from(&[0.0; 3], &[0.0; 9]).unwrap().value, 0.0);
    }

    #[test]
    fn singular_hessians_are_damped() {
        // Rank-deficient PSD: damping makes it solvable.
        let r = classical_influence_from(&[1.0, 1.0], &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(r.damping > 0.0 && r.value < 0.0);
        // Strongly indefinite: the damping floor is reached.
        assert!(matches!(
            classical_influence_from(&[1.0, 0.0], &[1e6, 0.0, 0.0, -1e6]),
            Err(InfluenceError::SingularHessian(_))
        ));
    }

    #[test]
    fn dpo_classical_self_influence_is_non_positive() {
        let spec = ToySpec { features: FeatureSpec { context_load: true, buckets: 2 }, ..logistic() };
        let policy = ToyPolicy::random(spec, 0.5, 2);
        let obj = DpoObjective::new(&policy, &policy, vec![logistic_pair(true)], 0.5).unwrap();
        // The single-pair Hessian is rank one, so damping is needed; the form stays non-positive.
        let v = classical_influence(&obj, &obj, policy.theta()).unwrap();
        assert!(v.value <= 0.0);
    }
}

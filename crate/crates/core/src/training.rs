//! Training losses with exact gradients and Hessians for toy policies, and
//! the safeguarded full-batch gradient descent used by SFT and DPO.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::env::{DialogueState, Message, ProblemInstance, Trajectory};
use crate::mcts::PreferencePair;
use crate::policy::{Policy, PolicyError, ToyPolicy};
use crate::topology::AgentId;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("no problem instance with id {0}")]
    UnknownProblem(String),
    #[error("parameter vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// `log σ(x)`, stable for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A preference pair resolved against its problem instance.
#[derive(Debug, Clone)]
pub struct PairExample {
    pub state: DialogueState,
    pub agent: AgentId,
    pub chosen: Message,
    pub rejected: Message,
}

impl PairExample {
    pub fn new(pair: &PreferencePair, problem: Arc<ProblemInstance>) -> Self {
        Self {
            state: pair.state(problem),
            agent: pair.chosen.agent.clone(),
            chosen: pair.chosen.clone(),
            rejected: pair.rejected.clone(),
        }
    }

    /// Resolve every pair through `problems`, keyed by problem id.
    pub fn resolve_all(
        pairs: &[PreferencePair],
        problems: &BTreeMap<String, Arc<ProblemInstance>>,
    ) -> Result<Vec<Self>, TrainingError> {
        pairs
            .iter()
            .map(|p| {
                let problem =
                    problems.get(&p.problem_id).ok_or_else(|| TrainingError::UnknownProblem(p.problem_id.clone()))?;
                Ok(Self::new(p, Arc::clone(problem)))
            })
            .collect()
    }
}

/// DPO margin `(logπ(a_h) − logπ_ref(a_h)) − (logπ(a_l) − logπ_ref(a_l))`.
pub fn dpo_margin(policy: &dyn Policy, reference: &dyn Policy, ex: &PairExample) -> Result<f64, PolicyError> {
    let lp = |p: &dyn Policy, a: &Message| p.action_logprob(&ex.state, &ex.agent, a);
    Ok((lp(policy, &ex.chosen)? - lp(reference, &ex.chosen)?) - (lp(policy, &ex.rejected)? - lp(reference, &ex.rejected)?))
}

/// `−log σ(β · margin)`.
pub fn dpo_loss(policy: &dyn Policy, reference: &dyn Policy, ex: &PairExample, beta: f64) -> Result<f64, PolicyError> {
    require_toy(policy)?;
    require_toy(reference)?;
    Ok(-log_sigmoid(beta * dpo_margin(policy, reference, ex)?))
}

/// `∇θ dpo_loss = −β σ(−β m) (∇logπ(a_h) − ∇logπ(a_l))`.
pub fn dpo_grad(policy: &dyn Policy, reference: &dyn Policy, ex: &PairExample, beta: f64) -> Result<Vec<f64>, PolicyError> {
    let toy = require_toy(policy)?;
    require_toy(reference)?;
    let mut g = vec![0.0; toy.n_params()];
    accumulate_dpo_grad(toy, reference, ex, beta, 1.0, &mut g)?;
    Ok(g)
}

fn accumulate_dpo_grad(
    toy: &ToyPolicy,
    reference: &dyn Policy,
    ex: &PairExample,
    beta: f64,
    scale: f64,
    out: &mut [f64],
) -> Result<f64, PolicyError> {
    let m = dpo_margin(toy, reference, ex)?;
    let c = -beta * sigmoid(-beta * m) * scale;
    toy.accumulate_logprob_grad(&ex.state, &ex.agent, &ex.chosen, c, out)?;
    toy.accumulate_logprob_grad(&ex.state, &ex.agent, &ex.rejected, -c, out)?;
    Ok(-log_sigmoid(beta * m))
}

fn require_toy(policy: &dyn Policy) -> Result<&ToyPolicy, PolicyError> {
    policy.as_toy().ok_or(PolicyError::NotDifferentiable(policy.kind()))
}

/// One `(state, action)` step of a supervised trajectory.
#[derive(Debug, Clone)]
pub struct SftExample {
    pub state: DialogueState,
    pub action: Message,
}

impl SftExample {
    /// Every message of `t` paired with the state it was sent in.
    pub fn from_trajectory(t: &Trajectory, problem: Arc<ProblemInstance>) -> Vec<Self> {
        (0..t.messages.len())
            .map(|i| Self {
                state: DialogueState::with_transcript(Arc::clone(&problem), t.messages[..i].to_vec()),
                action: t.messages[i].clone(),
            })
            .collect()
    }
}

/// Mean negative log-likelihood of every message.
pub fn sft_loss(policy: &dyn Policy, examples: &[SftExample]) -> Result<f64, TrainingError> {
    require_toy(policy)?;
    if examples.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    let mut total = 0.0;
    for ex in examples {
        total -= policy.action_logprob(&ex.state, &ex.action.agent, &ex.action)?;
    }
    Ok(total / examples.len() as f64)
}

pub fn sft_grad(policy: &dyn Policy, examples: &[SftExample]) -> Result<Vec<f64>, TrainingError> {
    let toy = require_toy(policy)?;
    if examples.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    let mut g = vec![0.0; toy.n_params()];
    let scale = -1.0 / examples.len() as f64;
    for ex in examples {
        toy.accumulate_logprob_grad(&ex.state, &ex.action.agent, &ex.action, scale, &mut g)?;
    }
    Ok(g)
}

/// A twice-differentiable scalar objective over a flat parameter vector.
pub trait TrainingObjective: Sync {
    fn n_params(&self) -> usize;
    fn loss(&self, theta: &[f64]) -> Result<f64, TrainingError>;
    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>, TrainingError>;
    /// Row-major `n × n`.
    fn hessian(&self, theta: &[f64]) -> Result<Vec<f64>, TrainingError>;

    fn loss_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>), TrainingError> {
        Ok((self.loss(theta)?, self.grad(theta)?))
    }
}

/// Mean DPO loss over a pair set against a frozen reference.
pub struct DpoObjective {
    template: ToyPolicy,
    reference: ToyPolicy,
    examples: Vec<PairExample>,
    beta: f64,
}

impl DpoObjective {
    /// `template` supplies the policy shape; its parameters are ignored.
    pub fn new(template: &ToyPolicy, reference: &ToyPolicy, examples: Vec<PairExample>, beta: f64) -> Result<Self, TrainingError> {
        if examples.is_empty() {
            return Err(TrainingError::EmptyDataset);
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(TrainingError::InvalidConfig("beta must be positive".into()));
        }
        Ok(Self { template: template.clone(), reference: reference.clone(), examples, beta })
    }

    fn at(&self, theta: &[f64]) -> Result<ToyPolicy, TrainingError> {
        if theta.len() != self.template.n_params() {
            return Err(TrainingError::DimensionMismatch { expected: self.template.n_params(), got: theta.len() });
        }
        Ok(self.template.with_theta(theta.to_vec())?)
    }

    pub fn examples(&self) -> &[PairExample] {
        &self.examples
    }
}

impl TrainingObjective for DpoObjective {
    fn n_params(&self) -> usize {
        self.template.n_params()
    }

    fn loss(&self, theta: &[f64]) -> Result<f64, TrainingError> {
        let p = self.at(theta)?;
        let mut total = 0.0;
        for ex in &self.examples {
            total += dpo_loss(&p, &self.reference, ex, self.beta)?;
        }
        Ok(total / self.examples.len() as f64)
    }

    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>, TrainingError> {
        Ok(self.loss_and_grad(theta)?.1)
    }

    fn loss_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>), TrainingError> {
        let p = self.at(theta)?;
        let mut g = vec![0.0; p.n_params()];
        let scale = 1.0 / self.examples.len() as f64;
        let mut total = 0.0;
        for ex in &self.examples {
            total += accumulate_dpo_grad(&p, &self.reference, ex, self.beta, scale, &mut g)?;
        }
        Ok((total * scale, g))
    }

    /// `β² σ(βm) σ(−βm) ∇m ∇mᵀ − β σ(−βm) ∇²m`, averaged.
    fn hessian(&self, theta: &[f64]) -> Result<Vec<f64>, TrainingError> {
        let p = self.at(theta)?;
        let n = p.n_params();
        let scale = 1.0 / self.examples.len() as f64;
        let mut h = vec![0.0; n * n];
        for ex in &self.examples {
            let m = dpo_margin(&p, &self.reference, ex)?;
            let bm = self.beta * m;
            let mut dm = p.logprob_grad(&ex.state, &ex.agent, &ex.chosen)?;
            p.accumulate_logprob_grad(&ex.state, &ex.agent, &ex.rejected, -1.0, &mut dm)?;
            let hc = p.logprob_hessian(&ex.state, &ex.agent, &ex.chosen)?;
            let hr = p.logprob_hessian(&ex.state, &ex.agent, &ex.rejected)?;
            let outer = self.beta * self.beta * sigmoid(bm) * sigmoid(-bm) * scale;
            let curv = -self.beta * sigmoid(-bm) * scale;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += outer * dm[i] * dm[j] + curv * (hc[i * n + j] - hr[i * n + j]);
                }
            }
        }
        Ok(h)
    }
}

/// Mean negative log-likelihood over supervised steps.
pub struct SftObjective {
    template: ToyPolicy,
    examples: Vec<SftExample>,
}

impl SftObjective {
    pub fn new(template: &ToyPolicy, examples: Vec<SftExample>) -> Result<Self, TrainingError> {
        if examples.is_empty() {
            return Err(TrainingError::EmptyDataset);
        }
        Ok(Self { template: template.clone(), examples })
    }

    fn at(&self, theta: &[f64]) -> Result<ToyPolicy, TrainingError> {
        if theta.len() != self.template.n_params() {
            return Err(TrainingError::DimensionMismatch { expected: self.template.n_params(), got: theta.len() });
        }
        Ok(self.template.with_theta(theta.to_vec())?)
    }
}

impl TrainingObjective for SftObjective {
    fn n_params(&self) -> usize {
        self.template.n_params()
    }

    fn loss(&self, theta: &[f64]) -> Result<f64, TrainingError> {
        sft_loss(&self.at(theta)?, &self.examples)
    }

    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>, TrainingError> {
        sft_grad(&self.at(theta)?, &self.examples)
    }

    fn hessian(&self, theta: &[f64]) -> Result<Vec<f64>, TrainingError> {
        let p = self.at(theta)?;
        let n = p.n_params();
        let scale = -1.0 / self.examples.len() as f64;
        let mut h = vec![0.0; n * n];
        for ex in &self.examples {
            let hl = p.logprob_hessian(&ex.state, &ex.action.agent, &ex.action)?;
            h.iter_mut().zip(hl).for_each(|(a, b)| *a += scale * b);
        }
        Ok(h)
    }
}

/// `½ θᵀAθ − bᵀθ` with a fixed symmetric `A` (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl QuadraticObjective {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self, TrainingError> {
        let n = b.len();
        if a.len() != n * n {
            return Err(TrainingError::DimensionMismatch { expected: n * n, got: a.len() });
        }
        Ok(Self { a, b })
    }

    fn check(&self, theta: &[f64]) -> Result<(), TrainingError> {
        if theta.len() != self.b.len() {
            return Err(TrainingError::DimensionMismatch { expected: self.b.len(), got: theta.len() });
        }
        Ok(())
    }
}

impl TrainingObjective for QuadraticObjective {
    fn n_params(&self) -> usize {
        self.b.len()
    }

    fn loss(&self, theta: &[f64]) -> Result<f64, TrainingError> {
        self.check(theta)?;
        let n = self.b.len();
        let mut l = 0.0;
        for i in 0..n {
            for j in 0..n {
                l += 0.5 * theta[i] * self.a[i * n + j] * theta[j];
            }
            l -= self.b[i] * theta[i];
        }
        Ok(l)
    }

    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>, TrainingError> {
        self.check(theta)?;
        let n = self.b.len();
        Ok((0..n).map(|i| (0..n).map(|j| self.a[i * n + j] * theta[j]).sum::<f64>() - self.b[i]).collect())
    }

    fn hessian(&self, theta: &[f64]) -> Result<Vec<f64>, TrainingError> {
        self.check(theta)?;
        Ok(self.a.clone())
    }
}

/// Loss after each accepted step, starting with the initial loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentTrace {
    pub theta: Vec<f64>,
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent for `epochs` steps.
///
/// A step that would raise the loss is retried with half the step size, so
/// the recorded losses never increase. Once the step size has been halved
/// 40 times without progress the descent stops early.
pub fn descend(
    objective: &dyn TrainingObjective,
    theta0: &[f64],
    learn_rate: f64,
    epochs: usize,
    mut on_epoch: impl FnMut(usize, &[f64], f64),
) -> Result<DescentTrace, TrainingError> {
    if !(learn_rate > 0.0 && learn_rate.is_finite()) {
        return Err(TrainingError::InvalidConfig("learn_rate must be positive".into()));
    }
    if theta0.len() != objective.n_params() {
        return Err(TrainingError::DimensionMismatch { expected: objective.n_params(), got: theta0.len() });
    }
    let mut theta = theta0.to_vec();
    let (mut loss, mut grad) = objective.loss_and_grad(&theta)?;
    let mut losses = vec![loss];
    let mut lr = learn_rate;
    'epochs: for epoch in 0..epochs {
        let mut halvings = 0;
        loop {
            let candidate: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - lr * g).collect();
            let (l, g) = objective.loss_and_grad(&candidate)?;
            if l <= loss {
                theta = candidate;
                loss = l;
                grad = g;
                break;
            }
            halvings += 1;
            if halvings > 40 {
                break 'epochs;
            }
            lr *= 0.5;
        }
        losses.push(loss);
        on_epoch(epoch, &theta, loss);
    }
    Ok(DescentTrace { theta, losses })
}

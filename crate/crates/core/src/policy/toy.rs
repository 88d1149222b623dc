use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{categorical, ActionSample, Policy, PolicyError, PolicyKind, Sharing};
use crate::env::{
    eval_left_to_right, eval_with_precedence, parse_facts, question_subject, task_expression, token_count,
    DialogueState, Fact, Message, Setting,
};
use crate::seed;
use crate::topology::AgentId;

/// Abstract message templates. Rendering fills them from the acting agent's
/// private context and the visible transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Share,
    Answer,
    Ask,
    Guess,
    VerboseShare,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 5] =
        [TemplateKind::Share, TemplateKind::Answer, TemplateKind::Ask, TemplateKind::Guess, TemplateKind::VerboseShare];

    fn prefix(self) -> &'static str {
        match self {
            TemplateKind::Share => "fact:",
            TemplateKind::Answer => "answer:",
            TemplateKind::Ask => "question:",
            TemplateKind::Guess => "guess:",
            TemplateKind::VerboseShare => "facts:",
        }
    }

    fn code(self) -> u64 {
        match self {
            TemplateKind::Share => 1,
            TemplateKind::Answer => 2,
            TemplateKind::Ask => 3,
            TemplateKind::Guess => 4,
            TemplateKind::VerboseShare => 5,
        }
    }

    /// Template that produced `content`, recognised by its leading keyword.
    pub fn classify(content: &str) -> Option<TemplateKind> {
        let first = content.split_whitespace().next()?;
        Self::ALL.into_iter().find(|k| k.prefix() == first)
    }

    pub fn render(self, state: &DialogueState, agent: &AgentId) -> String {
        let context = state.problem.context(agent);
        match state.problem.setting {
            Setting::InfoExchange => render_info(self, context, state),
            Setting::Debate => render_debate(self, context, state),
        }
    }
}

fn fact_line(prefix: &str, f: &Fact) -> String {
    format!("{prefix} {}.", f.render())
}

fn render_info(kind: TemplateKind, context: &str, state: &DialogueState) -> String {
    let person = question_subject(context).unwrap_or("someone");
    let own = parse_facts(context);
    let heard: Vec<Fact> = state.transcript.iter().flat_map(|m| parse_facts(&m.content)).collect();
    let known = || own.iter().chain(heard.iter());
    let pet = known().find(|f| f.relation == "owns" && f.subject == person).map(|f| f.object.clone());
    let color = |pet: &str| known().find(|f| f.relation == "is" && f.subject == pet).map(|f| f.object.clone());

    match kind {
        TemplateKind::Share => {
            let heard_pets: Vec<&str> =
                heard.iter().filter(|f| f.relation == "owns").map(|f| f.object.as_str()).collect();
            let chosen = own
                .iter()
                .find(|f| f.relation == "owns" && f.subject == person)
                .or_else(|| own.iter().find(|f| f.relation == "is" && heard_pets.contains(&f.subject.as_str())))
                .or_else(|| own.first());
            match chosen {
                Some(f) => fact_line("fact:", f),
                None => "fact: nothing to share.".to_string(),
            }
        }
        TemplateKind::VerboseShare => {
            let all: Vec<String> = own.iter().map(Fact::render).collect();
            format!("facts: {} .", all.join(" ; "))
        }
        TemplateKind::Ask => format!("question: which pet does {person} own and what color is it?"),
        TemplateKind::Answer => {
            let answer = match &pet {
                Some(p) => match color(p) {
                    Some(c) => format!("{c} {p}"),
                    None => p.clone(),
                },
                None => "unknown".to_string(),
            };
            format!("answer: <A>{answer}</A>")
        }
        TemplateKind::Guess => {
            let guess = match own.first() {
                Some(f) if f.relation == "is" => format!("{} {}", f.object, f.subject),
                Some(f) => f.object.clone(),
                None => "unknown".to_string(),
            };
            format!("guess: <A>{guess}</A>")
        }
    }
}

/// Last `= value` stated in the transcript.
fn stated_value(state: &DialogueState) -> Option<i64> {
    state.transcript.iter().rev().find_map(|m| {
        let pos = m.content.rfind("= ")?;
        m.content[pos + 2..].split_whitespace().next()?.trim_end_matches('.').parse().ok()
    })
}

fn render_debate(kind: TemplateKind, context: &str, state: &DialogueState) -> String {
    let expr = task_expression(context).unwrap_or("0");
    let correct = eval_with_precedence(expr).unwrap_or(0);
    let naive = eval_left_to_right(expr).unwrap_or(0);
    match kind {
        TemplateKind::Share => format!("fact: {expr} = {correct}."),
        TemplateKind::VerboseShare => format!("facts: {expr} ; products bind first ; result = {correct}."),
        TemplateKind::Ask => format!("question: please check {expr}."),
        TemplateKind::Answer => format!("answer: <A>{}</A>", stated_value(state).unwrap_or(naive)),
        TemplateKind::Guess => format!("guess: <A>{}</A>", naive + 1),
    }
}

/// Which state features feed the logits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// Include the acting agent's private-context length (tokens / 32).
    #[serde(default = "default_true")]
    pub context_load: bool,
    /// One-hot buckets of hash(last message template, slot index); 0 disables.
    #[serde(default = "default_buckets")]
    pub buckets: usize,
}

fn default_true() -> bool {
    true
}

fn default_buckets() -> usize {
    8
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self { context_load: true, buckets: default_buckets() }
    }
}

/// Shape of a toy policy: template vocabulary, features and sharing mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub templates: Vec<TemplateKind>,
    #[serde(default)]
    pub features: FeatureSpec,
    #[serde(default)]
    pub sharing: Sharing,
    /// Agents owning a parameter block in per-agent mode.
    #[serde(default)]
    pub agents: Vec<AgentId>,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            templates: TemplateKind::ALL.to_vec(),
            features: FeatureSpec::default(),
            sharing: Sharing::SharedAcrossAgents,
            agents: Vec::new(),
        }
    }
}

impl ToySpec {
    pub fn n_templates(&self) -> usize {
        self.templates.len()
    }

    pub fn n_features(&self) -> usize {
        1 + usize::from(self.features.context_load) + self.features.buckets
    }

    pub fn block_len(&self) -> usize {
        self.n_templates() * self.n_features()
    }

    pub fn n_blocks(&self) -> usize {
        match self.sharing {
            Sharing::SharedAcrossAgents => 1,
            Sharing::PerAgent => self.agents.len().max(1),
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_blocks() * self.block_len()
    }

    /// Offset of `agent`'s parameter block.
    pub fn block_offset(&self, agent: &AgentId) -> Result<usize, PolicyError> {
        match self.sharing {
            Sharing::SharedAcrossAgents => Ok(0),
            Sharing::PerAgent => self
                .agents
                .iter()
                .position(|a| a == agent)
                .map(|i| i * self.block_len())
                .ok_or_else(|| PolicyError::UnknownAgent(agent.to_string())),
        }
    }

    /// Feature vector of `state` seen by `agent`.
    pub fn features(&self, state: &DialogueState, agent: &AgentId) -> Vec<f64> {
        let mut phi = Vec::with_capacity(self.n_features());
        phi.push(1.0);
        if self.features.context_load {
            phi.push(token_count(state.problem.context(agent)) as f64 / 32.0);
        }
        if self.features.buckets > 0 {
            let last = match state.transcript.last() {
                None => 0,
                Some(m) => TemplateKind::classify(&m.content).map_or(6, TemplateKind::code),
            };
            let h = seed::derive_index(seed::derive_index(0x70_6F_6C, last), state.next_slot as u64);
            let bucket = (h % self.features.buckets as u64) as usize;
            phi.extend((0..self.features.buckets).map(|b| if b == bucket { 1.0 } else { 0.0 }));
        }
        phi
    }
}

/// Log-linear softmax policy over message templates.
///
/// `logit_t(s) = Σ_f θ[block + t·F + f] · φ_f(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    spec: Arc<ToySpec>,
    theta: Vec<f64>,
}

/// Logits, softmax and per-template renderings at one state.
struct Evaluation {
    offset: usize,
    phi: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
    rendered: Vec<String>,
}

impl ToyPolicy {
    pub fn new(spec: ToySpec, theta: Vec<f64>) -> Result<Self, PolicyError> {
        Self::from_shared(Arc::new(spec), theta)
    }

    fn from_shared(spec: Arc<ToySpec>, theta: Vec<f64>) -> Result<Self, PolicyError> {
        if spec.templates.is_empty() {
            return Err(PolicyError::InvalidParams("template vocabulary is empty".into()));
        }
        if theta.len() != spec.n_params() {
            return Err(PolicyError::InvalidParams(format!(
                "expected {} parameters, got {}",
                spec.n_params(),
                theta.len()
            )));
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(PolicyError::InvalidParams(format!("theta[{i}] is not finite")));
        }
        Ok(Self { spec, theta })
    }

    pub fn zeros(spec: ToySpec) -> Self {
        let n = spec.n_params();
        Self::new(spec, vec![0.0; n]).expect("zero parameters are valid")
    }

    /// Parameters drawn uniformly from `[-scale, scale]`.
    pub fn random(spec: ToySpec, scale: f64, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let theta = (0..spec.n_params()).map(|_| rng.gen_range(-1.0..=1.0) * scale).collect();
        Self::new(spec, theta).expect("finite parameters")
    }

    pub fn spec(&self) -> &ToySpec {
        &self.spec
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    /// Same spec, new parameters.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self, PolicyError> {
        Self::from_shared(Arc::clone(&self.spec), theta)
    }

    fn evaluate(&self, state: &DialogueState, agent: &AgentId) -> Result<Evaluation, PolicyError> {
        let offset = self.spec.block_offset(agent)?;
        let phi = self.spec.features(state, agent);
        let f = phi.len();
        let logits: Vec<f64> = (0..self.spec.n_templates())
            .map(|t| {
                let row = &self.theta[offset + t * f..offset + (t + 1) * f];
                row.iter().zip(&phi).map(|(w, x)| w * x).sum()
            })
            .collect();
        let probs = softmax(&logits, 1.0);
        let rendered = self.spec.templates.iter().map(|k| k.render(state, agent)).collect();
        Ok(Evaluation { offset, phi, logits, probs, rendered })
    }

    /// Template probabilities at temperature 1.
    pub fn template_probs(&self, state: &DialogueState, agent: &AgentId) -> Result<Vec<f64>, PolicyError> {
        Ok(self.evaluate(state, agent)?.probs)
    }

    /// Support of the policy at `state`: rendered message per template.
    pub fn support(&self, state: &DialogueState, agent: &AgentId) -> Result<Vec<Message>, PolicyError> {
        let eval = self.evaluate(state, agent)?;
        Ok(eval.rendered.into_iter().map(|c| Message::new(state.next_slot, agent.clone(), c)).collect())
    }

    fn matching(eval: &Evaluation, action: &Message) -> Result<Vec<usize>, PolicyError> {
        let m: Vec<usize> =
            eval.rendered.iter().enumerate().filter(|(_, c)| **c == action.content).map(|(i, _)| i).collect();
        if m.is_empty() {
            return Err(PolicyError::UnsupportedAction(action.content.clone()));
        }
        Ok(m)
    }

    /// Softmax restricted to the templates rendering to `action`.
    fn restricted(eval: &Evaluation, matches: &[usize]) -> Vec<f64> {
        let mut q = vec![0.0; eval.logits.len()];
        let max = matches.iter().map(|&i| eval.logits[i]).fold(f64::NEG_INFINITY, f64::max);
        let mass: f64 = matches.iter().map(|&i| (eval.logits[i] - max).exp()).sum();
        for &i in matches {
            q[i] = (eval.logits[i] - max).exp() / mass;
        }
        q
    }

    pub fn logprob(&self, state: &DialogueState, agent: &AgentId, action: &Message) -> Result<f64, PolicyError> {
        let eval = self.evaluate(state, agent)?;
        let matches = Self::matching(&eval, action)?;
        let max = eval.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = |idx: &mut dyn Iterator<Item = f64>| max + idx.map(|l| (l - max).exp()).sum::<f64>().ln();
        let num = lse(&mut matches.iter().map(|&i| eval.logits[i]));
        let den = lse(&mut eval.logits.iter().cloned());
        Ok(num - den)
    }

    /// `∂ log π(action|state) / ∂θ = (q_t − p_t) φ_f` on the acting block.
    pub fn logprob_grad(
        &self,
        state: &DialogueState,
        agent: &AgentId,
        action: &Message,
    ) -> Result<Vec<f64>, PolicyError> {
        let mut g = vec![0.0; self.n_params()];
        self.accumulate_logprob_grad(state, agent, action, 1.0, &mut g)?;
        Ok(g)
    }

    /// `out += scale · ∇ log π(action|state)`.
    pub fn accumulate_logprob_grad(
        &self,
        state: &DialogueState,
        agent: &AgentId,
        action: &Message,
        scale: f64,
        out: &mut [f64],
    ) -> Result<(), PolicyError> {
        let eval = self.evaluate(state, agent)?;
        let matches = Self::matching(&eval, action)?;
        let q = Self::restricted(&eval, &matches);
        let f = eval.phi.len();
        for t in 0..eval.logits.len() {
            let coef = scale * (q[t] - eval.probs[t]);
            if coef == 0.0 {
                continue;
            }
            for (j, x) in eval.phi.iter().enumerate() {
                out[eval.offset + t * f + j] += coef * x;
            }
        }
        Ok(())
    }

    /// Dense Hessian of `log π(action|state)`, row-major `n × n`:
    /// `Cov_q(ψ) − Cov_p(ψ)` with `ψ_t = e_t ⊗ φ`.
    pub fn logprob_hessian(
        &self,
        state: &DialogueState,
        agent: &AgentId,
        action: &Message,
    ) -> Result<Vec<f64>, PolicyError> {
        let eval = self.evaluate(state, agent)?;
        let matches = Self::matching(&eval, action)?;
        let q = Self::restricted(&eval, &matches);
        let n = self.n_params();
        let f = eval.phi.len();
        let v = eval.logits.len();
        let mut h = vec![0.0; n * n];
        for t in 0..v {
            for u in 0..v {
                let delta = if t == u { 1.0 } else { 0.0 };
                let cov_q = q[t] * delta - q[t] * q[u];
                let cov_p = eval.probs[t] * delta - eval.probs[t] * eval.probs[u];
                let c = cov_q - cov_p;
                if c == 0.0 {
                    continue;
                }
                for a in 0..f {
                    for b in 0..f {
                        let row = eval.offset + t * f + a;
                        let col = eval.offset + u * f + b;
                        h[row * n + col] += c * eval.phi[a] * eval.phi[b];
                    }
                }
            }
        }
        Ok(h)
    }
}

pub(crate) fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl Policy for ToyPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Toy
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
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(PolicyError::InvalidParams(format!("temperature {temperature} must be finite and ≥ 0")));
        }
        let eval = self.evaluate(state, agent)?;
        let mut rng = seed::rng(seed);
        let picks: Vec<usize> = if temperature == 0.0 {
            vec![argmax(&eval.logits); d]
        } else {
            let weights = softmax(&eval.logits, temperature);
            (0..d).map(|_| categorical(&weights, rng.gen::<f64>())).collect()
        };
        picks
            .into_iter()
            .map(|t| {
                let message = Message::new(state.next_slot, agent.clone(), eval.rendered[t].clone());
                let matches = Self::matching(&eval, &message)?;
                let mass: f64 = matches.iter().map(|&i| eval.probs[i]).sum();
                Ok(ActionSample { message, logprob: Some(mass.ln()) })
            })
            .collect()
    }

    fn action_logprob(&self, state: &DialogueState, agent: &AgentId, action: &Message) -> Result<f64, PolicyError> {
        self.logprob(state, agent, action)
    }

    fn as_toy(&self) -> Option<&ToyPolicy> {
        Some(self)
    }
}

//! Problem instances, dialogue state transitions, termination, task metrics
//! and the desk-scale synthetic task generators.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::policy::{Policy, PolicyError};
use crate::reward::RewardBreakdown;
use crate::seed;
use crate::topology::{AgentId, TopologySchedule};

pub const ANSWER_OPEN: &str = "<A>";
pub const ANSWER_CLOSE: &str = "</A>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    InfoExchange,
    Debate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("message labelled slot {got} but the state expects slot {expected}")]
    SlotMismatch { expected: usize, got: usize },
    #[error("slot {0} is outside the schedule")]
    SlotOutOfRange(usize),
    #[error("invalid problem instance {id}: {reason}")]
    InvalidProblem { id: String, reason: String },
    #[error("validation set is empty")]
    EmptyValidation,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("{path}:{line}: {source}")]
    Parse { path: String, line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One task instance. Each agent sees only its own private context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub id: String,
    pub setting: Setting,
    pub contexts: BTreeMap<AgentId, String>,
    pub gold: String,
    pub split: Split,
}

impl ProblemInstance {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |reason: &str| EnvError::InvalidProblem { id: self.id.clone(), reason: reason.into() };
        if self.gold.trim().is_empty() {
            return Err(bad("gold answer is empty"));
        }
        if self.setting == Setting::InfoExchange && self.contexts.len() < 2 {
            return Err(bad("info_exchange needs at least two private contexts"));
        }
        Ok(())
    }

    pub fn context(&self, agent: &AgentId) -> &str {
        self.contexts.get(agent).map(String::as_str).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    #[serde(rename = "slot")]
    pub slot_index: usize,
    pub agent: AgentId,
    pub content: String,
    pub token_count: usize,
}

impl Message {
    pub fn new(slot_index: usize, agent: AgentId, content: impl Into<String>) -> Self {
        let content = content.into();
        let token_count = token_count(&content);
        Self { slot_index, agent, content, token_count }
    }
}

/// A problem plus the transcript so far.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueState {
    pub problem: Arc<ProblemInstance>,
    pub transcript: Vec<Message>,
    pub next_slot: usize,
}

impl DialogueState {
    pub fn initial(problem: Arc<ProblemInstance>) -> Self {
        Self { problem, transcript: Vec::new(), next_slot: 1 }
    }

    pub fn with_transcript(problem: Arc<ProblemInstance>, transcript: Vec<Message>) -> Self {
        let next_slot = transcript.last().map_or(1, |m| m.slot_index + 1);
        Self { problem, transcript, next_slot }
    }

    /// Hex digest of (problem id, transcript); keys replay tables and tree nodes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.problem.id.as_bytes());
        for m in &self.transcript {
            h.update([0u8]);
            h.update(m.slot_index.to_le_bytes());
            h.update(m.agent.as_str().as_bytes());
            h.update([1u8]);
            h.update(m.content.as_bytes());
        }
        hex::encode(&h.finalize()[..16])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    AnswerMarker,
    MaxSlots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub problem_id: String,
    pub messages: Vec<Message>,
    pub final_answer: Option<String>,
    pub terminal_reason: TerminalReason,
    pub reward: Option<RewardBreakdown>,
}

impl Trajectory {
    pub fn token_count(&self) -> usize {
        self.messages.iter().map(|m| m.token_count).sum()
    }
}

/// Result of a termination check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Termination {
    Continue,
    Answer(String),
    MaxSlots,
}

impl Termination {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, Termination::Continue)
    }
}

/// Transition and termination rules for a fixed slot schedule.
#[derive(Debug, Clone)]
pub struct Environment {
    schedule: Arc<TopologySchedule>,
}

impl Environment {
    pub fn new(schedule: TopologySchedule) -> Self {
        Self { schedule: Arc::new(schedule) }
    }

    pub fn schedule(&self) -> &TopologySchedule {
        &self.schedule
    }

    pub fn max_slots(&self) -> usize {
        self.schedule.len()
    }

    /// The agent that acts in `state.next_slot`.
    pub fn acting_agent(&self, state: &DialogueState) -> Result<&AgentId, EnvError> {
        self.schedule.agent_at(state.next_slot).ok_or(EnvError::SlotOutOfRange(state.next_slot))
    }

    pub fn trans(&self, state: &DialogueState, action: &Message) -> Result<DialogueState, EnvError> {
        trans(state, action)
    }

    pub fn termination(&self, state: &DialogueState) -> Termination {
        is_terminal(state, &self.schedule)
    }
}

/// Append `action` to a copy of `state`.
pub fn trans(state: &DialogueState, action: &Message) -> Result<DialogueState, EnvError> {
    if action.slot_index != state.next_slot {
        return Err(EnvError::SlotMismatch { expected: state.next_slot, got: action.slot_index });
    }
    let mut next = state.clone();
    next.transcript.push(action.clone());
    next.next_slot += 1;
    Ok(next)
}

pub fn is_terminal(state: &DialogueState, schedule: &TopologySchedule) -> Termination {
    if let Some(answer) = state.transcript.last().and_then(|m| extract_answer(&m.content)) {
        return Termination::Answer(answer);
    }
    if state.next_slot > schedule.len() {
        return Termination::MaxSlots;
    }
    Termination::Continue
}

/// Text enclosed by the first complete `<A>…</A>` marker, if any.
pub fn extract_answer(content: &str) -> Option<String> {
    let start = content.find(ANSWER_OPEN)? + ANSWER_OPEN.len();
    let len = content[start..].find(ANSWER_CLOSE)?;
    Some(content[start..start + len].trim().to_string())
}

/// Lowercase, drop punctuation, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

pub fn token_count(text: &str) -> usize {
    tokenize(text).len()
}

/// Bag-of-tokens F1.
pub fn token_f1(predicted: &str, gold: &str) -> f64 {
    let pred = tokenize(predicted);
    let gold = tokenize(gold);
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn task_metric(predicted: Option<&str>, gold: &str, setting: Setting) -> f64 {
    let Some(predicted) = predicted else { return 0.0 };
    match setting {
        Setting::InfoExchange => token_f1(predicted, gold),
        Setting::Debate => {
            if tokenize(predicted) == tokenize(gold) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Roll out one full dialogue. Step `i` samples with seed `derive_index(seed, i)`.
pub fn run_episode(
    policy: &dyn Policy,
    problem: Arc<ProblemInstance>,
    env: &Environment,
    temperature: f64,
    seed: u64,
) -> Result<Trajectory, EnvError> {
    let mut state = DialogueState::initial(problem);
    loop {
        match env.termination(&state) {
            Termination::Continue => {}
            Termination::Answer(answer) => return Ok(finish(state, Some(answer))),
            Termination::MaxSlots => return Ok(finish(state, None)),
        }
        let agent = env.acting_agent(&state)?.clone();
        let step_seed = seed::derive_index(seed, state.next_slot as u64);
        let mut samples = policy.sample_actions(&state, &agent, 1, temperature, step_seed)?;
        let action = samples.remove(0).message;
        state = trans(&state, &action)?;
    }
}

fn finish(state: DialogueState, answer: Option<String>) -> Trajectory {
    let terminal_reason =
        if answer.is_some() { TerminalReason::AnswerMarker } else { TerminalReason::MaxSlots };
    Trajectory {
        problem_id: state.problem.id.clone(),
        messages: state.transcript,
        final_answer: answer,
        terminal_reason,
        reward: None,
    }
}

/// Metric of a finished trajectory against its problem.
pub fn trajectory_metric(t: &Trajectory, problem: &ProblemInstance) -> f64 {
    task_metric(t.final_answer.as_deref(), &problem.gold, problem.setting)
}

/// Mean greedy-decoding task metric over `d_val`.
///
/// Instances are evaluated in parallel and summed in ascending id order.
pub fn eval_validation(
    policy: &dyn Policy,
    d_val: &[Arc<ProblemInstance>],
    env: &Environment,
) -> Result<f64, EnvError> {
    if d_val.is_empty() {
        return Err(EnvError::EmptyValidation);
    }
    let mut ordered: Vec<&Arc<ProblemInstance>> = d_val.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let scores: Vec<f64> = ordered
        .par_iter()
        .map(|p| {
            let t = run_episode(policy, Arc::clone(p), env, 0.0, 0)?;
            Ok(trajectory_metric(&t, p))
        })
        .collect::<Result<_, EnvError>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

// ---------------------------------------------------------------------------
// Synthetic tasks

pub const PEOPLE: [&str; 12] =
    ["alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy", "mallory", "oscar"];
pub const PETS: [&str; 12] = ["cat", "dog", "owl", "fox", "eel", "ant", "bee", "cow", "yak", "elk", "emu", "ram"];
pub const COLORS: [&str; 10] = ["red", "blue", "green", "gold", "gray", "pink", "teal", "white", "black", "brown"];

/// Agent ids used by the generated two-agent tasks.
pub const FIRST_AGENT: &str = "A";
pub const SECOND_AGENT: &str = "B";

/// A `subject relation object` fact parsed from context or transcript text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fact {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl Fact {
    pub fn render(&self) -> String {
        format!("{} {} {}", self.subject, self.relation, self.object)
    }
}

/// Facts written as `fact: s r o` (or `facts: s r o ; s r o`) in `text`.
pub fn parse_facts(text: &str) -> Vec<Fact> {
    let mut out = Vec::new();
    for sentence in text.split(['.', ';']) {
        let words: Vec<&str> = sentence.split_whitespace().collect();
        let words: &[&str] = match words.first() {
            Some(&"fact:") | Some(&"facts:") => &words[1..],
            _ => &words,
        };
        if let [s, r, o] = words {
            if *r == "owns" || *r == "is" {
                out.push(Fact { subject: s.to_string(), relation: r.to_string(), object: o.to_string() });
            }
        }
    }
    out
}

/// Subject of the `question: describe the pet of <person>` line.
pub fn question_subject(text: &str) -> Option<&str> {
    text.split('.')
        .map(str::trim)
        .find_map(|s| s.strip_prefix("question: describe the pet of "))
        .map(str::trim)
}

/// Arithmetic expression in a `task: …` line.
pub fn task_expression(text: &str) -> Option<&str> {
    text.split('.').map(str::trim).find_map(|s| s.strip_prefix("task: ")).map(str::trim)
}

/// Evaluate `n op n op n …` with `*` binding tighter than `+`.
pub fn eval_with_precedence(expr: &str) -> Option<i64> {
    let mut sum = 0i64;
    let mut term: Option<i64> = None;
    let mut pending_mul = false;
    for tok in expr.split_whitespace() {
        match tok {
            "+" => {
                sum += term.take()?;
                pending_mul = false;
            }
            "*" => pending_mul = true,
            n => {
                let v: i64 = n.parse().ok()?;
                term = Some(match (term, pending_mul) {
                    (Some(t), true) => t * v,
                    (None, false) => v,
                    _ => return None,
                });
                pending_mul = false;
            }
        }
    }
    Some(sum + term?)
}

/// Evaluate strictly left to right, ignoring precedence.
pub fn eval_left_to_right(expr: &str) -> Option<i64> {
    let mut acc: Option<i64> = None;
    let mut op = None;
    for tok in expr.split_whitespace() {
        match tok {
            "+" | "*" => op = Some(tok),
            n => {
                let v: i64 = n.parse().ok()?;
                acc = Some(match (acc, op.take()) {
                    (None, None) => v,
                    (Some(a), Some("+")) => a + v,
                    (Some(a), Some("*")) => a * v,
                    _ => return None,
                });
            }
        }
    }
    acc
}

/// Generate `n` deterministic instances for `setting`, all in the train split.
pub fn generate_synthetic_tasks(setting: Setting, n: usize, seed: u64) -> Vec<ProblemInstance> {
    (0..n)
        .map(|i| {
            let mut rng = seed::rng(seed::derive_index(seed::derive(seed, "tasks"), i as u64));
            let id = format!("{}-{seed}-{i:05}", match setting {
                Setting::InfoExchange => "ie",
                Setting::Debate => "db",
            });
            match setting {
                Setting::InfoExchange => info_exchange_instance(id, &mut rng),
                Setting::Debate => debate_instance(id, &mut rng),
            }
        })
        .collect()
}

/// Generate disjoint train/validation/test splits.
pub fn generate_splits(setting: Setting, train: usize, val: usize, test: usize, seed: u64) -> Vec<ProblemInstance> {
    let mut all = generate_synthetic_tasks(setting, train + val + test, seed);
    for (i, p) in all.iter_mut().enumerate() {
        p.split = if i < train {
            Split::Train
        } else if i < train + val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    all
}

fn info_exchange_instance(id: String, rng: &mut impl Rng) -> ProblemInstance {
    let mut people = PEOPLE.to_vec();
    let mut pets = PETS.to_vec();
    people.shuffle(rng);
    pets.shuffle(rng);
    let person = people[0];
    let pet = pets[0];
    let color = COLORS[rng.gen_range(0..COLORS.len())];

    let a_distractors = rng.gen_range(1..=4);
    let b_extra = rng.gen_range(0..=3);
    let question = format!("question: describe the pet of {person}.");

    let mut a_facts = vec![format!("fact: {person} owns {pet}.")];
    for k in 0..a_distractors {
        a_facts.push(format!("fact: {} owns {}.", people[k + 1], pets[k + 1]));
    }
    let mut b_facts = vec![format!("fact: {pet} is {color}.")];
    for p in pets.iter().skip(1).take(a_distractors + b_extra) {
        b_facts.push(format!("fact: {p} is {}.", COLORS[rng.gen_range(0..COLORS.len())]));
    }
    a_facts.shuffle(rng);
    b_facts.shuffle(rng);

    let contexts = BTreeMap::from([
        (AgentId::from(FIRST_AGENT), format!("{question} {}", a_facts.join(" "))),
        (AgentId::from(SECOND_AGENT), format!("{question} {}", b_facts.join(" "))),
    ]);
    ProblemInstance { id, setting: Setting::InfoExchange, contexts, gold: format!("{color} {pet}"), split: Split::Train }
}

fn debate_instance(id: String, rng: &mut impl Rng) -> ProblemInstance {
    let n_terms = rng.gen_range(3..=4);
    let mut parts = vec![rng.gen_range(1..=9).to_string()];
    for _ in 1..n_terms {
        parts.push(if rng.gen_bool(0.5) { "+" } else { "*" }.to_string());
        parts.push(rng.gen_range(1..=9).to_string());
    }
    let expr = parts.join(" ");
    let gold = eval_with_precedence(&expr).expect("generated expression is well formed").to_string();
    let contexts = BTreeMap::from([
        (AgentId::from(FIRST_AGENT), format!("task: {expr}. role: solver.")),
        (AgentId::from(SECOND_AGENT), format!("task: {expr}. role: verifier.")),
    ]);
    ProblemInstance { id, setting: Setting::Debate, contexts, gold, split: Split::Train }
}

// ---------------------------------------------------------------------------
// JSONL

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, EnvError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| EnvError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_problems(path: &Path) -> Result<Vec<ProblemInstance>, EnvError> {
    let problems: Vec<ProblemInstance> = read_jsonl(path)?;
    for p in &problems {
        p.validate()?;
    }
    Ok(problems)
}

//! Iterative SFT → search → influence → selection → DPO training loop.
//!
//! Iteration `t` collects SFT data with the previous parameters, fine-tunes
//! from the initial parameters, grows one search tree per training problem,
//! extracts and filters preference pairs, probes each pair's influence on
//! the validation metric, keeps the top fraction by hybrid score and runs
//! DPO against the fine-tuned reference. Every stage writes its artifacts
//! into `iter_{t}/` so a stopped run resumes at any completed iteration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifacts::{read_params, write_params, ArtifactError, RunLock, RunManifest};
use crate::config::{ConfigError, PipelineConfig, PolicyBackend, SftConfig, SftInit};
use crate::env::{
    eval_validation, read_jsonl, run_episode, write_jsonl, EnvError, Environment, ProblemInstance, Split, Trajectory,
};
use crate::influence::{validation_metric, InfluenceError, Prober};
use crate::mcts::{extract_pairs, initial_filter, PreferencePair, SearchTree, SynthesisError, Synthesizer};
use crate::policy::{Policy, PolicyError, RemotePolicy, ToyPolicy};
use crate::reward::{trajectory_reward, ConstantFluency, RewardConfig, RewardError};
use crate::selection::{score_pairs, select, selected_pairs, ScoredPair, SelectConfig, Strategy};
use crate::seed::{self, streams};
use crate::stats;
use crate::training::{descend, DescentTrace, DpoObjective, PairExample, SftExample, SftObjective, TrainingError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Influence(#[from] InfluenceError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid problem set: {0}")]
    Problems(String),
    #[error("cannot resume: {0}")]
    Resume(String),
}

impl PipelineError {
    /// Process exit status: 2 config, 3 IO or lock, 4 synthesis, 5 non-differentiable policy, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.is_not_differentiable() {
            return 5;
        }
        match self {
            Self::Config(_) => 2,
            Self::Io { .. } | Self::Artifact(_) | Self::Env(EnvError::Io(_) | EnvError::Parse { .. }) => 3,
            Self::Synthesis(_) => 4,
            _ => 1,
        }
    }

    fn is_not_differentiable(&self) -> bool {
        fn policy(e: &PolicyError) -> bool {
            matches!(e, PolicyError::NotDifferentiable(_))
        }
        fn training(e: &TrainingError) -> bool {
            matches!(e, TrainingError::Policy(p) if policy(p))
        }
        fn env(e: &EnvError) -> bool {
            matches!(e, EnvError::Policy(p) if policy(p))
        }
        match self {
            Self::Policy(p) => policy(p),
            Self::Training(t) => training(t),
            Self::Env(e) => env(e),
            Self::Influence(InfluenceError::Policy(p)) => policy(p),
            Self::Influence(InfluenceError::Training(t)) => training(t),
            Self::Influence(InfluenceError::Env(e)) => env(e),
            Self::Synthesis(SynthesisError::Policy(p)) => policy(p),
            _ => false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

/// Problems split by their `split` field, plus an id index over all of them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Arc<ProblemInstance>>,
    pub val: Vec<Arc<ProblemInstance>>,
    pub test: Vec<Arc<ProblemInstance>>,
    pub by_id: BTreeMap<String, Arc<ProblemInstance>>,
}

impl Dataset {
    /// Each split is sorted by id; ids must be unique across splits.
    pub fn new(problems: Vec<ProblemInstance>) -> Result<Self, PipelineError> {
        let mut by_id = BTreeMap::new();
        let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for p in problems {
            p.validate()?;
            let p = Arc::new(p);
            if by_id.insert(p.id.clone(), Arc::clone(&p)).is_some() {
                return Err(PipelineError::Problems(format!("duplicate problem id {}", p.id)));
            }
            match p.split {
                Split::Train => train.push(p),
                Split::Validation => val.push(p),
                Split::Test => test.push(p),
            }
        }
        for v in [&mut train, &mut val, &mut test] {
            v.sort_by(|a, b| a.id.cmp(&b.id));
        }
        Ok(Self { train, val, test, by_id })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::new(crate::env::read_problems(path)?)
    }
}

/// Root seed of iteration `t`.
pub fn iteration_seed(root: u64, t: usize) -> u64 {
    seed::derive_index(seed::derive(root, "iteration"), t as u64)
}

/// `θ_init`, drawn from the config's init sub-stream.
pub fn initial_policy(cfg: &PipelineConfig) -> ToyPolicy {
    ToyPolicy::random(cfg.policy.toy.clone(), cfg.policy.init_scale, seed::derive(cfg.seed, streams::INIT))
}

/// The configured policy backend with parameters `theta` (toy only).
pub fn build_policy(cfg: &PipelineConfig, theta: Option<Vec<f64>>) -> Result<Box<dyn Policy>, PipelineError> {
    match cfg.policy.backend {
        PolicyBackend::Toy => {
            let init = initial_policy(cfg);
            Ok(Box::new(match theta {
                Some(t) => init.with_theta(t)?,
                None => init,
            }))
        }
        PolicyBackend::Remote => {
            let remote = cfg.policy.remote.clone().ok_or_else(|| ConfigError::Invalid("missing [policy.remote]".into()))?;
            Ok(Box::new(RemotePolicy::new(remote)))
        }
    }
}

fn require_toy(policy: &dyn Policy) -> Result<&ToyPolicy, PolicyError> {
    policy.as_toy().ok_or(PolicyError::NotDifferentiable(policy.kind()))
}

/// SFT trajectories plus the ids of problems that contributed none.
#[derive(Debug, Clone, PartialEq)]
pub struct SftCollection {
    pub trajectories: Vec<Trajectory>,
    pub skipped: Vec<String>,
}

/// Sample `samples_per_problem` rollouts per problem at temperature 1 and
/// keep the highest-reward one whose task score exceeds the floor.
///
/// Rewards are computed against the problem's own samples. Ties keep the
/// earlier sample.
pub fn sft_data_collect(
    policy: &dyn Policy,
    problems: &[Arc<ProblemInstance>],
    env: &Environment,
    reward: &RewardConfig,
    sft: &SftConfig,
    seed: u64,
) -> Result<SftCollection, PipelineError> {
    let fluency = ConstantFluency::default();
    let picks = problems
        .par_iter()
        .map(|p| -> Result<Option<Trajectory>, PipelineError> {
            let base = seed::derive(seed, &p.id);
            let samples = (0..sft.samples_per_problem)
                .map(|j| run_episode(policy, Arc::clone(p), env, 1.0, seed::derive_index(base, j as u64)))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&Trajectory> = samples.iter().collect();
            let mut best: Option<Trajectory> = None;
            for t in &samples {
                let r = trajectory_reward(t, &refs, reward, p, &fluency)?;
                if r.r_task <= sft.reward_floor {
                    continue;
                }
                if best.as_ref().is_none_or(|b| r.total > b.reward.expect("scored").total) {
                    best = Some(Trajectory { reward: Some(r), ..t.clone() });
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = SftCollection { trajectories: Vec::new(), skipped: Vec::new() };
    for (p, pick) in problems.iter().zip(picks) {
        match pick {
            Some(t) => out.trajectories.push(t),
            None => {
                log::warn!("problem {}: no sampled trajectory cleared the SFT reward floor", p.id);
                out.skipped.push(p.id.clone());
            }
        }
    }
    Ok(out)
}

fn sft_examples(
    dataset: &[Trajectory],
    problems: &BTreeMap<String, Arc<ProblemInstance>>,
) -> Result<Vec<SftExample>, TrainingError> {
    let mut out = Vec::new();
    for t in dataset {
        let p = problems.get(&t.problem_id).ok_or_else(|| TrainingError::UnknownProblem(t.problem_id.clone()))?;
        out.extend(SftExample::from_trajectory(t, Arc::clone(p)));
    }
    Ok(out)
}

/// Full-batch gradient descent on the SFT loss starting from `init`.
pub fn run_sft(
    dataset: &[Trajectory],
    problems: &BTreeMap<String, Arc<ProblemInstance>>,
    init: &ToyPolicy,
    cfg: &SftConfig,
) -> Result<(ToyPolicy, DescentTrace), TrainingError> {
    let objective = SftObjective::new(init, sft_examples(dataset, problems)?)?;
    let trace = descend(&objective, init.theta(), cfg.learn_rate, cfg.epochs, |_, _, _| {})?;
    Ok((init.with_theta(trace.theta.clone())?, trace))
}

/// Gradient descent on the mean DPO loss with the reference frozen at `sft`.
///
/// `on_epoch` sees the parameters after every step.
pub fn run_dpo(
    pairs: &[PreferencePair],
    problems: &BTreeMap<String, Arc<ProblemInstance>>,
    sft: &ToyPolicy,
    cfg: &crate::config::DpoConfig,
    on_epoch: impl FnMut(usize, &[f64], f64),
) -> Result<(ToyPolicy, DescentTrace), TrainingError> {
    let examples = PairExample::resolve_all(pairs, problems)?;
    let objective = DpoObjective::new(sft, sft, examples, cfg.beta)?;
    let trace = descend(&objective, sft.theta(), cfg.learn_rate, cfg.epochs, on_epoch)?;
    Ok((sft.with_theta(trace.theta.clone())?, trace))
}

/// One search tree per problem, grown in parallel and returned in input order.
pub fn synthesize_all(
    policy: &dyn Policy,
    problems: &[Arc<ProblemInstance>],
    env: &Environment,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Vec<SearchTree>, SynthesisError> {
    let fluency = ConstantFluency::default();
    let synth = Synthesizer { policy, env, config: cfg.synthesis, reward: cfg.reward, fluency: &fluency };
    problems.par_iter().map(|p| synth.run(Arc::clone(p), seed::derive(seed, &p.id))).collect()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), PipelineError> {
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(io_err(path))
}


/// Counters and scores of one iteration, written to `report.csv`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub sft_trajectories: usize,
    pub sft_skipped: usize,
    pub sft_loss_first: Option<f64>,
    pub sft_loss_last: Option<f64>,
    pub val_previous: f64,
    pub val_sft: f64,
    pub val_final: f64,
    pub test_final: Option<f64>,
    pub trees: usize,
    pub nodes: usize,
    pub trajectories: usize,
    pub tokens: usize,
    pub pairs_raw: usize,
    pub pairs_filtered: usize,
    pub selected: usize,
    pub mean_influence: Option<f64>,
    pub mean_q_chosen: Option<f64>,
    pub mean_selected_hybrid: Option<f64>,
    pub dpo_loss_first: Option<f64>,
    pub dpo_loss_last: Option<f64>,
}

impl IterationReport {
    fn rows(&self) -> Vec<Vec<String>> {
        let v = serde_json::to_value(self).expect("report serializes");
        let fields = [
            "iteration", "sft_trajectories", "sft_skipped", "sft_loss_first", "sft_loss_last", "val_previous", "val_sft",
            "val_final", "test_final", "trees", "nodes", "trajectories", "tokens", "pairs_raw", "pairs_filtered",
            "selected", "mean_influence", "mean_q_chosen", "mean_selected_hybrid", "dpo_loss_first", "dpo_loss_last",
        ];
        fields
            .iter()
            .map(|k| {
                let value = match &v[*k] {
                    serde_json::Value::Null => "nan".to_string(),
                    other => other.to_string(),
                };
                vec![k.to_string(), value]
            })
            .collect()
    }
}

/// The stages of one iteration, sharing config, data and seeds.
///
/// When `dir` is set each stage writes its artifacts there; the stand-alone
/// CLI commands call the same methods, so chaining them reproduces a
/// pipeline iteration byte for byte.
pub struct Stages<'a> {
    pub cfg: &'a PipelineConfig,
    pub data: &'a Dataset,
    pub env: Environment,
    pub iteration: usize,
    pub seed: u64,
    pub dir: Option<PathBuf>,
}

pub mod files {
    pub const SFT_DATA: &str = "sft_data.jsonl";
    pub const SFT_PARAMS: &str = "sft_params.bin";
    pub const TREES: &str = "trees";
    pub const PAIRS_RAW: &str = "pairs_raw.jsonl";
    pub const PAIRS: &str = "pairs.jsonl";
    pub const SCORED: &str = "scored_pairs.jsonl";
    pub const SELECTED: &str = "selected_pairs.jsonl";
    pub const DPO_TRACE: &str = "dpo_trace.csv";
    pub const REPORT: &str = "report.csv";
    pub const CONFIG: &str = "config.toml";
    pub const SWEEP: &str = "sweep.jsonl";

    pub fn params(t: usize) -> String {
        format!("params_{t}.bin")
    }

    pub fn iteration_dir(t: usize) -> String {
        format!("iter_{t}")
    }
}

/// Outcome of the synthesis stage.
#[derive(Debug, Clone)]
pub struct SynthOutcome {
    pub trees: Vec<SearchTree>,
    pub raw: Vec<PreferencePair>,
    pub filtered: Vec<PreferencePair>,
}

impl<'a> Stages<'a> {
    pub fn new(cfg: &'a PipelineConfig, data: &'a Dataset, iteration: usize, dir: Option<PathBuf>) -> Result<Self, PipelineError> {
        let schedule = cfg.topology.unroll().map_err(|e| ConfigError::Invalid(format!("topology: {e}")))?;
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(io_err(d))?;
        }
        Ok(Self { cfg, data, env: Environment::new(schedule), iteration, seed: iteration_seed(cfg.seed, iteration), dir })
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }

    fn jsonl<T: Serialize>(&self, name: &str, records: &[T]) -> Result<(), PipelineError> {
        if let Some(p) = self.path(name) {
            write_jsonl(&p, records).map_err(io_err(&p))?;
        }
        Ok(())
    }

    fn params(&self, name: &str, theta: &[f64]) -> Result<(), PipelineError> {
        if let Some(p) = self.path(name) {
            write_params(&p, theta)?;
        }
        Ok(())
    }

    pub fn validation_score(&self, policy: &dyn Policy) -> Result<f64, PipelineError> {
        Ok(eval_validation(policy, &self.data.val, &self.env)?)
    }

    pub fn test_score(&self, policy: &dyn Policy) -> Result<Option<f64>, PipelineError> {
        if self.data.test.is_empty() {
            return Ok(None);
        }
        Ok(Some(eval_validation(policy, &self.data.test, &self.env)?))
    }

    /// Collect SFT data with `previous`, then fine-tune from `init` (or from
    /// `previous` in from-previous mode). An empty dataset keeps the start point.
    pub fn sft(&self, previous: &dyn Policy, init: &ToyPolicy) -> Result<(ToyPolicy, SftCollection, Option<DescentTrace>), PipelineError> {
        let collected = sft_data_collect(
            previous,
            &self.data.train,
            &self.env,
            &self.cfg.reward,
            &self.cfg.sft,
            seed::derive(self.seed, streams::SFT),
        )?;
        self.jsonl(files::SFT_DATA, &collected.trajectories)?;
        let start = match self.cfg.sft.init {
            SftInit::FromInitial => init.clone(),
            SftInit::FromPrevious => require_toy(previous)?.clone(),
        };
        let (policy, trace) = if collected.trajectories.is_empty() {
            log::warn!("iteration {}: SFT dataset is empty, keeping the start parameters", self.iteration);
            (start, None)
        } else {
            let (p, t) = run_sft(&collected.trajectories, &self.data.by_id, &start, &self.cfg.sft)?;
            (p, Some(t))
        };
        self.params(files::SFT_PARAMS, policy.theta())?;
        Ok((policy, collected, trace))
    }

    pub fn synth(&self, policy: &dyn Policy) -> Result<SynthOutcome, PipelineError> {
        let trees = synthesize_all(policy, &self.data.train, &self.env, self.cfg, seed::derive(self.seed, streams::SYNTHESIS))?;
        if let Some(dir) = self.path(files::TREES) {
            for t in &trees {
                let nodes = dir.join(format!("{}.nodes.jsonl", t.problem_id()));
                write_jsonl(&nodes, &t.nodes).map_err(io_err(&nodes))?;
                let trajs = dir.join(format!("{}.trajectories.jsonl", t.problem_id()));
                write_jsonl(&trajs, &t.trajectories).map_err(io_err(&trajs))?;
            }
        }
        let raw: Vec<PreferencePair> = trees.iter().flat_map(extract_pairs).collect();
        let filtered = initial_filter(&raw, &self.cfg.filter);
        self.jsonl(files::PAIRS_RAW, &raw)?;
        self.jsonl(files::PAIRS, &filtered)?;
        Ok(SynthOutcome { trees, raw, filtered })
    }

    /// Probe every pair against `policy`, which is also the DPO reference.
    pub fn influence(&self, policy: &dyn Policy, pairs: &[PreferencePair]) -> Result<Vec<ScoredPair>, PipelineError> {
        let metric = validation_metric(self.cfg.probe.metric, &self.data.val, &self.env)?;
        let prober = Prober::new(policy, policy, metric.as_ref(), self.cfg.probe.clone(), self.cfg.dpo.beta)?;
        let examples = PairExample::resolve_all(pairs, &self.data.by_id)?;
        let items: Vec<(String, PairExample)> = pairs.iter().map(|p| p.pair_id.clone()).zip(examples).collect();
        let records = prober.probe_all(&items)?;
        let scored = score_pairs(pairs, &records, self.cfg.select.gamma);
        self.jsonl(files::SCORED, &scored)?;
        Ok(scored)
    }

    pub fn select(&self, mut scored: Vec<ScoredPair>) -> Result<(Vec<ScoredPair>, Vec<PreferencePair>), PipelineError> {
        select(&mut scored, &self.cfg.select, seed::derive(self.seed, streams::SELECT));
        let chosen = selected_pairs(&scored);
        self.jsonl(files::SCORED, &scored)?;
        self.jsonl(files::SELECTED, &chosen)?;
        Ok((scored, chosen))
    }

    /// DPO from `sft`; writes `params_{t}.bin` and the per-epoch loss/metric trace.
    pub fn dpo(&self, sft: &ToyPolicy, selected: &[PreferencePair]) -> Result<(ToyPolicy, Vec<(f64, f64)>), PipelineError> {
        let mut trace = vec![];
        let policy = if selected.is_empty() {
            log::warn!("iteration {}: no pairs selected, skipping DPO", self.iteration);
            trace.push((f64::NAN, self.validation_score(sft)?));
            sft.clone()
        } else {
            let mut metrics = vec![self.validation_score(sft)?];
            let mut failure = None;
            let (p, t) = run_dpo(selected, &self.data.by_id, sft, &self.cfg.dpo, |_, theta, _| {
                match sft.with_theta(theta.to_vec()).map_err(PipelineError::from).and_then(|p| self.validation_score(&p)) {
                    Ok(v) => metrics.push(v),
                    Err(e) => failure = Some(e),
                }
            })?;
            if let Some(e) = failure {
                return Err(e);
            }
            trace.extend(t.losses.iter().copied().zip(metrics));
            p
        };
        self.params(&files::params(self.iteration), policy.theta())?;
        if let Some(path) = self.path(files::DPO_TRACE) {
            let rows: Vec<Vec<String>> =
                trace.iter().enumerate().map(|(i, (l, m))| vec![i.to_string(), l.to_string(), m.to_string()]).collect();
            write_csv(&path, &["epoch", "dpo_loss", "val_metric"], &rows)?;
        }
        Ok((policy, trace))
    }

    /// All stages in order. `previous` is `θ_{t−1}`.
    pub fn run(&self, previous: &dyn Policy, init: &ToyPolicy) -> Result<(ToyPolicy, IterationReport), PipelineError> {
        let val_previous = self.validation_score(previous)?;
        let (sft_policy, collected, sft_trace) = self.sft(previous, init)?;
        let val_sft = self.validation_score(&sft_policy)?;
        let synth = self.synth(&sft_policy)?;
        let scored = self.influence(&sft_policy, &synth.filtered)?;
        let (scored, chosen) = self.select(scored)?;
        let (policy, dpo_trace) = self.dpo(&sft_policy, &chosen)?;
        let infl: Vec<f64> = scored.iter().map(|s| s.influence).collect();
        let qs: Vec<f64> = scored.iter().map(|s| s.pair.q_chosen).collect();
        let hyb: Vec<f64> = scored.iter().filter(|s| s.selected).map(|s| s.hybrid).collect();
        let report = IterationReport {
            iteration: self.iteration,
            sft_trajectories: collected.trajectories.len(),
            sft_skipped: collected.skipped.len(),
            sft_loss_first: sft_trace.as_ref().map(|t| t.losses[0]),
            sft_loss_last: sft_trace.as_ref().and_then(|t| t.losses.last().copied()),
            val_previous,
            val_sft,
            val_final: dpo_trace.last().map_or(val_sft, |x| x.1),
            test_final: self.test_score(&policy)?,
            trees: synth.trees.len(),
            nodes: synth.trees.iter().map(|t| t.len()).sum(),
            trajectories: synth.trees.iter().map(|t| t.trajectories.len()).sum(),
            tokens: synth.trees.iter().flat_map(|t| &t.trajectories).map(|t| t.trajectory.token_count()).sum(),
            pairs_raw: synth.raw.len(),
            pairs_filtered: synth.filtered.len(),
            selected: chosen.len(),
            mean_influence: stats::mean(&infl),
            mean_q_chosen: stats::mean(&qs),
            mean_selected_hybrid: stats::mean(&hyb),
            dpo_loss_first: dpo_trace.first().map(|x| x.0).filter(|v| !v.is_nan()),
            dpo_loss_last: dpo_trace.last().map(|x| x.0).filter(|v| !v.is_nan()),
        };
        if let Some(path) = self.path(files::REPORT) {
            write_csv(&path, &["key", "value"], &report.rows())?;
        }
        Ok((policy, report))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Start at this iteration, loading `θ_{t−1}` from the run directory.
    pub resume: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub policy: ToyPolicy,
    pub reports: Vec<IterationReport>,
}

/// Run iterations `1..=cfg.iterations` (or from `opts.resume`) into `out`.
pub fn run_pipeline(cfg: &PipelineConfig, data: &Dataset, out: &Path, opts: &RunOptions) -> Result<PipelineOutcome, PipelineError> {
    cfg.validate()?;
    if cfg.policy.backend != PolicyBackend::Toy {
        return Err(PolicyError::NotDifferentiable(crate::policy::PolicyKind::Remote).into());
    }
    let _lock = RunLock::acquire(out)?;
    let init = initial_policy(cfg);
    let start = opts.resume.unwrap_or(1);
    let mut manifest = match opts.resume {
        Some(t) => {
            if t < 1 || t > cfg.iterations {
                return Err(PipelineError::Resume(format!("iteration {t} is outside 1..={}", cfg.iterations)));
            }
            let m = RunManifest::load(out)?;
            if m.config_digest != cfg.digest() {
                return Err(PipelineError::Resume("config differs from the one recorded in the manifest".into()));
            }
            if m.iterations_completed + 1 < t {
                return Err(PipelineError::Resume(format!("only {} iterations completed", m.iterations_completed)));
            }
            m
        }
        None => {
            let cfg_path = out.join(files::CONFIG);
            std::fs::write(&cfg_path, cfg.to_toml()).map_err(io_err(&cfg_path))?;
            write_params(&out.join(files::params(0)), init.theta())?;
            let mut m = RunManifest::new(cfg.digest(), cfg.seed, cfg.iterations);
            m.record(files::CONFIG);
            m.record(files::params(0));
            m.notes.push("scaling.csv is produced only after a budget sweep".into());
            m.save(out)?;
            m
        }
    };
    let mut policy = if start == 1 {
        init.clone()
    } else {
        let prev = out.join(files::iteration_dir(start - 1)).join(files::params(start - 1));
        init.with_theta(read_params(&prev)?)?
    };
    let mut reports = Vec::new();
    for t in start..=cfg.iterations {
        let dir_name = files::iteration_dir(t);
        let stages = Stages::new(cfg, data, t, Some(out.join(&dir_name)))?;
        let (next, report) = stages.run(&policy, &init)?;
        log::info!("iteration {t}: val {:.4} -> {:.4}, {} pairs selected", report.val_previous, report.val_final, report.selected);
        policy = next;
        reports.push(report);
        manifest.iterations_completed = t;
        for f in [files::SFT_DATA, files::SFT_PARAMS, files::PAIRS_RAW, files::PAIRS, files::SCORED, files::SELECTED, files::DPO_TRACE, files::REPORT] {
            manifest.record(format!("{dir_name}/{f}"));
        }
        manifest.record(format!("{dir_name}/{}", files::params(t)));
        manifest.record(format!("{dir_name}/{}/", files::TREES));
        manifest.save(out)?;
    }
    Ok(PipelineOutcome { policy, reports })
}

/// One record of a synthesis-budget sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub k: usize,
    pub nodes: usize,
    pub tokens: usize,
    pub pairs_filtered: usize,
    pub val_final: f64,
    pub test_final: Option<f64>,
}

/// Run one iteration per budget `k` into `out/sweep/k_{k}` and record
/// search effort against the resulting validation score.
pub fn run_sweep(cfg: &PipelineConfig, data: &Dataset, out: &Path, budgets: &[usize]) -> Result<Vec<SweepRecord>, PipelineError> {
    let _lock = RunLock::acquire(out)?;
    let init = initial_policy(cfg);
    let mut records = Vec::new();
    for &k in budgets {
        let mut c = cfg.clone();
        c.synthesis.k = k;
        c.validate()?;
        let stages = Stages::new(&c, data, 1, Some(out.join("sweep").join(format!("k_{k}"))))?;
        let (_, r) = stages.run(&init, &init)?;
        records.push(SweepRecord {
            k,
            nodes: r.nodes,
            tokens: r.tokens,
            pairs_filtered: r.pairs_filtered,
            val_final: r.val_final,
            test_final: r.test_final,
        });
    }
    let path = out.join(files::SWEEP);
    write_jsonl(&path, &records).map_err(io_err(&path))?;
    Ok(records)
}

/// Test and validation scores after one iteration under one selection rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    pub gamma: f64,
    pub selected: usize,
    pub val: f64,
    pub test: Option<f64>,
}

/// Run iteration 1 once up to influence scoring, then select and train once
/// per `(strategy, γ)` variant from the same fine-tuned model and pair pool.
pub fn compare_strategies(
    cfg: &PipelineConfig,
    data: &Dataset,
    variants: &[(Strategy, f64)],
) -> Result<Vec<StrategyOutcome>, PipelineError> {
    let stages = Stages::new(cfg, data, 1, None)?;
    let init = initial_policy(cfg);
    let (sft, _, _) = stages.sft(&init, &init)?;
    let synth = stages.synth(&sft)?;
    let scored = stages.influence(&sft, &synth.filtered)?;
    variants
        .iter()
        .map(|&(strategy, gamma)| {
            let mut rescored = scored.clone();
            for s in &mut rescored {
                s.hybrid = crate::selection::hybrid_score(&s.pair, s.influence, gamma);
            }
            let sel = SelectConfig { strategy, gamma, ..cfg.select };
            select(&mut rescored, &sel, seed::derive(stages.seed, streams::SELECT));
            let chosen = selected_pairs(&rescored);
            let (policy, _) = stages.dpo(&sft, &chosen)?;
            Ok(StrategyOutcome {
                strategy,
                gamma,
                selected: chosen.len(),
                val: stages.validation_score(&policy)?,
                test: stages.test_score(&policy)?,
            })
        })
        .collect()
}

/// Read a JSONL artifact written by a stage.
pub fn read_artifact<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    Ok(read_jsonl(path)?)
}

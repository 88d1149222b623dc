//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.
//!
//! Tolerances are pinned as constants next to each check.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use dits::config::PipelineConfig;
use dits::env::{
    generate_splits, generate_synthetic_tasks, run_episode, DialogueState, Environment, Message, ProblemInstance, Setting,
};
use dits::influence::{
    classical_influence, oracle_retrain_influence, validation_metric, MetricKind, OracleConfig, ProbeConfig, Prober,
};
use dits::mcts::{
    initial_filter, normalized_similarity, select_node, synthesize, FilterConfig, PreferencePair, SearchTree,
    SynthesisConfig,
};
use dits::pipeline::{compare_strategies, run_pipeline, Dataset, RunOptions, Stages};
use dits::policy::{FeatureSpec, TemplateKind, ToyPolicy, ToySpec};
use dits::reward::RewardConfig;
use dits::seed;
use dits::selection::Strategy;
use dits::stats::spearman;
use dits::training::{dpo_grad, dpo_loss, sft_grad, sft_loss, PairExample, QuadraticObjective, SftExample};
use rand::Rng;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn env() -> Environment {
    Environment::new(PipelineConfig::default().topology.unroll().unwrap())
}

/// Random states with two distinct supported actions, drawn from rollouts.
fn random_cases(n: usize, root: u64) -> Vec<(ToyPolicy, ToyPolicy, PairExample, Vec<SftExample>, f64)> {
    let e = env();
    let problems: Vec<Arc<ProblemInstance>> =
        generate_synthetic_tasks(Setting::InfoExchange, 25, root).into_iter().map(Arc::new).collect();
    let betas = [0.1, 0.5, 0.7];
    let mut out = Vec::new();
    let mut i = 0u64;
    while out.len() < n {
        let s = seed::derive_index(root, i);
        i += 1;
        let policy = ToyPolicy::random(ToySpec::default(), 1.0, s);
        let reference = ToyPolicy::random(ToySpec::default(), 1.0, s ^ 0xFFFF);
        let problem = Arc::clone(&problems[i as usize % problems.len()]);
        let t = run_episode(&policy, Arc::clone(&problem), &e, 1.0, s).unwrap();
        let k = (s % t.messages.len() as u64) as usize;
        let state = DialogueState::with_transcript(Arc::clone(&problem), t.messages[..k].to_vec());
        let agent = e.acting_agent(&state).unwrap().clone();
        let support = policy.support(&state, &agent).unwrap();
        let a = (s >> 8) as usize % support.len();
        let b = (a + 1 + (s >> 16) as usize % (support.len() - 1)) % support.len();
        if support[a].content == support[b].content {
            continue;
        }
        let pair = PairExample { state, agent, chosen: support[a].clone(), rejected: support[b].clone() };
        let sft = SftExample::from_trajectory(&t, problem);
        out.push((policy, reference, pair, sft, betas[out.len() % 3]));
    }
    out
}

fn central_difference(theta: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            x[i] = theta[i] + h;
            let up = f(&x);
            x[i] = theta[i] - h;
            let down = f(&x);
            x[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-3)`; the floor keeps near-zero gradients from
/// turning finite-difference round-off into a large ratio.
fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-3)
}

fn gradient_correctness() -> Outcome {
    const CASES: usize = 100;
    const H: f64 = 1e-5;
    const MAX_REL: f64 = 1e-5;
    const MAX_TIME: Duration = Duration::from_secs(10);
    let start = Instant::now();
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for (policy, reference, pair, sft, beta) in random_cases(CASES, 11) {
        let theta = policy.theta().to_vec();
        let at = |t: &[f64]| policy.with_theta(t.to_vec()).unwrap();
        let g = policy.logprob_grad(&pair.state, &pair.agent, &pair.chosen).unwrap();
        let fd = central_difference(&theta, H, |t| at(t).logprob(&pair.state, &pair.agent, &pair.chosen).unwrap());
        worst.0 = worst.0.max(relative_error(&g, &fd));
        let g = sft_grad(&policy, &sft).unwrap();
        let fd = central_difference(&theta, H, |t| sft_loss(&at(t), &sft).unwrap());
        worst.1 = worst.1.max(relative_error(&g, &fd));
        let g = dpo_grad(&policy, &reference, &pair, beta).unwrap();
        let fd = central_difference(&theta, H, |t| dpo_loss(&at(t), &reference, &pair, beta).unwrap());
        worst.2 = worst.2.max(relative_error(&g, &fd));
    }
    let elapsed = start.elapsed();
    let pass = worst.0 < MAX_REL && worst.1 < MAX_REL && worst.2 < MAX_REL && elapsed < MAX_TIME;
    outcome(
        pass,
        format!(
            "{CASES} cases, max rel err logprob {:.2e} sft {:.2e} dpo {:.2e} (< {MAX_REL:e}), {:.2}s (< 10s)",
            worst.0,
            worst.1,
            worst.2,
            elapsed.as_secs_f64()
        ),
    )
}

fn dpo_zero_margin() -> Outcome {
    const TOL: f64 = 1e-9;
    let mut worst = 0.0f64;
    for (policy, _, pair, _, _) in random_cases(30, 12) {
        for beta in [0.1, 0.5, 0.7] {
            worst = worst.max((dpo_loss(&policy, &policy, &pair, beta).unwrap() - std::f64::consts::LN_2).abs());
        }
    }
    outcome(worst < TOL, format!("max |loss - ln 2| = {worst:.2e} over 30 pairs x beta in {{0.1, 0.5, 0.7}} (< {TOL:e})"))
}

/// Recursive walk from the root; returns (internal nodes checked, max deviation).
fn walk(tree: &SearchTree, id: usize) -> (usize, f64) {
    let node = &tree.nodes[id];
    if node.children.is_empty() {
        return (0, 0.0);
    }
    let mean = node.children.iter().map(|c| tree.nodes[*c].q).sum::<f64>() / node.children.len() as f64;
    let mut acc = (1, (node.q - mean).abs());
    for &c in &node.children {
        let (n, d) = walk(tree, c);
        acc = (acc.0 + n, acc.1.max(d));
    }
    acc
}

fn tree_consistency() -> Outcome {
    const TOL: f64 = 1e-9;
    let e = env();
    let problems = generate_synthetic_tasks(Setting::InfoExchange, 8, 3);
    let mut trees = 0;
    let mut internal = 0;
    let mut worst = 0.0f64;
    for (d, k) in [(2, 4), (3, 8), (4, 6)] {
        let cfg = SynthesisConfig { d, k, ..Default::default() };
        for (i, p) in problems.iter().enumerate() {
            let policy = ToyPolicy::random(ToySpec::default(), 1.0, i as u64 + 10 * d as u64);
            let tree = synthesize(Arc::new(p.clone()), &policy, &e, cfg, RewardConfig::default(), i as u64).unwrap();
            let (n, dev) = walk(&tree, 0);
            trees += 1;
            internal += n;
            worst = worst.max(dev);
        }
    }
    outcome(worst <= TOL && internal > 0, format!("{trees} trees, {internal} internal nodes, max |q - mean(child q)| = {worst:.2e}"))
}

/// Full-matrix Levenshtein recursion, written independently of the library.
fn oracle_distance(a: &[char], b: &[char]) -> usize {
    let mut m = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in m.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in m[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            m[i][j] = (m[i - 1][j] + 1).min(m[i][j - 1] + 1).min(m[i - 1][j - 1] + cost);
        }
    }
    m[a.len()][b.len()]
}

fn edit_distance_oracle() -> Outcome {
    let mut rng = seed::rng(4);
    let alphabet: Vec<char> = "abcde xyzé".chars().collect();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let mut s = || -> Vec<char> { (0..rng.gen_range(0..=30)).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect() };
        let (a, b) = (s(), s());
        let longest = a.len().max(b.len());
        let expected = if longest == 0 { 0.0 } else { oracle_distance(&a, &b) as f64 / longest as f64 };
        let (sa, sb): (String, String) = (a.iter().collect(), b.iter().collect());
        if normalized_similarity(&sa, &sb) != expected {
            mismatches += 1;
        }
    }
    let kitten = normalized_similarity("kitten", "sitting");
    outcome(mismatches == 0 && kitten == 3.0 / 7.0, format!("1000 random pairs, {mismatches} mismatches; (kitten, sitting) = {kitten}"))
}

fn softmax_calibration() -> Outcome {
    const DRAWS: u64 = 100_000;
    const TOL: f64 = 0.01;
    let mut worst = 0.0f64;
    let sets: [&[f64]; 2] = [&[0.0, 3f64.ln()], &[0.7, 0.7, 0.7, 0.7]];
    for (s, qs) in sets.iter().enumerate() {
        let candidates: Vec<(usize, f64)> = qs.iter().copied().enumerate().collect();
        let z: f64 = qs.iter().map(|q| q.exp()).sum();
        let mut counts = vec![0u64; qs.len()];
        for i in 0..DRAWS {
            counts[select_node(&candidates, 1.0, seed::derive_index(s as u64, i)).unwrap()] += 1;
        }
        for (c, q) in counts.iter().zip(qs.iter()) {
            worst = worst.max((*c as f64 / DRAWS as f64 - q.exp() / z).abs());
        }
    }
    outcome(worst < TOL, format!("{DRAWS} draws per set, max |freq - p| = {worst:.4} (< {TOL})"))
}

fn pair(problem: &str, i: usize, qc: f64, qr: f64) -> PreferencePair {
    PreferencePair {
        pair_id: format!("{problem}/{i:06}"),
        problem_id: problem.into(),
        slot: 1,
        state_transcript: vec![],
        chosen: Message::new(1, "A".into(), "c"),
        rejected: Message::new(1, "A".into(), "r"),
        q_chosen: qc,
        q_rejected: qr,
        parent_node: i,
    }
}

fn filtering_contract() -> Outcome {
    let cfg = FilterConfig::default();
    let edge = [0.4, 0.4 + 1e-12, 0.4 - 1e-12, 0.6, 0.6000000000000001, 0.2, 0.0, 1.0, -0.5, 2.0, f64::NAN];
    let mut rng = seed::rng(6);
    let mut sets = 0;
    let mut violations = 0;
    for _ in 0..300 {
        let problems = rng.gen_range(1..5);
        let mut pairs = Vec::new();
        for p in 0..problems {
            for i in 0..rng.gen_range(0..12) {
                let mut q = || if rng.gen_bool(0.6) { edge[rng.gen_range(0..edge.len())] } else { rng.gen_range(-1.0..2.0) };
                let (qc, qr) = (q(), q());
                pairs.push(pair(&format!("p{p}"), i, qc, qr));
            }
        }
        sets += 1;
        let kept = initial_filter(&pairs, &cfg);
        if kept.iter().any(|k| !(k.q_chosen > 0.4 && k.q_chosen - k.q_rejected > 0.2)) {
            violations += 1;
        }
        let mut eligible: BTreeMap<&str, usize> = BTreeMap::new();
        for p in &pairs {
            if p.q_chosen > 0.4 && p.q_chosen - p.q_rejected > 0.2 {
                *eligible.entry(p.problem_id.as_str()).or_default() += 1;
            }
        }
        let mut survivors: BTreeMap<&str, usize> = BTreeMap::new();
        for k in &kept {
            *survivors.entry(k.problem_id.as_str()).or_default() += 1;
        }
        for (problem, n) in &eligible {
            if survivors.get(problem).copied().unwrap_or(0) != n.div_ceil(2) {
                violations += 1;
            }
        }
        if survivors.keys().any(|p| !eligible.contains_key(p)) {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{sets} constructed pair sets (boundary and NaN Q-values), {violations} contract violations"))
}

fn sign(x: f64) -> i8 {
    if x.abs() <= 1e-12 {
        0
    } else if x > 0.0 {
        1
    } else {
        -1
    }
}

fn probe_vs_oracle() -> Outcome {
    const MIN_SPEARMAN: f64 = 0.7;
    const MIN_SIGN: f64 = 0.8;
    const ETA: f64 = 1.0;
    let start = Instant::now();
    let e = env();
    let spec = ToySpec {
        templates: vec![TemplateKind::Share, TemplateKind::Answer],
        features: FeatureSpec { context_load: true, buckets: 3 },
        ..Default::default()
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for s in 0..3u64 {
        let policy = ToyPolicy::random(spec.clone(), 1.0, s);
        assert!(policy.n_params() <= 10);
        let val: Vec<Arc<ProblemInstance>> =
            generate_synthetic_tasks(Setting::InfoExchange, 20, 100 + s).into_iter().map(Arc::new).collect();
        let train: Vec<Arc<ProblemInstance>> =
            generate_synthetic_tasks(Setting::InfoExchange, 20, 200 + s).into_iter().map(Arc::new).collect();
        let pairs: Vec<PairExample> = train
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let t = run_episode(&policy, Arc::clone(p), &e, 1.0, i as u64).unwrap();
                let k = (i * 7) % t.messages.len();
                let state = DialogueState::with_transcript(Arc::clone(p), t.messages[..k].to_vec());
                let agent = e.acting_agent(&state).unwrap().clone();
                let sup = policy.support(&state, &agent).unwrap();
                let (c, r) = if i % 2 == 0 { (0, 1) } else { (1, 0) };
                PairExample { state, agent, chosen: sup[c].clone(), rejected: sup[r].clone() }
            })
            .collect();
        let cfg = ProbeConfig { eta: ETA, metric: MetricKind::Greedy, ..Default::default() };
        let metric = validation_metric(MetricKind::Greedy, &val, &e).unwrap();
        let prober = Prober::new(&policy, &policy, metric.as_ref(), cfg.clone(), 0.5).unwrap();
        let mut probe = Vec::new();
        let mut oracle = Vec::new();
        for (i, ex) in pairs.iter().enumerate() {
            probe.push(prober.probe(&i.to_string(), ex).unwrap().influence);
            let o = oracle_retrain_influence(&policy, &policy, ex, metric.as_ref(), &cfg, 0.5, &OracleConfig::default()).unwrap();
            oracle.push(o.influence);
        }
        let rho = spearman(&probe, &oracle);
        let agree = probe.iter().zip(&oracle).filter(|(a, b)| sign(**a) == sign(**b)).count() as f64 / probe.len() as f64;
        pass &= rho.is_some_and(|r| r >= MIN_SPEARMAN) && agree >= MIN_SIGN;
        parts.push(format!("seed {s}: spearman {} sign {:.0}%", rho.map_or("undefined".into(), |r| format!("{r:.3}")), 100.0 * agree));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(300);
    outcome(pass, format!("10 params, 20 val problems, 20 pairs, eta {ETA}: {} ({:.1}s)", parts.join(", "), elapsed.as_secs_f64()))
}

fn selection_quality() -> Outcome {
    const SEEDS: u64 = 5;
    const REQUIRED: usize = 4;
    let start = Instant::now();
    let variants = [
        (Strategy::Hybrid, 0.0),
        (Strategy::Hybrid, 1.0),
        (Strategy::Random, 1.0),
        (Strategy::QOnly, 1.0),
        (Strategy::InfluenceOnly, 1.0),
    ];
    let mut wins = [0usize; 2];
    let mut rows = Vec::new();
    for s in 0..SEEDS {
        let data = Dataset::new(generate_splits(Setting::InfoExchange, 200, 50, 50, 1000 + s)).unwrap();
        let cfg = PipelineConfig { seed: s, ..Default::default() };
        let out = compare_strategies(&cfg, &data, &variants).unwrap();
        let test: Vec<f64> = out.iter().map(|o| o.test.unwrap()).collect();
        for (w, t) in wins.iter_mut().zip(&test[..2]) {
            *w += usize::from(*t >= test[2]);
        }
        rows.push(format!(
            "seed {s}: g0 {:.3} g1 {:.3} random {:.3} q-only {:.3} infl-only {:.3}",
            test[0], test[1], test[2], test[3], test[4]
        ));
    }
    let elapsed = start.elapsed();
    for r in &rows {
        println!("    {r}");
    }
    let pass = wins.iter().all(|w| *w >= REQUIRED) && elapsed < Duration::from_secs(1800);
    outcome(
        pass,
        format!(
            "200/50/50 suite, alpha 0.5: hybrid gamma=0 >= random on {}/{SEEDS}, gamma=1 on {}/{SEEDS} (need {REQUIRED}), {:.0}s",
            wins[0],
            wins[1],
            elapsed.as_secs_f64()
        ),
    )
}

fn budget_scaling() -> Outcome {
    const MIN_HYBRID_SHARE: f64 = 0.9;
    let data = Dataset::new(generate_splits(Setting::InfoExchange, 40, 20, 0, 77)).unwrap();
    let base = PipelineConfig { seed: 5, ..Default::default() };
    let first = Stages::new(&base, &data, 1, None).unwrap();
    let init = dits::pipeline::initial_policy(&base);
    let (sft, _, _) = first.sft(&init, &init).unwrap();
    let mut max_reward: Vec<BTreeMap<String, f64>> = Vec::new();
    let mut hybrid: Vec<BTreeMap<String, f64>> = Vec::new();
    for k in [4, 8, 16] {
        let mut cfg = base.clone();
        cfg.synthesis.k = k;
        let stages = Stages::new(&cfg, &data, 1, None).unwrap();
        let synth = stages.synth(&sft).unwrap();
        max_reward.push(synth.trees.iter().map(|t| (t.problem_id().to_string(), t.max_reward().unwrap())).collect());
        let scored = stages.influence(&sft, &synth.filtered).unwrap();
        let (scored, _) = stages.select(scored).unwrap();
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for s in scored.iter().filter(|s| s.selected) {
            let e = sums.entry(s.pair.problem_id.clone()).or_default();
            e.0 += s.hybrid;
            e.1 += 1;
        }
        hybrid.push(sums.into_iter().map(|(p, (s, n))| (p, s / n as f64)).collect());
    }
    let problems: Vec<&String> = max_reward[0].keys().collect();
    let reward_ok = problems.iter().filter(|p| max_reward.windows(2).all(|w| w[1][**p] >= w[0][**p])).count();
    let common: BTreeSet<&String> = hybrid[0].keys().filter(|p| hybrid.iter().all(|h| h.contains_key(*p))).collect();
    let hybrid_ok = common.iter().filter(|p| hybrid.windows(2).all(|w| w[1][**p] >= w[0][**p] - 1e-12)).count();
    let share = if common.is_empty() { 0.0 } else { hybrid_ok as f64 / common.len() as f64 };
    let pass = reward_ok == problems.len() && share >= MIN_HYBRID_SHARE;
    outcome(
        pass,
        format!(
            "k in {{4, 8, 16}}: max reward non-decreasing on {reward_ok}/{} problems; mean selected hybrid non-decreasing on {hybrid_ok}/{} problems selected at every k ({:.0}%, need {:.0}%)",
            problems.len(),
            common.len(),
            100.0 * share,
            100.0 * MIN_HYBRID_SHARE
        ),
    )
}

fn all_files(dir: &Path, prefix: &str, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        let name = format!("{prefix}{}", entry.file_name().to_string_lossy());
        if entry.path().is_dir() {
            all_files(&entry.path(), &format!("{name}/"), out);
        } else {
            out.insert(name, std::fs::read(entry.path()).unwrap());
        }
    }
}

fn determinism() -> Outcome {
    let data = Dataset::new(generate_splits(Setting::InfoExchange, 30, 15, 10, 9)).unwrap();
    let cfg = PipelineConfig { seed: 21, iterations: 2, ..Default::default() };
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        run_pipeline(&cfg, &data, dir.path(), &RunOptions::default()).unwrap();
        let mut files = BTreeMap::new();
        all_files(dir.path(), "", &mut files);
        files.remove("manifest.json");
        snapshots.push(files);
    }
    let checked = snapshots[0].keys().filter(|k| k.ends_with(".jsonl") || k.ends_with(".bin")).count();
    let differing: Vec<&String> = snapshots[0].keys().filter(|k| snapshots[1].get(*k) != snapshots[0].get(*k)).collect();
    let same_names = snapshots[0].keys().eq(snapshots[1].keys());
    outcome(
        differing.is_empty() && same_names && checked > 0,
        format!("T=2 twice: {} files ({checked} JSONL/params), {} differ", snapshots[0].len(), differing.len()),
    )
}

fn classical_diagnostic() -> Outcome {
    const TOL: f64 = 1e-8;
    let a = [4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0];
    let g = [1.0, -2.0, 0.5];
    // Adjugate over determinant: det = 4(6-1) - 1(2-0) = 18.
    let inv = [5.0, -2.0, 1.0, -2.0, 8.0, -4.0, 1.0, -4.0, 11.0].map(|v| v / 18.0);
    let mut closed = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            closed -= g[i] * inv[3 * i + j] * g[j];
        }
    }
    let train = QuadraticObjective::new(a.to_vec(), vec![0.0; 3]).unwrap();
    let probe = QuadraticObjective::new(vec![0.0; 9], g.map(|v| -v).to_vec()).unwrap();
    let got = classical_influence(&probe, &train, &[0.3, -0.1, 0.7]).unwrap();
    let err = (got.value - closed).abs();

    let mut rng = seed::rng(13);
    let mut positive = 0;
    for _ in 0..100 {
        let b: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut h = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                h[3 * i + j] = (0..3).map(|k| b[3 * k + i] * b[3 * k + j]).sum::<f64>() + if i == j { 0.05 } else { 0.0 };
            }
        }
        let lin: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let theta: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let obj = QuadraticObjective::new(h, lin).unwrap();
        let r = classical_influence(&obj, &obj, &theta).unwrap();
        if r.value > 0.0 || r.damping != 0.0 {
            positive += 1;
        }
    }
    outcome(
        err < TOL && positive == 0,
        format!("closed form {closed:.12}, computed {:.12} (|diff| {err:.1e} < {TOL:e}); {positive}/100 PD cases with positive self-influence", got.value),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("gradient correctness", gradient_correctness),
        ("dpo zero-margin identity", dpo_zero_margin),
        ("tree consistency", tree_consistency),
        ("edit-distance oracle", edit_distance_oracle),
        ("softmax selection calibration", softmax_calibration),
        ("filtering contract", filtering_contract),
        ("influence probe vs retrain oracle", probe_vs_oracle),
        ("selection quality vs random", selection_quality),
        ("budget scaling", budget_scaling),
        ("determinism", determinism),
        ("classical influence diagnostic", classical_diagnostic),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

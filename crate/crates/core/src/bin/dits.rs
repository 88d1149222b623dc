//! `dits` command-line entry point.
//!
//! Stage commands read and write the same files as one pipeline iteration,
//! so running `train --stage sft`, `synth`, `influence`, `select` and
//! `train --stage dpo` into one directory reproduces `iter_{t}/` exactly.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dits::artifacts::{read_params, RunLock};
use dits::config::{ConfigError, PipelineConfig};
use dits::env::{generate_splits, write_jsonl, Setting};
use dits::mcts::PreferencePair;
use dits::pipeline::{self, files, read_artifact, Dataset, PipelineError, RunOptions, Stages};
use dits::policy::ToyPolicy;
use dits::report::{write_reports, ReportError};
use dits::selection::ScoredPair;

#[derive(Parser)]
#[command(name = "dits", version, about = "Search-based synthesis and influence-guided selection of multi-agent preference data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// TOML config; omitted means all defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem instances as JSONL.
    #[arg(long)]
    problems: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args, Clone)]
struct StageArgs {
    #[command(flatten)]
    common: Common,
    /// Iteration whose seeds the stage uses.
    #[arg(long, default_value_t = 1)]
    iteration: usize,
    /// Parameter file of the policy the stage runs with; defaults to the initial parameters.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainStage {
    Sft,
    Dpo,
}

#[derive(Clone, Copy, ValueEnum)]
enum SettingArg {
    InfoExchange,
    Debate,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic problem suite with train/validation/test splits.
    Generate {
        #[arg(long, value_enum, default_value = "info-exchange")]
        setting: SettingArg,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        val: usize,
        #[arg(long, default_value_t = 50)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grow search trees and write trees/, pairs_raw.jsonl and pairs.jsonl.
    Synth(StageArgs),
    /// Probe the influence of each pair and write scored_pairs.jsonl.
    Influence {
        #[command(flatten)]
        stage: StageArgs,
        /// Defaults to `<out>/pairs.jsonl`.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Rank scored pairs and write selected_pairs.jsonl.
    Select {
        #[command(flatten)]
        stage: StageArgs,
        /// Defaults to `<out>/scored_pairs.jsonl`.
        #[arg(long)]
        scored: Option<PathBuf>,
    },
    /// Supervised fine-tuning (`--params` is the previous iteration) or DPO
    /// (`--params` is the fine-tuned model, default `<out>/sft_params.bin`).
    Train {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long = "stage", value_enum)]
        train_stage: TrainStage,
        /// DPO pairs; defaults to `<out>/selected_pairs.jsonl`.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Run the full iterative loop into `<out>/iter_{t}`.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        iterations: Option<usize>,
        /// Restart at this iteration of an existing run.
        #[arg(long)]
        resume: Option<usize>,
    },
    /// One iteration per synthesis budget `k`, written to `<out>/sweep/`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
        budgets: Vec<usize>,
    },
    /// Emit CSV summaries for a run directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Pipeline(e) => e.exit_code() as u8,
            Self::Report(ReportError::Malformed { .. }) => 1,
            Self::Report(_) => 3,
        }
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn stage_policy(cfg: &PipelineConfig, params: Option<&Path>) -> Result<Box<dyn dits::policy::Policy>, PipelineError> {
    let theta = params.map(read_params).transpose()?;
    pipeline::build_policy(cfg, theta)
}

fn toy(cfg: &PipelineConfig, params: Option<&Path>) -> Result<ToyPolicy, PipelineError> {
    let policy = stage_policy(cfg, params)?;
    match policy.as_toy() {
        Some(t) => Ok(t.clone()),
        None => Err(dits::policy::PolicyError::NotDifferentiable(policy.kind()).into()),
    }
}

struct StageContext {
    cfg: PipelineConfig,
    data: Dataset,
    out: PathBuf,
    _lock: RunLock,
}

fn open_stage(args: &StageArgs) -> Result<StageContext, PipelineError> {
    let cfg = load_config(&args.common)?;
    let data = Dataset::load(&args.common.problems)?;
    let lock = RunLock::acquire(&args.common.out)?;
    Ok(StageContext { cfg, data, out: args.common.out.clone(), _lock: lock })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { setting, train, val, test, seed, out } => {
            let setting = match setting {
                SettingArg::InfoExchange => Setting::InfoExchange,
                SettingArg::Debate => Setting::Debate,
            };
            let problems = generate_splits(setting, train, val, test, seed);
            write_jsonl(&out, &problems)
                .map_err(|source| PipelineError::Io { path: out.display().to_string(), source })?;
        }
        Command::Synth(args) => {
            let ctx = open_stage(&args)?;
            let policy = stage_policy(&ctx.cfg, args.params.as_deref())?;
            let stages = Stages::new(&ctx.cfg, &ctx.data, args.iteration, Some(ctx.out.clone()))?;
            let out = stages.synth(policy.as_ref())?;
            log::info!("{} trees, {} pairs, {} after filtering", out.trees.len(), out.raw.len(), out.filtered.len());
        }
        Command::Influence { stage, pairs } => {
            let ctx = open_stage(&stage)?;
            let policy = stage_policy(&ctx.cfg, stage.params.as_deref())?;
            let pairs_path = pairs.unwrap_or_else(|| ctx.out.join(files::PAIRS));
            let pairs: Vec<PreferencePair> = read_artifact(&pairs_path)?;
            let stages = Stages::new(&ctx.cfg, &ctx.data, stage.iteration, Some(ctx.out.clone()))?;
            stages.influence(policy.as_ref(), &pairs)?;
        }
        Command::Select { stage, scored } => {
            let ctx = open_stage(&stage)?;
            let scored_path = scored.unwrap_or_else(|| ctx.out.join(files::SCORED));
            let scored: Vec<ScoredPair> = read_artifact(&scored_path)?;
            let stages = Stages::new(&ctx.cfg, &ctx.data, stage.iteration, Some(ctx.out.clone()))?;
            let (_, chosen) = stages.select(scored)?;
            log::info!("selected {} pairs", chosen.len());
        }
        Command::Train { stage, train_stage, pairs } => {
            let ctx = open_stage(&stage)?;
            let stages = Stages::new(&ctx.cfg, &ctx.data, stage.iteration, Some(ctx.out.clone()))?;
            match train_stage {
                TrainStage::Sft => {
                    let previous = stage_policy(&ctx.cfg, stage.params.as_deref())?;
                    let init = toy(&ctx.cfg, None)?;
                    stages.sft(previous.as_ref(), &init)?;
                }
                TrainStage::Dpo => {
                    let params = stage.params.clone().unwrap_or_else(|| ctx.out.join(files::SFT_PARAMS));
                    let sft = toy(&ctx.cfg, Some(&params))?;
                    let pairs_path = pairs.unwrap_or_else(|| ctx.out.join(files::SELECTED));
                    let pairs: Vec<PreferencePair> = read_artifact(&pairs_path)?;
                    stages.dpo(&sft, &pairs)?;
                }
            }
        }
        Command::Pipeline { common, iterations, resume } => {
            let mut cfg = load_config(&common)?;
            if let Some(t) = iterations {
                cfg.iterations = t;
            }
            let data = Dataset::load(&common.problems)?;
            let outcome = pipeline::run_pipeline(&cfg, &data, &common.out, &RunOptions { resume })?;
            for r in &outcome.reports {
                println!(
                    "iteration {}: validation {:.4} -> {:.4}, {} of {} pairs selected",
                    r.iteration, r.val_previous, r.val_final, r.selected, r.pairs_filtered
                );
            }
        }
        Command::Sweep { common, budgets } => {
            let cfg = load_config(&common)?;
            let data = Dataset::load(&common.problems)?;
            for r in pipeline::run_sweep(&cfg, &data, &common.out, &budgets)? {
                println!("k={}: {} nodes, {} tokens, validation {:.4}", r.k, r.nodes, r.tokens, r.val_final);
            }
        }
        Command::Report { out } => {
            let written = write_reports(&out)?;
            for f in written.files {
                println!("{}", out.join(f).display());
            }
        }
    }
    Ok(())
}

fn init_threads() -> Result<(), ConfigError> {
    let Ok(v) = std::env::var("DITS_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().map_err(|_| ConfigError::Invalid(format!("DITS_THREADS={v} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ConfigError::Invalid(format!("DITS_THREADS: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

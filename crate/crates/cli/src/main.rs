//! `mixbit`: plan mixed-precision quantization for toy networks.
//!
//! Pipeline stages write plain files into `--out-dir` and can be rerun or
//! recombined independently:
//!
//! ```text
//! mixbit profile        model + data        -> profile.json
//! mixbit plan           profile + costs     -> plan.json
//! mixbit pareto         profile + costs     -> frontier.csv, pareto.json
//! mixbit search         space (+ model)     -> history.jsonl, best.json
//! mixbit quantize-eval  model + plan        -> eval.json
//! mixbit report         run directory       -> report.txt, plot CSVs
//! ```
//!
//! Every command is deterministic under `--seed`: reruns produce
//! byte-identical artifacts. Wall-clock timestamps live only in the
//! `*.meta.json` sidecars.

mod errors;
mod evaluator;
mod search_cmd;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mixbit_core::costmodel::{BudgetLevel, CostKind};
use mixbit_core::netlab::TrainSchedule;
use mixbit_core::quantizer::{ClipMethod, Granularity, Scheme};
use mixbit_core::sensitivity::ProbeDistribution;

use errors::CliError;
use search_cmd::SearchIo;
use stages::resolve;

#[derive(Parser)]
#[command(name = "mixbit", version, about = "Mixed-precision quantization planner")]
struct Cli {
    /// Master seed; all stage randomness derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker-thread cap for parallel sections (profiling fan-out).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Directory for output artifacts.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate per-layer Hessian-trace sensitivity and write profile.json.
    Profile(ProfileArgs),
    /// Solve the bit-allocation ILP under budgets and write plan.json.
    Plan(PlanArgs),
    /// Sweep budgets into a perturbation/cost frontier CSV plus a report.
    Pareto(ParetoArgs),
    /// Surrogate-guided hyperparameter search; writes history.jsonl.
    Search(SearchArgs),
    /// Apply a plan (or uniform width) to a model and measure accuracy.
    QuantizeEval(QuantizeEvalArgs),
    /// Summarize a run directory into report.txt and plot CSVs.
    Report(ReportArgs),
}

#[derive(Args)]
struct ModelDataArgs {
    /// Runnable network definition (JSON).
    #[arg(long)]
    net: PathBuf,
    /// Parameter checkpoint; fresh seeded initialization when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Dataset file; seeded synthetic blobs when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic data: samples per class.
    #[arg(long, default_value_t = 48)]
    per_class: usize,
    /// Synthetic data: noise standard deviation.
    #[arg(long, default_value_t = 0.5)]
    spread: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Train the model before the stage runs.
    #[arg(long)]
    train: bool,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Early-stopping patience in epochs.
    #[arg(long)]
    patience: Option<usize>,
}

impl TrainArgs {
    fn schedule(&self) -> Option<TrainSchedule> {
        self.train.then(|| TrainSchedule {
            learning_rate: self.lr,
            weight_decay: 1e-4,
            batch_size: self.batch,
            epochs: self.epochs,
            early_stop_patience: self.patience,
        })
    }
}

#[derive(Args)]
struct QuantFlags {
    #[arg(long, default_value = "per_channel", value_parser = parse_granularity)]
    granularity: Granularity,
    #[arg(long, default_value = "symmetric", value_parser = parse_scheme)]
    scheme: Scheme,
    /// minmax | percentile<p> | mse
    #[arg(long, default_value = "minmax", value_parser = parse_clip_flag)]
    clip: ClipMethod,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    model: ModelDataArgs,
    #[command(flatten)]
    training: TrainArgs,
    /// Comma-separated bit options, e.g. 2,4,8.
    #[arg(long, default_value = "2,4,8")]
    bits: String,
    /// Hutchinson probes per layer.
    #[arg(long, default_value_t = 512)]
    samples: usize,
    #[arg(long, default_value = "rademacher", value_parser = parse_distribution)]
    distribution: ProbeDistribution,
    #[command(flatten)]
    quant: QuantFlags,
    #[arg(short, long, default_value = "profile.json")]
    output: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    profile: PathBuf,
    /// Architecture descriptor (JSON) providing parameter and MAC counts.
    #[arg(long)]
    descriptor: PathBuf,
    /// Measured latency lookup CSV (layer,bits,latency).
    #[arg(long)]
    latency: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    activation_bits: u8,
    #[arg(long)]
    size_limit: Option<f64>,
    #[arg(long)]
    bops_limit: Option<f64>,
    #[arg(long)]
    latency_limit: Option<f64>,
    /// Budget preset as a fraction of the uniform-max-bit cost.
    #[arg(long, value_parser = parse_level)]
    level: Option<BudgetLevel>,
    #[arg(long, default_value = "size", value_parser = parse_kind)]
    level_kind: CostKind,
    /// Override the preset fraction.
    #[arg(long)]
    level_fraction: Option<f64>,
    /// Exhaustive enumeration instead of branch-and-bound (oracle path).
    #[arg(long)]
    brute_force: bool,
    #[arg(short, long, default_value = "plan.json")]
    output: PathBuf,
}

#[derive(Args)]
struct ParetoArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    descriptor: PathBuf,
    #[arg(long)]
    latency: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    activation_bits: u8,
    /// Comma-separated objectives: size,bops,latency.
    #[arg(long, default_value = "size")]
    objectives: String,
    /// Comma-separated sweep fractions in (0, 1].
    #[arg(long, default_value = "0.5,0.7,0.9,1.0")]
    fractions: String,
    /// Local-search depth in single-layer bit moves.
    #[arg(long, default_value_t = 2)]
    local_moves: usize,
    #[arg(long, default_value = "frontier.csv")]
    csv: PathBuf,
    #[arg(long, default_value = "pareto.json")]
    report: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    /// Hyperparameter space TOML; defaults to the built-in benchmark space
    /// in --synthetic mode.
    #[arg(long)]
    space: Option<PathBuf>,
    /// Use the deterministic synthetic benchmark instead of training.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// N: initial random short-trained sample.
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// K: full evaluations per round.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    rounds: usize,
    #[arg(long, default_value_t = 10)]
    short_epochs: usize,
    #[arg(long, default_value_t = 100)]
    full_epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Resume from an existing history ledger; logged configurations are
    /// not re-evaluated.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value = "history.jsonl")]
    history: PathBuf,
    #[arg(long, default_value = "best.json")]
    best: PathBuf,
}

#[derive(Args)]
struct QuantizeEvalArgs {
    #[command(flatten)]
    model: ModelDataArgs,
    #[command(flatten)]
    training: TrainArgs,
    /// Bit plan produced by `plan`.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Uniform bit-width alternative to --plan.
    #[arg(long)]
    bits: Option<u8>,
    #[command(flatten)]
    quant: QuantFlags,
    /// Fold batchnorm into preceding convolutions first.
    #[arg(long)]
    fold_bn: bool,
    /// Fine-tune from the quantized initialization before scoring.
    #[arg(long, default_value_t = 0)]
    finetune_epochs: usize,
    #[arg(short, long, default_value = "eval.json")]
    output: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory; defaults to --out-dir.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

fn parse_granularity(s: &str) -> Result<Granularity, String> {
    match s {
        "per_channel" => Ok(Granularity::PerChannel),
        "per_tensor" => Ok(Granularity::PerTensor),
        _ => Err(format!("unknown granularity `{s}`")),
    }
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    match s {
        "symmetric" => Ok(Scheme::Symmetric),
        "asymmetric" => Ok(Scheme::Asymmetric),
        _ => Err(format!("unknown scheme `{s}`")),
    }
}

fn parse_clip_flag(s: &str) -> Result<ClipMethod, String> {
    s.parse().map_err(|e: mixbit_core::Error| e.to_string())
}

fn parse_distribution(s: &str) -> Result<ProbeDistribution, String> {
    match s {
        "rademacher" => Ok(ProbeDistribution::Rademacher),
        "gaussian" => Ok(ProbeDistribution::Gaussian),
        _ => Err(format!("unknown distribution `{s}`")),
    }
}

fn parse_level(s: &str) -> Result<BudgetLevel, String> {
    match s {
        "high" => Ok(BudgetLevel::High),
        "medium" => Ok(BudgetLevel::Medium),
        "low" => Ok(BudgetLevel::Low),
        _ => Err(format!("unknown level `{s}`")),
    }
}

fn parse_kind(s: &str) -> Result<CostKind, String> {
    match s {
        "size" => Ok(CostKind::Size),
        "bops" => Ok(CostKind::Bops),
        "latency" => Ok(CostKind::Latency),
        _ => Err(format!("unknown cost kind `{s}`")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => ExitCode::from(e.emit() as u8),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Err(e) = std::fs::create_dir_all(&cli.out_dir) {
        return Err(CliError::input(
            "E_OUT_DIR",
            format!("cannot create {}: {e}", cli.out_dir.display()),
        ));
    }
    match &cli.command {
        Command::Profile(args) => {
            let schedule = args.training.schedule();
            let inputs = stages::load_model_inputs(
                &args.model.net,
                args.model.params.as_deref(),
                args.model.data.as_deref(),
                args.model.per_class,
                args.model.spread,
                cli.seed,
                schedule.as_ref(),
            )?;
            let bits = stages::parse_bits(&args.bits)?;
            stages::cmd_profile(
                &inputs,
                &bits,
                args.samples,
                args.distribution,
                args.quant.granularity,
                args.quant.scheme,
                args.quant.clip,
                cli.seed,
                cli.threads,
                &resolve(&cli.out_dir, &args.output),
            )
        }
        Command::Plan(args) => {
            let (profile, table) = stages::load_cost_inputs(
                &args.profile,
                &args.descriptor,
                args.latency.as_deref(),
                args.activation_bits,
            )?;
            let budget = stages::BudgetArgs {
                size_limit: args.size_limit,
                bops_limit: args.bops_limit,
                latency_limit: args.latency_limit,
                level: args.level,
                level_kind: args.level_kind,
                level_fraction: args.level_fraction,
            }
            .resolve(&table)?;
            stages::cmd_plan(
                profile,
                table,
                budget,
                args.brute_force,
                &resolve(&cli.out_dir, &args.output),
            )
        }
        Command::Pareto(args) => {
            let (profile, table) = stages::load_cost_inputs(
                &args.profile,
                &args.descriptor,
                args.latency.as_deref(),
                args.activation_bits,
            )?;
            let objectives = stages::parse_objectives(&args.objectives)?;
            let fractions = stages::parse_fractions(&args.fractions)?;
            stages::cmd_pareto(
                profile,
                table,
                &objectives,
                &fractions,
                args.local_moves,
                &resolve(&cli.out_dir, &args.csv),
                &resolve(&cli.out_dir, &args.report),
            )
        }
        Command::Search(args) => {
            let io = SearchIo {
                space_path: args.space.as_deref(),
                resume_path: args.resume.as_deref(),
                history_path: &resolve(&cli.out_dir, &args.history),
                best_path: &resolve(&cli.out_dir, &args.best),
                space_out: &resolve(&cli.out_dir, std::path::Path::new("space.toml")),
            };
            search_cmd::cmd_search(
                &io,
                args.synthetic,
                args.net.as_deref(),
                args.params.as_deref(),
                args.data.as_deref(),
                args.n,
                args.k,
                args.rounds,
                args.short_epochs,
                args.full_epochs,
                args.lr,
                args.batch,
                cli.seed,
            )
        }
        Command::QuantizeEval(args) => {
            let schedule = args.training.schedule();
            let inputs = stages::load_model_inputs(
                &args.model.net,
                args.model.params.as_deref(),
                args.model.data.as_deref(),
                args.model.per_class,
                args.model.spread,
                cli.seed,
                schedule.as_ref(),
            )?;
            stages::cmd_quantize_eval(
                &inputs,
                args.plan.as_deref(),
                args.bits,
                args.quant.granularity,
                args.quant.scheme,
                args.quant.clip,
                args.fold_bn,
                args.finetune_epochs,
                args.training.lr,
                args.training.batch,
                cli.seed,
                &resolve(&cli.out_dir, &args.output),
            )
        }
        Command::Report(args) => {
            let dir = args.run_dir.clone().unwrap_or_else(|| cli.out_dir.clone());
            stages::cmd_report(&dir)
        }
    }
}

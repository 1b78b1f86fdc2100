mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use radiomap::conditions::SelectionMethod;
use radiomap::diffusion::SigmaMode;
use radiomap::encoders::ConditionKind;
use radiomap::scenario::Regime;

#[derive(Debug, Parser)]
#[command(
    name = "radiomap",
    version,
    about = "Conditional diffusion models for radio maps"
)]
#[command(args_override_self = true)]
struct Cli {
    /// JSON file whose keys supply flags; flags given here take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Synthesize scenarios and their radio maps into an RMG1 dataset.
    GenData(GenDataArgs),
    /// Print the fragments chosen for one dataset record as CSV.
    SelectFragments(SelectArgs),
    /// Train a conditional model on the first 80% of a dataset.
    Train(TrainArgs),
    /// Generate one map for a dataset record.
    Sample(SampleArgs),
    /// Sample the held-out records and score them.
    Eval(EvalArgs),
    /// Write a dataset record as a PPM heatmap.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// indoor or outdoor
    #[arg(long)]
    regime: Regime,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..u32::MAX as u64))]
    count: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// How conditions are drawn from a record.
#[derive(Debug, Args, Clone)]
struct ConditionArgs {
    /// env (obstacle density) or random
    #[arg(long = "select", default_value = "env")]
    method: SelectionMethod,
    /// Share of cells exposed as fragments.
    #[arg(long, default_value_t = 10.0)]
    percent: f64,
    #[arg(long, default_value_t = 16)]
    n_subareas: usize,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    data: PathBuf,
    /// Record index in the dataset.
    #[arg(long)]
    record: usize,
    #[command(flatten)]
    cond: ConditionArgs,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Arch {
    /// 32 base channels, two blocks per level, 400 steps.
    Full,
    /// 8 base channels, one block per level, 100 steps.
    Desk,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// fragments or tx
    #[arg(long, default_value = "fragments")]
    cond: ConditionKind,
    #[command(flatten)]
    condition: ConditionArgs,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    #[arg(long)]
    lr: f64,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: u64,
    /// Anneal the learning rate linearly to zero.
    #[arg(long)]
    lr_decay: bool,
    #[arg(long, value_enum, default_value_t = Arch::Full)]
    arch: Arch,
    /// Diffusion steps (overrides the architecture preset).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta_t: Option<f64>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    blocks_per_level: Option<usize>,
    /// Most fragments the encoder accepts.
    #[arg(long)]
    capacity: Option<usize>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    record: usize,
    #[command(flatten)]
    cond: ConditionArgs,
    /// posterior or beta
    #[arg(long, default_value = "posterior")]
    sigma: SigmaMode,
    #[arg(long)]
    seed: u64,
    /// PPM heatmap of the generated map.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of the generated values (row, col, dbm).
    #[arg(long)]
    values: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    cond: ConditionArgs,
    /// Error tolerance rates, comma separated.
    #[arg(long, default_value = "0.10", value_parser = parse_etrs)]
    etr: EtrList,
    #[arg(long, default_value = "posterior")]
    sigma: SigmaMode,
    /// Score only the first N held-out records.
    #[arg(long)]
    limit: Option<usize>,
    /// Score every record rather than the held-out 20%.
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = 10.0)]
    bin_width: f64,
    #[arg(long)]
    seed: u64,
    /// key = value report.
    #[arg(long)]
    report: PathBuf,
    /// One CSV row per tolerance.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Directory for ground-truth, generated and error heatmaps.
    #[arg(long)]
    render: Option<PathBuf>,
}

/// One flag value so a later `--etr` replaces the whole list.
#[derive(Debug, Clone)]
struct EtrList(Vec<f64>);

fn parse_etrs(s: &str) -> Result<EtrList, String> {
    let etrs = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if etrs.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err("tolerances must be positive".into());
    }
    Ok(EtrList(etrs))
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    record: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cmd = Cli::command();
    let args = match config::expand_args(std::env::args_os().collect(), &cmd) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match cmd
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Cmd::GenData(a) => commands::gen_data(a),
        Cmd::SelectFragments(a) => commands::select_fragments(a),
        Cmd::Train(a) => commands::train(a),
        Cmd::Sample(a) => commands::sample(a),
        Cmd::Eval(a) => commands::eval(a),
        Cmd::Render(a) => commands::render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<commands::UsageError>() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

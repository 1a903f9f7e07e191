mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hetsplit::pipeline::Budget;
use hetsplit::simulator::StrategyKind;

/// Plan, simulate and run CPU/GPU split offload inference.
#[derive(Debug, Parser)]
#[command(name = "hetsplit", version)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample lane costs for every linear shape and fit cost curves.
    Bench(BenchArgs),
    /// Choose split ratios and GPU residency under a memory budget.
    Plan(PlanArgs),
    /// Simulate a plan under every strategy.
    Simulate(SimulateArgs),
    /// Execute a plan on the toy engine.
    Run(RunArgs),
    /// Simulated latency over a grid of budgets.
    Sweep(SweepArgs),
    /// Consolidate artifacts into a markdown report.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Model spec JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Device profile JSON.
    #[arg(long)]
    pub profile: PathBuf,
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 32)]
    pub prompt_len: usize,
    #[arg(long, default_value_t = 16)]
    pub gen_len: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Half-width of the α refinement window.
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    /// α grid step.
    #[arg(long, default_value_t = 0.02)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2)]
    pub degree: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    /// Balance CPU time against transfer plus GPU compute.
    #[arg(long)]
    pub include_gpu: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Analytic,
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Naive,
    Pinned,
    Hybrid,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Naive => StrategyKind::Naive,
            StrategyArg::Pinned => StrategyKind::PinnedBlocking,
            StrategyArg::Hybrid => StrategyKind::Hybrid,
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value_t = Backend::Analytic)]
    pub backend: Backend,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Bytes, or a percentage of the model's weight bytes such as `40%`.
    #[arg(long)]
    pub budget: Budget,
    /// Cost curves; defaults to `<out>/curves.json`.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Plan; defaults to `<out>/plan.json`.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Strategy whose timeline is written.
    #[arg(long, value_enum, default_value_t = StrategyArg::Hybrid)]
    pub strategy: StrategyArg,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = StrategyArg::Hybrid)]
    pub strategy: StrategyArg,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Comma-separated budgets.
    #[arg(long, value_delimiter = ',', default_value = "10%,20%,30%,40%,50%,60%,70%,80%,90%")]
    pub budgets: Vec<Budget>,
    #[arg(long)]
    pub curves: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = StrategyArg::Hybrid)]
    pub strategy: StrategyArg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Artifact directory to read and write.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();

    let result = match cli.command {
        Command::Bench(a) => commands::bench(&a),
        Command::Plan(a) => commands::plan(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Run(a) => commands::run(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Report(a) => report::report(&a.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

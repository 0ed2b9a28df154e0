use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qdob_cli::{run, Action, Options};

#[derive(Parser)]
#[command(name = "qdob", version, about = "Quasiperiodic disturbance observer analysis and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Frequency responses (CSV + JSON) of the configured observer.
    Bode(Common),
    /// Simulated sine sweep against the analytic sensitivity.
    Sweep(Common),
    /// Closed-loop time simulation with trace and summary.
    Simulate(Common),
    /// Phase-corridor and small-gain report.
    Stability(Common),
    /// Lints the tuning; exits 1 on any error finding.
    TuneCheck(Common),
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// RNG seed; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Grid points per decade; overrides `analysis.points_per_decade`.
    #[arg(long)]
    grid_points: Option<usize>,
    /// Suppress progress output and warnings.
    #[arg(long, short)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (action, common) = match cli.command {
        Cmd::Bode(c) => (Action::Bode, c),
        Cmd::Sweep(c) => (Action::Sweep, c),
        Cmd::Simulate(c) => (Action::Simulate, c),
        Cmd::Stability(c) => (Action::Stability, c),
        Cmd::TuneCheck(c) => (Action::TuneCheck, c),
    };
    let level = if common.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let opts = Options {
        out: common.out,
        seed: common.seed,
        grid_points: common.grid_points,
        quiet: common.quiet,
    };
    match run(action, &common.config, &opts) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

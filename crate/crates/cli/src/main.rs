//! `ppn`: train, evaluate and compare policy prediction networks.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ppn", version, about = "Policy prediction network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one agent and write a run directory.
    Train {
        #[command(flatten)]
        run: RunFlags,
        /// Master seed (default: config file value, else 0).
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory (config.snapshot, metrics.csv, checkpoints/).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint under an execution mode.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "model_free")]
        mode: String,
        /// Planning horizon for mpc / trajectory / repeat.
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[command(flatten)]
        eval: EvalFlags,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every depth in the set over several seeds.
    SweepDepth {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 5, 10])]
        depths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
        #[command(flatten)]
        eval: EvalFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate mpc, trajectory and repeat on one checkpoint.
    AblateTransition {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
        #[command(flatten)]
        eval: EvalFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train grounded, ungrounded, no-vr-clipping and no-clipping variants.
    AblateClipping {
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
        seeds: Vec<u64>,
        #[command(flatten)]
        eval: EvalFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot metrics of one or more run directories (aggregated as seeds).
    Plot {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_values_t = [String::from("mean_return")])]
        metric: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "runs")]
        label: String,
    },
}

/// Run configuration. Precedence: flag > `--set` > `--config` file > default.
#[derive(Args, Debug, Clone, Default)]
pub struct RunFlags {
    /// Flat `key = value` config file (same format as config.snapshot).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    env: Option<String>,
    /// Sets d_pi, d_v and d_r together.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    d_pi: Option<usize>,
    #[arg(long)]
    d_v: Option<usize>,
    #[arg(long)]
    d_r: Option<usize>,
    #[arg(long, value_parser = ["grounded", "ungrounded"])]
    clip_scheme: Option<String>,
    /// Policy-only reduction: alpha_r = 0, d_pi = 1, d_v = 0, d_r = 0.
    #[arg(long, conflicts_with_all = ["d_pi", "d_v", "d_r"])]
    ppo2: bool,
    /// Total environment steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Record elapsed time in metrics.csv (breaks byte-identical reruns).
    #[arg(long)]
    wall_clock: bool,
}

#[derive(Args, Debug, Clone)]
pub struct EvalFlags {
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    /// Use policy means instead of sampling with sigma_end.
    #[arg(long)]
    deterministic_eval: bool,
    /// Exploration scale for stochastic evaluation (defaults to sigma_end
    /// of the run's config, or 0.1).
    #[arg(long)]
    sigma: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(commands::Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

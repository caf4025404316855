use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use collapse_lab_cli::{cmd_report, cmd_theory, cmd_train, cmd_verify, Options};

/// Feature-collapse laboratory: train the two networks, evaluate the
/// closed-form theory, and run the combinatorial and gradient checks.
#[derive(Parser)]
#[command(name = "collapse-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a training set, run SGD, write weights, history and report.
    Train(Common),
    /// Closed-form constants and the type-III solve.
    Theory(Common),
    /// Exact checks on a tiny instance.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Also check the exact-risk gradient at these weights.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Diagnostics for a weights file (default: <out>/weights.bin).
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment TOML.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

impl Common {
    fn options(self, weights: Option<PathBuf>) -> Options {
        Options {
            config: self.config,
            out: self.out,
            seed: self.seed,
            threads: self.threads,
            weights,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COLLAPSE_LAB_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(c) => cmd_train(&c.options(None)),
        Command::Theory(c) => cmd_theory(&c.options(None)),
        Command::Verify { common, weights } => cmd_verify(&common.options(weights)),
        Command::Report { common, weights } => cmd_report(&common.options(weights)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("collapse-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

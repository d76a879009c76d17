use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use pareto_rerank::config::Config;
use pareto_rerank::pipeline::{self, BaselineMethod};
use pareto_rerank::Result;

#[derive(Parser)]
#[command(
    name = "pareto-rerank",
    version,
    about = "Multi-objective list re-ranking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Topk,
    Mmr,
}

#[derive(Subcommand)]
enum Command {
    /// Build the split, candidate sets and item features and write them with a manifest.
    Prepare(Common),
    /// Evolve every test user's population and select final lists.
    Run(Common),
    /// Score-only or MMR lists.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "mmr")]
        method: Method,
        /// Overrides the configured MMR trade-off.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Paired run with and without knowledge transfer.
    Ablate(Common),
    /// Re-evaluate the default rows of a final-list file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lists: PathBuf,
    },
}

fn load(common: &Common) -> Result<Config> {
    let mut config = Config::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if common.threads.is_some() {
        config.threads = common.threads;
    }
    config.validate()?;
    Ok(config)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Prepare(c) => {
            let config = load(&c)?;
            pipeline::with_threads(config.threads, || pipeline::cmd_prepare(&config, &c.out))??;
        }
        Command::Run(c) => {
            let config = load(&c)?;
            pipeline::with_threads(config.threads, || pipeline::cmd_run(&config, &c.out))??;
        }
        Command::Baseline {
            common,
            method,
            lambda,
        } => {
            let mut config = load(&common)?;
            if let Some(l) = lambda {
                config.baseline.mmr_lambda = l;
            }
            let method = match method {
                Method::Topk => BaselineMethod::TopK,
                Method::Mmr => BaselineMethod::Mmr,
            };
            pipeline::with_threads(config.threads, || {
                pipeline::cmd_baseline(&config, method, &common.out)
            })??;
        }
        Command::Ablate(c) => {
            let config = load(&c)?;
            let s =
                pipeline::with_threads(config.threads, || pipeline::cmd_ablate(&config, &c.out))??;
            println!(
                "mean hypervolume {:.6} with transfer, {:.6} without; transfer wins {}/{} users",
                s.mean_hv_a, s.mean_hv_b, s.wins, s.users
            );
        }
        Command::Eval { common, lists } => {
            let config = load(&common)?;
            pipeline::with_threads(config.threads, || {
                pipeline::cmd_eval(&config, &lists, &common.out)
            })??;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

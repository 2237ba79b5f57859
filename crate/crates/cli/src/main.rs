//! `regradius` command-line runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use regradius::experiment::{self, parse_config, EXIT_CONFIG, EXIT_IO};
use regradius::Error;

#[derive(Parser)]
#[command(name = "regradius", version, about = "Metric regularity moduli and radius experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task of a config and write report.json and traces.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's seed (and the schedule seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &PathBuf) -> Result<experiment::ExperimentConfig, i32> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: reading {}: {e}", path.display());
        EXIT_IO
    })?;
    parse_config(&text).map_err(|e| {
        match e {
            Error::Config(errs) => {
                for m in errs {
                    eprintln!("config error: {m}");
                }
            }
            other => eprintln!("config error: {other}"),
        }
        EXIT_CONFIG
    })
}

fn run(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>, jobs: Option<usize>) -> i32 {
    let mut cfg = match load(&config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(s) = seed {
        cfg.reseed(s);
    }
    let go = || experiment::run_experiment(&cfg, out.as_deref());
    #[cfg(feature = "parallel")]
    if let Some(n) = jobs {
        return match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(go),
            Err(e) => {
                eprintln!("error: thread pool: {e}");
                EXIT_CONFIG
            }
        };
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
    go()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("REGRADIUS_LOG", "warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            jobs,
        } => run(config, out, seed, jobs),
        Command::Validate { config } => match load(&config) {
            Ok(c) => {
                println!("ok: {} task(s)", c.tasks.len());
                0
            }
            Err(code) => code,
        },
    };
    log::info!("exit code {code}");
    ExitCode::from(code as u8)
}

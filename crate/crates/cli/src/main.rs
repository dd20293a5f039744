use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use yamabe_cli::run::{load_config, run_solve, run_verify, Overrides, RunError};

#[derive(Parser)]
#[command(name = "yamabe", version, about = "Conformal boundary-value solver and verification harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `outputs.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed, overriding the config's.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem and write fields and reports.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Run a property suite (hypotheses, conformal, fermi, uniqueness, refinement or all).
    Verify {
        #[command(flatten)]
        common: Common,
        /// Suite name, or `all`.
        #[arg(long)]
        suite: String,
        /// Grid levels for the refinement suite.
        #[arg(long, default_value_t = 2)]
        levels: usize,
    },
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(code as u8)
}

fn fail(e: RunError) -> ExitCode {
    eprintln!("error: {e}");
    exit(e.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Solve { common } | Command::Verify { common, .. } => common,
    };
    let overrides = Overrides { out: common.out.clone(), seed: common.seed };
    let (cfg, out) = match load_config(&common.config, &overrides) {
        Ok(x) => x,
        Err(e) => return fail(e),
    };
    match cli.command {
        Command::Solve { .. } => match run_solve(&cfg, &out) {
            Ok(outcome) => {
                let s = &outcome.summary;
                match (&s.error, s.residual_norm) {
                    (Some(e), _) if !s.converged => eprintln!("solver failed: {e}"),
                    (_, Some(r)) => println!("{}: residual {r:.3e}, within window {:?}", s.status, s.within_window),
                    _ => {}
                }
                exit(s.exit_code)
            }
            Err(e) => fail(e),
        },
        Command::Verify { suite, levels, .. } => match run_verify(&cfg, &suite, levels, &out) {
            Ok(outcome) => {
                println!("{}", serde_json::to_string_pretty(&outcome).expect("report serializes"));
                exit(outcome.exit_code)
            }
            Err(e) => fail(e),
        },
    }
}

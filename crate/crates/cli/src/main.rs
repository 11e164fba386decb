use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pem_cli::{inspect, resume, run, CliError, Overrides};

#[derive(Parser)]
#[command(name = "pem", version, about = "Geometry-aware SGD experiments on kernel product manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config and write trace.csv, summary.json and a checkpoint.
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Continue a checkpoint for the configured number of iterations.
    Resume {
        checkpoint: PathBuf,
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Print kinds, residuals and norms of every product in a checkpoint.
    Inspect { checkpoint: PathBuf },
}

#[derive(Args)]
struct Flags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Sum batch reductions in index order for bitwise reproducibility.
    #[arg(long)]
    strict: bool,
}

impl From<Flags> for Overrides {
    fn from(f: Flags) -> Self {
        Overrides {
            seed: f.seed,
            iterations: f.iterations,
            out_dir: f.out_dir,
            strict: f.strict,
        }
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Config(e.to_string().trim().to_string())),
    };
    let result = match cli.command {
        Command::Run { config, flags } => run(&config, &flags.into()),
        Command::Resume {
            checkpoint,
            config,
            flags,
        } => resume(&checkpoint, &config, &flags.into()),
        Command::Inspect { checkpoint } => {
            return match inspect(&checkpoint) {
                Ok(report) => {
                    print!("{report}");
                    ExitCode::SUCCESS
                }
                Err((report, e)) => {
                    print!("{report}");
                    fail(&e)
                }
            };
        }
    };
    match result {
        Ok(summary) => {
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

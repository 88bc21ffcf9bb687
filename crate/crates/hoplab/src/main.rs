use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hoplab::cli::{self, Command, Invocation};

#[derive(Parser)]
#[command(name = "hoplab", version, about = "Sequential fine-tuning lab for multilingual text classifiers")]
struct Args {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the config's run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,

    /// Continue an interrupted run from its last completed hop.
    #[arg(long, global = true)]
    resume: bool,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic corpus and write a readable dump.
    GenCorpus,
    /// Build a hop sequence and save it as text.
    BuildSequence,
    /// Execute a sequential fine-tuning run.
    Run,
    /// Summarize finished runs into a table and per-run SVG plots.
    Report {
        /// Run directories to include.
        #[arg(value_name = "RUN_DIR", required = true)]
        run_dirs: Vec<PathBuf>,
    },
    /// Execute an experiment suite (the built-in one if no file is given).
    Suite {
        /// Suite definition file.
        #[arg(value_name = "FILE")]
        file: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Cmd::GenCorpus => Command::GenCorpus,
        Cmd::BuildSequence => Command::BuildSequence,
        Cmd::Run => Command::Run,
        Cmd::Report { run_dirs } => Command::Report(run_dirs),
        Cmd::Suite { file } => Command::Suite(file),
    };
    let inv = Invocation {
        command,
        config_path: args.config,
        seed: args.seed,
        out: args.out,
        force: args.force,
        resume: args.resume,
    };
    match cli::execute(&inv) {
        Ok(text) => {
            if text.ends_with('\n') {
                print!("{text}");
            } else {
                println!("{text}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

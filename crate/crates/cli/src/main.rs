//! `gevo`: scaffold, run, resume and report on LLM-guided evolution runs.

mod error;
mod init;
mod inspect;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "gevo", version, about = "LLM-guided multi-objective code evolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scaffold a run directory: config, prompts, seed copy and block audit.
    Init(init::InitArgs),
    /// Start a run from a config file.
    Run(run::RunArgs),
    /// Continue a run from a checkpoint.
    Resume(run::ResumeArgs),
    /// Write Pareto and trajectory tables plus a scatter plot.
    Report(report::ReportArgs),
    /// Show a genome's source and lineage.
    Inspect(inspect::InspectArgs),
    /// Score a rendered toy pipeline (used as the toy evaluation command).
    ToyEval { workdir: PathBuf },
}

fn dispatch(cmd: &Command) -> Result<String, CliError> {
    match cmd {
        Command::Init(a) => init::cmd_init(a),
        Command::Run(a) => run::cmd_run(a),
        Command::Resume(a) => run::cmd_resume(a),
        Command::Report(a) => report::cmd_report(a),
        Command::Inspect(a) => inspect::cmd_inspect(a),
        Command::ToyEval { .. } => unreachable!("handled before dispatch"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::ToyEval { workdir } = &cli.command {
        return ExitCode::from(gevo_core::toy_target::main_with_workdir(workdir) as u8);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(&cli.command) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

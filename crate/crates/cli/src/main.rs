use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod ablate;
mod commands;
mod config;
mod failure;
mod platform;

use failure::{CmdResult, Failure};

/// Political-actor graph embeddings: generate data, train, evaluate, ablate.
#[derive(Parser, Debug)]
#[command(name = "polhin", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with planted party ideology.
    Gen(commands::GenArgs),
    /// Train a model and write checkpoint, log and test report to a run directory.
    Train(commands::TrainArgs),
    /// Print the evaluation report of a trained run on one split.
    Eval(commands::EvalArgs),
    /// Write node embeddings as CSV and print Davies-Bouldin indices.
    Export(commands::ExportArgs),
    /// Train every cell of an ablation grid over several seeds.
    Ablate(ablate::AblateArgs),
    /// Compare objective gradients with central differences on a 20-node graph.
    Gradcheck(commands::GradcheckArgs),
}

fn run(cli: Cli) -> CmdResult<ExitCode> {
    match cli.command {
        Command::Gen(a) => commands::gen(&a)?,
        Command::Train(a) => commands::train(&a)?,
        Command::Eval(a) => commands::eval(&a)?,
        Command::Export(a) => commands::export(&a)?,
        Command::Ablate(a) => ablate::ablate(&a)?,
        Command::Gradcheck(a) => {
            if !commands::gradcheck(&a)? {
                return Ok(ExitCode::from(Failure::Numerical(String::new()).exit_code()));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    platform::tune();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

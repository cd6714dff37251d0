mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};
use config::{resolve, start_clock};

fn run() -> anyhow::Result<()> {
    start_clock();
    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches)?;
    let name = cli.command.name();
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match &cli.command {
        Command::TrainGcn(a) => commands::train_gcn(&resolve(a, sub, name, a.run.config.as_deref())?),
        Command::TrainGrn(a) => commands::train_grn(&resolve(a, sub, name, a.run.config.as_deref())?),
        Command::DiagResonance(a) => commands::diag_resonance(&resolve(a, sub, name, a.run.config.as_deref())?),
        Command::ExtractLrs(a) => commands::extract_lrs_cmd(&resolve(a, sub, name, a.run.config.as_deref())?),
        Command::Attack(a) => commands::attack(&resolve(a, sub, name, a.run.config.as_deref())?),
        Command::AsrSweep(a) => commands::asr_sweep(&resolve(a, sub, name, a.run.config.as_deref())?),
        Command::CostBound(a) => commands::cost_bound_cmd(&resolve(a, sub, name, a.config.as_deref())?),
        Command::RobustnessTable(a) => commands::robustness_table(&resolve(a, sub, name, a.run.config.as_deref())?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already embed their cause in the message.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    msg = format!("{msg}: {text}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

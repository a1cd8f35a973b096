//! The `firecast` command-line tool.

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod args;
mod commands;
mod run_config;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, DataCommand, MeshCommand};
use run_config::RunConfig;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn run_config(cli: &Cli, threads: usize) -> RunConfig {
    let name = cli.command.name();
    match &cli.command {
        Command::Mesh(MeshCommand::Build(a)) => RunConfig::new(name, threads, None, a),
        Command::Mesh(MeshCommand::Stats(a)) => RunConfig::new(name, threads, None, a),
        Command::Data(DataCommand::Synth(a)) => RunConfig::new(name, threads, Some(a.seed), a),
        Command::Data(DataCommand::Stats(a)) => RunConfig::new(name, threads, None, a),
        Command::Data(DataCommand::Validate(a)) => RunConfig::new(name, threads, None, a),
        Command::Data(DataCommand::Region(a)) => RunConfig::new(name, threads, None, a),
        Command::Train(a) => RunConfig::new(name, threads, Some(a.seed), a),
        Command::Predict(a) => RunConfig::new(name, threads, None, a),
        Command::Eval(a) => RunConfig::new(name, threads, None, a),
        Command::Baseline(a) => RunConfig::new(name, threads, None, a),
        Command::Attribute(a) => RunConfig::new(name, threads, None, a),
    }
}

fn dispatch(cli: &Cli, rc: &RunConfig) -> anyhow::Result<()> {
    match &cli.command {
        Command::Mesh(MeshCommand::Build(a)) => commands::mesh_build(a, rc),
        Command::Mesh(MeshCommand::Stats(a)) => commands::mesh_stats(a),
        Command::Data(DataCommand::Synth(a)) => commands::data_synth(a, rc),
        Command::Data(DataCommand::Stats(a)) => commands::data_stats(a),
        Command::Data(DataCommand::Validate(a)) => commands::data_validate(a),
        Command::Data(DataCommand::Region(a)) => commands::data_region(a),
        Command::Train(a) => commands::train_cmd(a, rc),
        Command::Predict(a) => commands::predict_cmd(a, rc),
        Command::Eval(a) => commands::eval_cmd(a, rc),
        Command::Baseline(a) => commands::baseline_cmd(a, rc),
        Command::Attribute(a) => commands::attribute_cmd(a, rc),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.exit_code() == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_USAGE)
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    let rc = run_config(&cli, rayon::current_num_threads());
    eprintln!("config: {}", rc.canonical());
    match dispatch(&cli, &rc) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

//! `e2ek`: experiments and utilities for NMS-free detection mechanics.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;
use crate::output::Format;

#[derive(Debug, Parser)]
#[command(
    name = "e2ek",
    version,
    about = "NMS-free detection toolkit: post-processing, assignment, schedules, optimizers, toy training and latency benches"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every stochastic component.
    #[arg(long, global = true, env = "E2EK_SEED", default_value_t = e2ek::rng::DEFAULT_SEED)]
    pub seed: u64,
    /// Directory that relative output paths resolve against.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Encoding for tabular outputs.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Greedy hard NMS over a detection CSV.
    Nms(commands::NmsArgs),
    /// Decode softmax-bin or direct regression outputs.
    Decode(commands::DecodeArgs),
    /// Label anchors of a scene JSON with one of the assigners.
    Assign(commands::AssignArgs),
    /// Dump the cls/box loss weight per epoch.
    Schedule(commands::ScheduleArgs),
    /// Train the toy head; writes metrics and a model file.
    Train(commands::TrainArgs),
    /// Evaluate a model without NMS on generated or stored scenes.
    Eval(commands::EvalArgs),
    /// Time the NMS and NMS-free tails and both decoders.
    Bench(commands::BenchArgs),
    /// SGD-momentum vs MuSGD loss curves.
    OptimCompare(commands::OptimCompareArgs),
    /// Generate synthetic scenes as JSON.
    SceneGen(commands::SceneGenArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match cli.command {
        Command::Nms(a) => commands::nms(g, a),
        Command::Decode(a) => commands::decode(g, a),
        Command::Assign(a) => commands::assign(g, a),
        Command::Schedule(a) => commands::schedule(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::Eval(a) => commands::eval(g, a),
        Command::Bench(a) => commands::bench(g, a),
        Command::OptimCompare(a) => commands::optim_compare(g, a),
        Command::SceneGen(a) => commands::scene_gen(g, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(error::EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

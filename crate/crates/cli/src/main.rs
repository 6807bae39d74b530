mod backends;
mod config;
mod derive;
mod eval;
mod output;
mod run;
mod simulate;
mod stats;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "alpr",
    version,
    about = "Cascade vehicle, plate, and character recognition toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the cascade over a frame list or an image directory
    Run(run::RunArgs),
    /// Sweep the cascade across a noise and seed grid with oracle backends
    Simulate(simulate::SimulateArgs),
    /// Score prediction files against a dataset's ground truth
    Eval(eval::EvalArgs),
    /// Summarize a dataset's class distribution
    Stats(stats::StatsArgs),
    /// Derive the next stage's dataset by cropping ground-truth instances
    DeriveStages(derive::DeriveArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run::run(args),
        Command::Simulate(args) => simulate::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Stats(args) => stats::run(args),
        Command::DeriveStages(args) => derive::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

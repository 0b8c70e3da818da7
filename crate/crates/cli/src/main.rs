//! `crowdflow` command-line driver.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "crowdflow", version, about = "Crowd simulation with a continuity-equation constraint")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scenario: trajectories plus a scene JSON.
    Synth(commands::SynthArgs),
    /// Resample trajectories onto a uniform frame interval.
    Preprocess(commands::PreprocessArgs),
    /// Train a predictor and write a checkpoint and a training log.
    Train(commands::TrainArgs),
    /// Roll a model forward from recorded initial states.
    Simulate(commands::SimulateArgs),
    /// Compare predicted trajectories against ground truth.
    Evaluate(commands::EvaluateArgs),
    /// Measure parameter count, per-frame latency and throughput.
    Bench(commands::BenchArgs),
}

/// Caps rayon's worker count from `CROWDFLOW_THREADS`.
fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("CROWDFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| anyhow::anyhow!("CROWDFLOW_THREADS must be a positive integer, got {raw:?}"))?;
    anyhow::ensure!(n > 0, "CROWDFLOW_THREADS must be a positive integer, got {raw:?}");
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Bench(a) => commands::bench(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// `base` with its extension replaced by `suffix`, e.g. `run.txt` -> `run.scene.json`.
pub(crate) fn sibling(base: &std::path::Path, suffix: &str) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    base.with_file_name(format!("{stem}{suffix}"))
}

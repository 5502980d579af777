//! `ppal`: round-based query selection from detector dumps.
//!
//! Exit codes: 0 on success, 1 when inputs fail validation, 2 on I/O errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ppal", version, about = "Two-stage active-learning query selection for object detection")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config file. Engine settings for track/score/select, the
    /// benchmark description for simulate/retrieve-bench.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (track/score/select) or directory (simulate/retrieve-bench).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fold a training-event stream into the per-class difficulty state.
    Track(TrackArgs),
    /// Score detections by calibrated image uncertainty.
    Score(ScoreArgs),
    /// Pick the next round's query set.
    Select(SelectArgs),
    /// Run the closed-loop synthetic benchmark.
    Simulate(SimulateArgs),
    /// Run the retrieval-correlation experiment on synthetic pools.
    RetrieveBench(RetrieveArgs),
}

#[derive(Debug, Args)]
struct TrackArgs {
    /// NDJSON training events, one iteration per line.
    #[arg(long)]
    events: PathBuf,
    /// Difficulty state; created fresh (every difficulty 1) when missing.
    #[arg(long)]
    state: PathBuf,
    /// Class count for a fresh state.
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    detections: PathBuf,
    /// Difficulty state; uniform weights when omitted.
    #[arg(long)]
    state: Option<PathBuf>,
    /// entropy, posterior or margin.
    #[arg(long)]
    measure: Option<String>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    detections: PathBuf,
    /// Difficulty state; fresh when omitted.
    #[arg(long)]
    state: Option<PathBuf>,
    #[arg(long)]
    round_state: PathBuf,
    /// random, entropy, coreset, dcus, ppal or `<pool>+<diversity>`.
    #[arg(long, default_value = "ppal")]
    strategy: String,
    /// Defaults to the round state's budget.
    #[arg(long)]
    budget: Option<usize>,
    /// Candidate pool ratio; defaults to the configured value (4).
    #[arg(long)]
    delta: Option<f64>,
    /// ccms, global, fpn or kl.
    #[arg(long)]
    similarity: Option<String>,
    /// Also write the round state after labelling the selection.
    #[arg(long)]
    next_state: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    /// Record wall-clock seconds (makes reports differ between runs).
    #[arg(long)]
    timings: bool,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    /// Neighbours per anchor; defaults to 20.
    #[arg(long)]
    k: Option<usize>,
    /// Also dump each seed's similarity matrix into the output directory.
    #[arg(long)]
    dump_matrix: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

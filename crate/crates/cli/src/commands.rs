use std::io::Write;
use std::path::{Path, PathBuf};

use ppal_core::difficulty::DifficultyCoefficients;
use ppal_core::record::{read_training_events, write_ndjson};
use ppal_core::sampler::{Diversity, PoolScoring};
use ppal_core::sim::{run_al_benchmark, run_retrieval_bench, BenchConfig, RetrievalBenchConfig};
use ppal_core::uncertainty::score_records;
use ppal_core::{
    advance_round, difficulty_coefficients, ingest_detections, DetectionRecord, DifficultyState,
    EngineConfig, Error, Result, RoundState, Strategy,
};
use serde::Serialize;

use crate::{Cli, Command, Common, RetrieveArgs, ScoreArgs, SelectArgs, SimulateArgs, TrackArgs};

pub(crate) fn run(cli: Cli) -> Result<()> {
    let Cli { common, command } = cli;
    match command {
        Command::Track(args) => track(&common, args),
        Command::Score(args) => score(&common, args),
        Command::Select(args) => select(&common, args),
        Command::Simulate(args) => simulate(&common, args),
        Command::RetrieveBench(args) => retrieve_bench(&common, args),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

/// `--config` replaces `base` wholesale; `--seed` then overrides.
fn engine_config(common: &Common, base: Option<EngineConfig>) -> Result<EngineConfig> {
    let mut cfg = match &common.config {
        Some(path) => EngineConfig::from_json(&read_text(path)?)?,
        None => base.unwrap_or_default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Writes to `--out`, or stdout when it is absent.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_error(path, e)),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| io_error(Path::new("<stdout>"), e)),
    }
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn class_count(records: &[DetectionRecord]) -> usize {
    records
        .iter()
        .flat_map(|r| r.objects.iter().map(|o| o.class_id + 1))
        .max()
        .unwrap_or(1)
}

#[derive(Serialize)]
struct TrackedState<'a> {
    #[serde(flatten)]
    state: &'a DifficultyState,
    iterations: usize,
    config: &'a EngineConfig,
}

fn track(common: &Common, args: TrackArgs) -> Result<()> {
    let cfg = engine_config(common, None)?;
    cfg.validate()?;
    let mut state = if args.state.exists() {
        DifficultyState::load(&args.state)?
    } else {
        let classes = args.classes.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{} does not exist; pass --classes to start a fresh state",
                args.state.display()
            ))
        })?;
        DifficultyState::new(classes, cfg.m0, cfg.xi)?
    };
    let events = read_training_events(&args.events)?;
    for (i, it) in events.iter().enumerate() {
        state.update(&it.matches).map_err(|e| match e {
            Error::ClassOutOfRange { class, classes } => Error::Parse {
                line: i + 1,
                message: format!("class id {class} out of range for {classes} classes"),
            },
            other => other,
        })?;
    }
    let text = pretty(&TrackedState {
        state: &state,
        iterations: events.len(),
        config: &cfg,
    })?;
    let out = common.out.clone().unwrap_or(args.state);
    emit(Some(&out), &text)
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    image_id: &'a str,
    uncertainty: f64,
}

fn score(common: &Common, args: ScoreArgs) -> Result<()> {
    let mut cfg = engine_config(common, None)?;
    if let Some(m) = &args.measure {
        cfg.measure = m.parse()?;
    }
    cfg.validate()?;
    let records = ingest_detections(&args.detections, cfg.max_objects)?;
    let coeffs = match &args.state {
        Some(path) => difficulty_coefficients(&DifficultyState::load(path)?, cfg.alpha, cfg.beta)?,
        None => DifficultyCoefficients::uniform(class_count(&records)),
    };
    let report = score_records(&records, &coeffs, cfg.measure)?;
    let lines = report
        .ranked()
        .into_iter()
        .map(|(image_id, uncertainty)| ScoreLine { image_id, uncertainty });
    match &common.out {
        Some(path) => write_ndjson(path, lines),
        None => {
            let mut text = String::new();
            for line in lines {
                text.push_str(&serde_json::to_string(&line)?);
                text.push('\n');
            }
            emit(None, &text)
        }
    }
}

fn select(common: &Common, args: SelectArgs) -> Result<()> {
    let mut round = RoundState::load(&args.round_state)?;
    let mut cfg = engine_config(common, Some(round.config.clone()))?;
    if let Some(delta) = args.delta {
        cfg.delta = delta;
    }
    if let Some(kind) = &args.similarity {
        cfg.similarity_kind = kind.parse()?;
    }
    cfg.validate()?;
    if let Some(budget) = args.budget {
        round.budget = budget;
    }
    round.config = cfg.clone();
    round.validate()?;

    let records = ingest_detections(&args.detections, cfg.max_objects)?;
    let difficulty = match &args.state {
        Some(path) => DifficultyState::load(path)?,
        None => DifficultyState::new(class_count(&records), cfg.m0, cfg.xi)?,
    };
    let strategy = match args.strategy.as_str() {
        "ppal" => Strategy::TwoStage(PoolScoring::Dcus, Diversity::Similarity(cfg.similarity_kind)),
        other => other.parse()?,
    };
    let mut queries = strategy.select(&records, &round, &difficulty, &cfg)?;
    queries.config = Some(cfg);
    emit(common.out.as_deref(), &pretty(&queries)?)?;
    if let Some(path) = &args.next_state {
        advance_round(&round, &queries)?.save(path)?;
    }
    Ok(())
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    Ok(dir)
}

fn simulate(common: &Common, args: SimulateArgs) -> Result<()> {
    let mut cfg: BenchConfig = match &common.config {
        Some(path) => serde_json::from_str(&read_text(path)?)?,
        None => BenchConfig::default(),
    };
    if let Some(s) = args.strategies {
        cfg.strategies = s;
    }
    if let Some(r) = args.rounds {
        cfg.rounds = r;
    }
    if let Some(b) = args.budget {
        cfg.budget = b;
    }
    if let Some(d) = args.delta {
        cfg.delta = d;
    }
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    cfg.timings |= args.timings;
    let report = run_al_benchmark(&cfg)?;
    let dir = out_dir(common)?;
    report.write_csv(&dir.join("report.csv"))?;
    report.write_json(&dir.join("report.json"))
}

fn retrieve_bench(common: &Common, args: RetrieveArgs) -> Result<()> {
    let mut cfg: RetrievalBenchConfig = match &common.config {
        Some(path) => serde_json::from_str(&read_text(path)?)?,
        None => RetrievalBenchConfig::default(),
    };
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    let dir = out_dir(common)?;
    let report = run_retrieval_bench(&cfg, args.dump_matrix.then_some(dir.as_path()))?;
    report.write_csv(&dir.join("retrieval.csv"))?;
    report.write_json(&dir.join("retrieval.json"))
}

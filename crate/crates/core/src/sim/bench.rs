//! Closed-loop benchmark: simulate, track difficulty, select, label, measure.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::detector::{simulate_detector, DetectorParams};
use super::world::{SyntheticWorld, WorldParams};
use super::stream_rng;
use crate::config::EngineConfig;
use crate::difficulty::DifficultyState;
use crate::error::{Error, Result};
use crate::round::{advance_round, RoundState};
use crate::sampler::Strategy;

pub const PROBE_NOTE: &str = "probe_acc is the macro-averaged per-class recall of a nearest-class-mean \
classifier fitted on the features of labelled objects and evaluated on a held-out set; it stands in \
for detection mAP, which needs a trained detector";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub strategies: Vec<String>,
    pub rounds: u32,
    pub budget: usize,
    pub delta: f64,
    pub seeds: Vec<u64>,
    /// Randomly labelled images before the first round, shared by all arms.
    pub initial_labelled: usize,
    /// Record wall-clock seconds per round. Off by default so reports stay
    /// byte-identical between runs.
    pub timings: bool,
    pub world: WorldParams,
    pub detector: DetectorParams,
    pub engine: EngineConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            strategies: vec!["random".into(), "entropy".into(), "ppal".into()],
            rounds: 6,
            budget: 25,
            delta: 4.0,
            seeds: vec![0, 1, 2],
            initial_labelled: 50,
            timings: false,
            world: WorldParams::default(),
            detector: DetectorParams::default(),
            engine: EngineConfig::default(),
        }
    }
}

impl BenchConfig {
    /// Parses every strategy name and checks the run fits in the world.
    pub fn validate(&self) -> Result<Vec<Strategy>> {
        if self.strategies.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("benchmark needs at least one strategy and one seed"));
        }
        if self.rounds == 0 || self.budget == 0 {
            return Err(Error::invalid("rounds and budget must be positive"));
        }
        self.world.validate()?;
        self.engine_config(0).validate()?;
        let needed = self.initial_labelled + self.rounds as usize * self.budget;
        if needed > self.world.images {
            return Err(Error::invalid(format!(
                "{needed} images needed but the world has {}",
                self.world.images
            )));
        }
        self.strategies.iter().map(|s| s.parse()).collect()
    }

    fn engine_config(&self, seed: u64) -> EngineConfig {
        EngineConfig {
            delta: self.delta,
            seed,
            ..self.engine.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub strategy: String,
    pub seed: u64,
    pub round: u32,
    /// Entropy (nats) of the class histogram of all objects queried so far.
    pub coverage_entropy: f64,
    /// Share of rare-class objects among all objects queried so far.
    pub rare_fraction: f64,
    pub probe_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub note: String,
    /// Ordered by strategy (config order), then seed, then round.
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "strategy,seed,round,coverage_entropy,rare_fraction,probe_acc,seconds";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{:.3}",
                r.strategy, r.seed, r.round, r.coverage_entropy, r.rare_fraction, r.probe_acc, r.seconds
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Rows of `strategy` at the last round, one per seed in seed order.
    pub fn final_rows(&self, strategy: &str) -> Vec<&BenchRow> {
        let last = self.config.rounds;
        self.rows
            .iter()
            .filter(|r| r.strategy == strategy && r.round == last)
            .collect()
    }
}

/// Class-histogram entropy in nats.
fn histogram_entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

fn probe_accuracy(world: &SyntheticWorld, labelled: &BTreeSet<String>) -> f64 {
    let classes = world.params.classes;
    let dim = world.params.dim;
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for id in labelled {
        let Some(i) = world.image_index(id) else { continue };
        for o in &world.images[i].objects {
            counts[o.class_id] += 1;
            for (s, x) in sums[o.class_id].iter_mut().zip(&o.feature) {
                *s += x;
            }
        }
    }
    let means: Vec<Option<Vec<f64>>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| (n > 0).then(|| s.into_iter().map(|x| x / n as f64).collect()))
        .collect();

    let mut hits = vec![0usize; classes];
    let mut seen = vec![0usize; classes];
    for (truth, f) in &world.validation {
        seen[*truth] += 1;
        let predicted = means
            .iter()
            .enumerate()
            .filter_map(|(c, m)| m.as_ref().map(|m| (c, squared_distance(m, f))))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(c, _)| c);
        if predicted == Some(*truth) {
            hits[*truth] += 1;
        }
    }
    let recalls: Vec<f64> = (0..classes)
        .filter(|&c| seen[c] > 0)
        .map(|c| hits[c] as f64 / seen[c] as f64)
        .collect();
    if recalls.is_empty() {
        0.0
    } else {
        recalls.iter().sum::<f64>() / recalls.len() as f64
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn initial_state(world: &SyntheticWorld, cfg: &BenchConfig, seed: u64) -> Result<RoundState> {
    let n = world.images.len();
    let picks = index::sample(&mut stream_rng(seed, &[30]), n, cfg.initial_labelled);
    let labelled: BTreeSet<usize> = picks.into_iter().collect();
    let (l, u): (Vec<_>, Vec<_>) = world.images.iter().enumerate().partition(|(i, _)| labelled.contains(i));
    RoundState::new(
        l.into_iter().map(|(_, s)| s.image_id.clone()),
        u.into_iter().map(|(_, s)| s.image_id.clone()),
        cfg.budget,
        cfg.engine_config(seed),
    )
}

fn run_arm(world: &SyntheticWorld, cfg: &BenchConfig, name: &str, strategy: Strategy, seed: u64) -> Result<Vec<BenchRow>> {
    let engine = cfg.engine_config(seed);
    let mut state = initial_state(world, cfg, seed)?;
    let mut class_counts = vec![0usize; world.params.classes];
    let mut rows = Vec::with_capacity(cfg.rounds as usize);
    for r in 1..=cfg.rounds {
        let start = Instant::now();
        let detector_seed = seed.wrapping_mul(0x1_0000).wrapping_add(r as u64);
        let out = simulate_detector(world, &state.labelled_ids, &cfg.detector, detector_seed)?;
        let mut difficulty = DifficultyState::new(world.params.classes, engine.m0, engine.xi)?;
        if strategy.uses_difficulty() {
            for it in &out.events {
                difficulty.update(&it.matches)?;
            }
        }
        let queries = strategy.select(&out.records, &state, &difficulty, &engine)?;
        for id in &queries.ids {
            let i = world.image_index(id).ok_or_else(|| Error::UnknownId(id.clone()))?;
            for o in &world.images[i].objects {
                class_counts[o.class_id] += 1;
            }
        }
        state = advance_round(&state, &queries)?;
        let total: usize = class_counts.iter().sum();
        let rare: usize = world.rare_classes().map(|c| class_counts[c]).sum();
        let probe_acc = probe_accuracy(world, &state.labelled_ids);
        rows.push(BenchRow {
            strategy: name.to_string(),
            seed,
            round: r,
            coverage_entropy: histogram_entropy(&class_counts),
            rare_fraction: if total == 0 { 0.0 } else { rare as f64 / total as f64 },
            probe_acc,
            seconds: if cfg.timings { start.elapsed().as_secs_f64() } else { 0.0 },
        });
    }
    Ok(rows)
}

/// Runs every (strategy, seed) arm. Arms run in parallel; each arm's rounds
/// are sequential. Worlds and initial labels depend only on the seed, so all
/// strategies start from the same state.
pub fn run_al_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    let strategies = cfg.validate()?;
    let worlds: Vec<SyntheticWorld> = cfg
        .seeds
        .par_iter()
        .map(|&s| SyntheticWorld::generate(&cfg.world, s))
        .collect::<Result<_>>()?;
    let arms: Vec<(usize, usize)> = (0..strategies.len())
        .flat_map(|a| (0..cfg.seeds.len()).map(move |s| (a, s)))
        .collect();
    let results: Vec<Vec<BenchRow>> = arms
        .par_iter()
        .map(|&(a, s)| run_arm(&worlds[s], cfg, &cfg.strategies[a], strategies[a], cfg.seeds[s]))
        .collect::<Result<_>>()?;
    Ok(BenchReport {
        config: cfg.clone(),
        note: PROBE_NOTE.to_string(),
        rows: results.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(strategies: &[&str]) -> BenchConfig {
        BenchConfig {
            strategies: strategies.iter().map(|s| s.to_string()).collect(),
            rounds: 2,
            budget: 5,
            seeds: vec![3],
            initial_labelled: 10,
            world: WorldParams {
                images: 120,
                scene_templates: 30,
                validation_per_class: 5,
                ..WorldParams::default()
            },
            ..BenchConfig::default()
        }
    }

    #[test]
    fn one_row_per_round_and_seed() {
        let mut cfg = tiny(&["random"]);
        cfg.rounds = 1;
        cfg.seeds = vec![1, 2];
        let report = run_al_benchmark(&cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.to_csv().lines().next().unwrap(), BenchReport::CSV_HEADER);
        assert_eq!(report.to_csv().lines().count(), 3);
    }

    #[test]
    fn unknown_strategy_is_an_error() {
        assert!(matches!(run_al_benchmark(&tiny(&["bogus"])), Err(Error::UnknownStrategy(_))));
    }

    #[test]
    fn reproducible_and_ordered() {
        let cfg = tiny(&["ppal", "random", "entropy"]);
        let a = run_al_benchmark(&cfg).unwrap();
        let b = run_al_benchmark(&cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let keys: Vec<_> = a.rows.iter().map(|r| (r.strategy.as_str(), r.round)).collect();
        assert_eq!(
            keys,
            [("ppal", 1), ("ppal", 2), ("random", 1), ("random", 2), ("entropy", 1), ("entropy", 2)]
        );
    }

    #[test]
    fn ppal_without_pool_or_diversity_matches_dcus_only() {
        let mut cfg = tiny(&["dcus+rand", "dcus"]);
        cfg.delta = 1.0;
        let report = run_al_benchmark(&cfg).unwrap();
        let pick = |s: &str| -> Vec<(f64, f64)> {
            report.rows.iter().filter(|r| r.strategy == s).map(|r| (r.rare_fraction, r.probe_acc)).collect()
        };
        assert_eq!(pick("dcus+rand"), pick("dcus"));
    }

    #[test]
    fn too_small_world_rejected() {
        let mut cfg = tiny(&["random"]);
        cfg.rounds = 100;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn histogram_entropy_closed_form() {
        assert_eq!(histogram_entropy(&[0, 0]), 0.0);
        assert!((histogram_entropy(&[3, 3, 0]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn probe_with_all_labels_beats_chance() {
        let cfg = tiny(&["random"]);
        let w = SyntheticWorld::generate(&cfg.world, 4).unwrap();
        let all: BTreeSet<String> = w.images.iter().map(|s| s.image_id.clone()).collect();
        assert!(probe_accuracy(&w, &all) > 1.0 / w.params.classes as f64);
        assert_eq!(probe_accuracy(&w, &BTreeSet::new()), 0.0);
    }
}

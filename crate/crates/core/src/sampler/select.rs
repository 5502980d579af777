use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{k_center_greedy, kmeans_pp_similarity, Provenance, QuerySet, Stage};
use crate::config::{EngineConfig, SimilarityKind};
use crate::difficulty::{difficulty_coefficients, DifficultyCoefficients, DifficultyState};
use crate::error::{Error, Result};
use crate::record::DetectionRecord;
use crate::round::RoundState;
use crate::similarity::similarity_matrix;
use crate::uncertainty::{pool_size, score_records, select_candidate_pool};

/// How the first stage ranks unlabelled images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolScoring {
    Random,
    /// Plain summed uncertainty (all class weights 1).
    Entropy,
    /// Summed uncertainty weighted by the difficulty coefficients.
    Dcus,
}

/// How the second stage narrows the pool to the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diversity {
    /// Keep the top of the pool ranking.
    None,
    Random,
    Similarity(SimilarityKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Random,
    Entropy,
    CoresetGlobal,
}

/// A named selection arm, as used by the benchmark and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Baseline(Baseline),
    TwoStage(PoolScoring, Diversity),
}

impl Strategy {
    pub const PPAL: Strategy = Strategy::TwoStage(PoolScoring::Dcus, Diversity::Similarity(SimilarityKind::Ccms));

    pub fn select(
        &self,
        records: &[DetectionRecord],
        round: &RoundState,
        difficulty: &DifficultyState,
        cfg: &EngineConfig,
    ) -> Result<QuerySet> {
        match *self {
            Strategy::Baseline(kind) => {
                baseline_select(kind, records, round, round.budget, cfg.seed)
            }
            Strategy::TwoStage(pool, diversity) => {
                two_stage_select(records, round, difficulty, cfg, pool, diversity)
            }
        }
    }

    /// Whether selection depends on the difficulty tracker.
    pub fn uses_difficulty(&self) -> bool {
        matches!(self, Strategy::TwoStage(PoolScoring::Dcus, _))
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// Accepts `random`, `entropy`, `dcus`, `ppal`, `coreset`, or an explicit
    /// `<pool>+<diversity>` pair such as `entropy+ccms` or `dcus+global`.
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownStrategy(s.to_string());
        match s {
            "random" => return Ok(Strategy::Baseline(Baseline::Random)),
            "coreset" => return Ok(Strategy::Baseline(Baseline::CoresetGlobal)),
            "entropy" => return Ok(Strategy::TwoStage(PoolScoring::Entropy, Diversity::None)),
            "dcus" => return Ok(Strategy::TwoStage(PoolScoring::Dcus, Diversity::None)),
            "ppal" => return Ok(Strategy::PPAL),
            _ => {}
        }
        let (first, second) = s.split_once('+').ok_or_else(unknown)?;
        let pool = match first {
            "rand" | "random" => PoolScoring::Random,
            "entropy" => PoolScoring::Entropy,
            "dcus" => PoolScoring::Dcus,
            _ => return Err(unknown()),
        };
        let diversity = match second {
            "none" => Diversity::None,
            "rand" | "random" => Diversity::Random,
            other => Diversity::Similarity(other.parse().map_err(|_| unknown())?),
        };
        Ok(Strategy::TwoStage(pool, diversity))
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Strategy::Baseline(Baseline::Random) => f.write_str("random"),
            Strategy::Baseline(Baseline::Entropy) => f.write_str("entropy"),
            Strategy::Baseline(Baseline::CoresetGlobal) => f.write_str("coreset"),
            Strategy::TwoStage(pool, diversity) => {
                let pool = match pool {
                    PoolScoring::Random => "rand",
                    PoolScoring::Entropy => "entropy",
                    PoolScoring::Dcus => "dcus",
                };
                let diversity = match diversity {
                    Diversity::None => "none",
                    Diversity::Random => "rand",
                    Diversity::Similarity(SimilarityKind::Ccms) => "ccms",
                    Diversity::Similarity(SimilarityKind::Global) => "global",
                    Diversity::Similarity(SimilarityKind::Fpn) => "fpn",
                    Diversity::Similarity(SimilarityKind::Kl) => "kl",
                };
                write!(f, "{pool}+{diversity}")
            }
        }
    }
}

/// Deterministic per-round generator.
pub fn round_rng(seed: u64, round: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (u64::from(round) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn index_records(records: &[DetectionRecord]) -> Result<HashMap<&str, &DetectionRecord>> {
    let mut map = HashMap::with_capacity(records.len());
    for r in records {
        if map.insert(r.image_id.as_str(), r).is_some() {
            return Err(Error::invalid(format!("duplicate detection record `{}`", r.image_id)));
        }
    }
    Ok(map)
}

fn unlabelled_records<'a>(
    records: &'a [DetectionRecord],
    round: &RoundState,
) -> Result<Vec<&'a DetectionRecord>> {
    let index = index_records(records)?;
    round
        .unlabelled_ids
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::MissingRecord(id.clone()))
        })
        .collect()
}

fn check_budget(budget: usize, round: &RoundState) -> Result<()> {
    if budget == 0 {
        return Err(Error::invalid("budget must be positive"));
    }
    if budget > round.unlabelled_ids.len() {
        return Err(Error::invalid(format!(
            "budget {budget} exceeds the {} unlabelled images",
            round.unlabelled_ids.len()
        )));
    }
    Ok(())
}

fn uniform_for(records: &[&DetectionRecord]) -> DifficultyCoefficients {
    let classes = records
        .iter()
        .flat_map(|r| r.objects.iter().map(|o| o.class_id + 1))
        .max()
        .unwrap_or(1);
    DifficultyCoefficients::uniform(classes)
}

/// Generic two-stage selection: rank into a candidate pool of
/// `round(delta * budget)` images, then narrow the pool to the budget.
pub fn two_stage_select(
    records: &[DetectionRecord],
    round: &RoundState,
    difficulty: &DifficultyState,
    cfg: &EngineConfig,
    pool_scoring: PoolScoring,
    diversity: Diversity,
) -> Result<QuerySet> {
    cfg.validate()?;
    let budget = round.budget;
    check_budget(budget, round)?;
    let candidates = unlabelled_records(records, round)?;
    let mut rng = round_rng(cfg.seed, round.round);

    let (pool, uncertainties): (Vec<String>, Option<BTreeMap<String, f64>>) = match pool_scoring {
        PoolScoring::Random => {
            let n = pool_size(budget, cfg.delta, candidates.len());
            let picks = index::sample(&mut rng, candidates.len(), n);
            (picks.iter().map(|i| candidates[i].image_id.clone()).collect(), None)
        }
        PoolScoring::Entropy | PoolScoring::Dcus => {
            let coeffs = if pool_scoring == PoolScoring::Dcus {
                difficulty_coefficients(difficulty, cfg.alpha, cfg.beta)?
            } else {
                uniform_for(&candidates)
            };
            let report = score_records(&candidates, &coeffs, cfg.measure)?;
            let pool = select_candidate_pool(&report, &round.unlabelled_ids, budget, cfg.delta)?;
            let us = report
                .images
                .into_iter()
                .map(|(id, u)| (id, u.uncertainty))
                .collect();
            (pool, Some(us))
        }
    };

    let k = budget.min(pool.len());
    let (picked, stage, clustered): (Vec<usize>, Stage, bool) = match diversity {
        Diversity::None => ((0..k).collect(), Stage::Uncertainty, false),
        Diversity::Random => (index::sample(&mut rng, pool.len(), k).into_vec(), Stage::Random, false),
        Diversity::Similarity(kind) => {
            let index = index_records(records)?;
            let pool_records: Vec<&DetectionRecord> = pool.iter().map(|id| index[id.as_str()]).collect();
            let sim = similarity_matrix(&pool_records, kind)?;
            let init = k_center_greedy(&sim, k, 0)?;
            let clusters = kmeans_pp_similarity(&sim, &init, cfg.kmeans_max_iter)?;
            (clusters.centers, Stage::Diversity, true)
        }
    };
    let stage = if pool_scoring == PoolScoring::Random && stage == Stage::Uncertainty {
        Stage::Random
    } else {
        stage
    };

    let mut ids = Vec::with_capacity(k);
    let mut provenance = BTreeMap::new();
    for (cluster, &p) in picked.iter().enumerate() {
        let id = pool[p].clone();
        provenance.insert(
            id.clone(),
            Provenance {
                uncertainty: uncertainties.as_ref().and_then(|u| u.get(&id).copied()),
                cluster: clustered.then_some(cluster),
                stage,
            },
        );
        ids.push(id);
    }
    Ok(QuerySet {
        round: round.round,
        ids,
        provenance,
        config: None,
    })
}

/// Difficulty-calibrated uncertainty pool followed by similarity-based
/// diversity selection (k-center greedy seeding, then medoid k-means).
pub fn ppal_select(
    records: &[DetectionRecord],
    round: &RoundState,
    difficulty: &DifficultyState,
    cfg: &EngineConfig,
) -> Result<QuerySet> {
    two_stage_select(
        records,
        round,
        difficulty,
        cfg,
        PoolScoring::Dcus,
        Diversity::Similarity(cfg.similarity_kind),
    )
}

pub fn baseline_select(
    kind: Baseline,
    records: &[DetectionRecord],
    round: &RoundState,
    budget: usize,
    seed: u64,
) -> Result<QuerySet> {
    check_budget(budget, round)?;
    let candidates = unlabelled_records(records, round)?;
    let (picked, stage, clustered): (Vec<usize>, Stage, bool) = match kind {
        Baseline::Random => {
            let mut rng = round_rng(seed, round.round);
            (index::sample(&mut rng, candidates.len(), budget).into_vec(), Stage::Random, false)
        }
        Baseline::Entropy => {
            let mut narrowed = round.clone();
            narrowed.budget = budget;
            let cfg = EngineConfig {
                delta: 1.0,
                seed,
                ..round.config.clone()
            };
            let unused = DifficultyState::new(1, cfg.m0, cfg.xi)?;
            return two_stage_select(records, &narrowed, &unused, &cfg, PoolScoring::Entropy, Diversity::None);
        }
        Baseline::CoresetGlobal => {
            let sim = similarity_matrix(&candidates, SimilarityKind::Global)?;
            (k_center_greedy(&sim, budget, 0)?, Stage::Diversity, true)
        }
    };
    let mut ids = Vec::with_capacity(picked.len());
    let mut provenance = BTreeMap::new();
    for (cluster, &i) in picked.iter().enumerate() {
        let id = candidates[i].image_id.clone();
        provenance.insert(
            id.clone(),
            Provenance {
                uncertainty: None,
                cluster: clustered.then_some(cluster),
                stage,
            },
        );
        ids.push(id);
    }
    Ok(QuerySet {
        round: round.round,
        ids,
        provenance,
        config: None,
    })
}

//! Query selection: the diversity stage (k-center greedy seeding followed by
//! medoid k-means over a similarity matrix), the full two-stage pipeline, and
//! the baselines it is compared against.

mod kcenter;
mod kmeans;
mod select;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;

pub use kcenter::{covering_radius, k_center_greedy};
pub use kmeans::{assignment_objective, kmeans_pp_similarity, MedoidClustering};
pub use select::{
    baseline_select, ppal_select, round_rng, two_stage_select, Baseline, Diversity, PoolScoring,
    Strategy,
};

/// Which step of the pipeline put an image into the query set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Taken straight from the uncertainty ranking.
    Uncertainty,
    /// Drawn uniformly at random.
    Random,
    /// Chosen as a cluster medoid or k-center point by the diversity stage.
    Diversity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub uncertainty: Option<f64>,
    pub cluster: Option<usize>,
    pub stage: Stage,
}

/// Ordered query ids with per-id provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    pub round: u32,
    pub ids: Vec<String>,
    pub provenance: BTreeMap<String, Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<EngineConfig>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

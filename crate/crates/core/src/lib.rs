//! Two-stage active-learning query selection for object detection.
//!
//! The first stage ranks unlabelled images by summed per-object uncertainty,
//! re-weighted by per-class difficulty coefficients that are tracked during
//! detector training, and keeps the top `delta * budget` images as a
//! candidate pool. The second stage picks a diverse, representative subset
//! of the pool with k-center greedy seeding followed by medoid k-means over a
//! category-conditioned matching similarity between multi-object images.
//!
//! Everything here is detector-agnostic: inputs are NDJSON dumps of per-image
//! detections and per-iteration training matches (see [`record`]).

pub mod config;
pub mod difficulty;
pub mod error;
pub mod record;
pub mod round;
pub mod sampler;
pub mod sim;
pub mod similarity;
pub mod uncertainty;

pub use config::{EngineConfig, SimilarityKind, UncertaintyMeasure};
pub use difficulty::{
    difficulty_coefficients, iou, object_difficulty, update_difficulties, BBox,
    DifficultyCoefficients, DifficultyState,
};
pub use error::{Error, Result};
pub use record::{ingest_detections, DetectedObject, DetectionRecord, MatchEvent, TrainingIteration};
pub use round::{advance_round, RoundState};
pub use sampler::{
    baseline_select, k_center_greedy, kmeans_pp_similarity, ppal_select, Baseline, QuerySet,
    Strategy,
};
pub use similarity::{ccms, ccms_directed, global_similarity, kl_similarity, similarity_matrix, SimilarityMatrix};
pub use uncertainty::{
    image_uncertainty, object_uncertainty, select_candidate_pool, UncertaintyReport,
};

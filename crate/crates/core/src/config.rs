//! Engine configuration shared by every stage of a selection round.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-object uncertainty measure. Larger always means more uncertain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyMeasure {
    #[default]
    Entropy,
    Posterior,
    Margin,
}

/// Image-to-image similarity used by the diversity stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    /// Category-conditioned matching similarity over object features.
    #[default]
    Ccms,
    /// Shifted cosine of one whole-image feature.
    Global,
    /// Shifted cosine averaged over per-level image features.
    Fpn,
    /// Category-conditioned matching over classification probability vectors.
    Kl,
}

impl std::str::FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ccms" => Ok(SimilarityKind::Ccms),
            "global" => Ok(SimilarityKind::Global),
            "fpn" => Ok(SimilarityKind::Fpn),
            "kl" => Ok(SimilarityKind::Kl),
            other => Err(Error::invalid(format!("unknown similarity kind `{other}`"))),
        }
    }
}

impl std::str::FromStr for UncertaintyMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(UncertaintyMeasure::Entropy),
            "posterior" => Ok(UncertaintyMeasure::Posterior),
            "margin" => Ok(UncertaintyMeasure::Margin),
            other => Err(Error::invalid(format!(
                "unknown uncertainty measure `{other}`"
            ))),
        }
    }
}

/// Hyper-parameters of the two-stage selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Exponent balancing classification against localisation in object difficulty.
    pub xi: f64,
    /// Initial (and reset) EMA momentum of the difficulty tracker.
    pub m0: f64,
    /// How fast the difficulty coefficient grows with difficulty.
    pub alpha: f64,
    /// Upper bound offset of the difficulty coefficient, `w ∈ [1, 1 + beta]`.
    pub beta: f64,
    /// Budget expanding ratio: the candidate pool holds `round(delta * budget)` images.
    pub delta: f64,
    pub kmeans_max_iter: usize,
    /// Per-image detection cap applied at ingest.
    pub max_objects: usize,
    pub measure: UncertaintyMeasure,
    pub similarity_kind: SimilarityKind,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            xi: 0.6,
            m0: 0.99,
            alpha: 0.3,
            beta: 0.2,
            delta: 4.0,
            kmeans_max_iter: 100,
            max_objects: 100,
            measure: UncertaintyMeasure::Entropy,
            similarity_kind: SimilarityKind::Ccms,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::invalid(msg)) };
        check((0.0..=1.0).contains(&self.xi), "xi must lie in [0, 1]")?;
        check(self.m0 > 0.0 && self.m0 < 1.0, "m0 must lie in (0, 1)")?;
        check(self.alpha > 0.0 && self.alpha.is_finite(), "alpha must be positive")?;
        check(self.beta > 0.0 && self.beta.is_finite(), "beta must be positive")?;
        check(self.delta >= 1.0 && self.delta.is_finite(), "delta must be at least 1")?;
        check(self.kmeans_max_iter >= 1, "kmeans_max_iter must be at least 1")?;
        check(self.max_objects >= 1, "max_objects must be at least 1")?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: EngineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

//! Difficulty-calibrated image uncertainty and candidate-pool selection.

use std::borrow::Borrow;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::UncertaintyMeasure;
use crate::difficulty::DifficultyCoefficients;
use crate::error::{Error, Result};
use crate::record::DetectionRecord;

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

pub fn object_uncertainty(probs: &[f64], measure: UncertaintyMeasure) -> Result<f64> {
    match measure {
        UncertaintyMeasure::Entropy => Ok(entropy(probs)),
        UncertaintyMeasure::Posterior => {
            let max = probs.iter().copied().fold(0.0_f64, f64::max);
            Ok((1.0 - max).max(0.0))
        }
        UncertaintyMeasure::Margin => {
            if probs.len() < 2 {
                return Err(Error::invalid(
                    "margin needs a probability vector of length at least 2",
                ));
            }
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &p in probs {
                if p > first {
                    second = first;
                    first = p;
                } else if p > second {
                    second = p;
                }
            }
            Ok((1.0 - (first - second)).clamp(0.0, 1.0))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUncertainty {
    pub uncertainty: f64,
    pub objects: Vec<f64>,
}

/// Image id to calibrated uncertainty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub images: BTreeMap<String, ImageUncertainty>,
}

impl UncertaintyReport {
    pub fn get(&self, id: &str) -> Option<f64> {
        self.images.get(id).map(|u| u.uncertainty)
    }

    /// All images, most uncertain first; ties in id order.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self
            .images
            .iter()
            .map(|(id, u)| (id.as_str(), u.uncertainty))
            .collect();
        v.sort_by(|a, b| descending(a.1, b.1).then_with(|| a.0.cmp(b.0)));
        v
    }
}

fn descending(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

fn score_image(
    record: &DetectionRecord,
    coeffs: &DifficultyCoefficients,
    measure: UncertaintyMeasure,
) -> Result<ImageUncertainty> {
    let mut objects = Vec::with_capacity(record.objects.len());
    let mut total = 0.0;
    for obj in &record.objects {
        let u = object_uncertainty(&obj.probs, measure)?;
        total += coeffs.weight(obj.class_id)? * u;
        objects.push(u);
    }
    Ok(ImageUncertainty {
        uncertainty: total,
        objects,
    })
}

/// Sum over detected objects of class weight times object uncertainty.
pub fn image_uncertainty(
    record: &DetectionRecord,
    coeffs: &DifficultyCoefficients,
    measure: UncertaintyMeasure,
) -> Result<f64> {
    score_image(record, coeffs, measure).map(|u| u.uncertainty)
}

pub fn score_records<R>(
    records: &[R],
    coeffs: &DifficultyCoefficients,
    measure: UncertaintyMeasure,
) -> Result<UncertaintyReport>
where
    R: Borrow<DetectionRecord> + Sync,
{
    let scored: Vec<(String, ImageUncertainty)> = records
        .par_iter()
        .map(|r| {
            let r = r.borrow();
            score_image(r, coeffs, measure).map(|u| (r.image_id.clone(), u))
        })
        .collect::<Result<_>>()?;
    Ok(UncertaintyReport {
        images: scored.into_iter().collect(),
    })
}

/// Number of images in the candidate pool.
pub fn pool_size(budget: usize, delta: f64, available: usize) -> usize {
    ((delta * budget as f64).round() as usize).min(available)
}

/// The `round(delta * budget)` most uncertain unlabelled images, most
/// uncertain first, ties broken by id.
pub fn select_candidate_pool(
    report: &UncertaintyReport,
    unlabelled: &BTreeSet<String>,
    budget: usize,
    delta: f64,
) -> Result<Vec<String>> {
    if unlabelled.is_empty() {
        return Err(Error::invalid("the unlabelled set is empty"));
    }
    if budget == 0 {
        return Err(Error::invalid("budget must be positive"));
    }
    if !(delta >= 1.0) {
        return Err(Error::invalid("delta must be at least 1"));
    }
    let mut scored = Vec::with_capacity(unlabelled.len());
    for id in unlabelled {
        let u = report
            .get(id)
            .ok_or_else(|| Error::MissingRecord(id.clone()))?;
        scored.push((id, u));
    }
    // BTreeSet iteration is already in id order, so a stable sort keeps the tie rule
    scored.sort_by(|a, b| descending(a.1, b.1));
    let n = pool_size(budget, delta, scored.len());
    Ok(scored.into_iter().take(n).map(|(id, _)| id.clone()).collect())
}

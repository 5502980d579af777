//! Mock detector: per-class quality grows with the number of labelled
//! objects of that class and shrinks with class difficulty.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stream_rng;
use super::world::{gaussian, jitter_box, perturb, Scene, SyntheticWorld};
use crate::difficulty::iou;
use crate::error::{Error, Result};
use crate::record::{l2_normalized, DetectedObject, DetectionRecord, MatchEvent, TrainingIteration};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    /// Labelled objects needed for quality `1 - 1/e` at difficulty 0.
    pub label_scale: f64,
    /// Extra labels needed per unit of difficulty, as a multiple of `label_scale`.
    pub difficulty_slowdown: f64,
    /// Logit margin of the true class at full quality.
    pub sharpness: f64,
    pub logit_noise: f64,
    /// Noise between an object's appearance and the feature the detector reports.
    pub feature_noise: f64,
    /// Box jitter at zero quality and full difficulty.
    pub loc_noise: f64,
    pub epochs: usize,
    pub batch_images: usize,
    /// Weight of the background component in whole-image features.
    pub background_weight: f64,
    /// Area exponents of the per-level whole-image features; the first one is
    /// also used for the global feature.
    pub level_exponents: Vec<f64>,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            label_scale: 6.0,
            difficulty_slowdown: 4.0,
            sharpness: 6.0,
            logit_noise: 0.5,
            feature_noise: 0.2,
            loc_noise: 0.5,
            epochs: 2,
            batch_images: 4,
            background_weight: 0.3,
            level_exponents: vec![2.0, 1.0, 0.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetectorOutput {
    /// One record per world image, in world order.
    pub records: Vec<DetectionRecord>,
    pub events: Vec<TrainingIteration>,
    /// Per-class quality in `[0, 1)`.
    pub quality: Vec<f64>,
}

fn class_quality(world: &SyntheticWorld, params: &DetectorParams, labelled_counts: &[usize]) -> Vec<f64> {
    labelled_counts
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let scale = params.label_scale * (1.0 + params.difficulty_slowdown * world.class_difficulty[c]);
            1.0 - (-(n as f64) / scale).exp()
        })
        .collect()
}

fn class_probs(rng: &mut ChaCha8Rng, ways: usize, class: usize, margin: f64, noise: f64) -> Vec<f64> {
    let mut logits: Vec<f64> = gaussian(rng, ways).into_iter().map(|z| noise * z).collect();
    logits[class] += margin;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

fn whole_image_feature(scene: &Scene, features: &[Vec<f64>], exponent: f64, background_weight: f64) -> Vec<f64> {
    let dim = scene.background.len();
    let mut acc = vec![0.0; dim];
    let mut total = 0.0;
    for (o, f) in scene.objects.iter().zip(features) {
        let w = o.bbox.area().max(1e-6).powf(exponent);
        total += w;
        for (a, x) in acc.iter_mut().zip(f) {
            *a += w * x;
        }
    }
    for (a, b) in acc.iter_mut().zip(&scene.background) {
        *a = *a / total + background_weight * b;
    }
    l2_normalized(&acc).unwrap_or_else(|| scene.background.clone())
}

/// Detections for every world image plus the training matches of one
/// simulated training run on `labelled`. Deterministic under `seed`.
pub fn simulate_detector(
    world: &SyntheticWorld,
    labelled: &BTreeSet<String>,
    params: &DetectorParams,
    seed: u64,
) -> Result<DetectorOutput> {
    let classes = world.params.classes;
    let ways = classes + 1;
    let mut labelled_idx = Vec::with_capacity(labelled.len());
    for id in labelled {
        labelled_idx.push(world.image_index(id).ok_or_else(|| Error::UnknownId(id.clone()))?);
    }
    labelled_idx.sort_unstable();

    let mut counts = vec![0usize; classes];
    for &i in &labelled_idx {
        for o in &world.images[i].objects {
            counts[o.class_id] += 1;
        }
    }
    let quality = class_quality(world, params, &counts);
    let margin = |c: usize| params.sharpness * quality[c] * (1.0 - 0.5 * world.class_difficulty[c]);

    let records = world
        .images
        .iter()
        .enumerate()
        .map(|(i, scene)| {
            let mut rng = stream_rng(seed, &[20, i as u64]);
            let mut objects = Vec::with_capacity(scene.objects.len());
            let mut features = Vec::with_capacity(scene.objects.len());
            for o in &scene.objects {
                let probs = class_probs(&mut rng, ways, o.class_id, margin(o.class_id), params.logit_noise);
                let predicted = (0..classes)
                    .max_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(b.cmp(&a)))
                    .expect("at least one class");
                let feature = perturb(&mut rng, &o.feature, params.feature_noise);
                features.push(feature.clone());
                objects.push(DetectedObject {
                    feature,
                    class_id: predicted,
                    score: probs[predicted],
                    probs,
                });
            }
            let fpn_features: Vec<Vec<f64>> = params
                .level_exponents
                .iter()
                .map(|&e| whole_image_feature(scene, &features, e, params.background_weight))
                .collect();
            let mut rec = DetectionRecord {
                image_id: scene.image_id.clone(),
                objects,
                global_feature: fpn_features.first().cloned(),
                fpn_features,
            };
            rec.sort_and_truncate(usize::MAX);
            rec
        })
        .collect();

    let mut events = Vec::new();
    let mut order = labelled_idx.clone();
    let batch = params.batch_images.max(1);
    for epoch in 0..params.epochs {
        order.shuffle(&mut stream_rng(seed, &[10, epoch as u64]));
        for chunk in order.chunks(batch) {
            let mut matches = Vec::new();
            for &i in chunk {
                let scene = &world.images[i];
                let mut rng = stream_rng(seed, &[11, epoch as u64, i as u64]);
                for o in &scene.objects {
                    let q = quality[o.class_id];
                    let d = world.class_difficulty[o.class_id];
                    let probs = class_probs(&mut rng, ways, o.class_id, margin(o.class_id), params.logit_noise);
                    let predicted = jitter_box(&mut rng, &o.bbox, params.loc_noise * (1.0 - q) * (0.2 + d));
                    // max-IoU assignment to a ground-truth box of the same image
                    let mut best = (0usize, f64::NEG_INFINITY);
                    for (g, gt) in scene.objects.iter().enumerate() {
                        let v = iou(&predicted, &gt.bbox)?;
                        if v > best.1 {
                            best = (g, v);
                        }
                    }
                    let assigned = scene.objects[best.0].class_id;
                    matches.push(MatchEvent {
                        class_id: assigned,
                        prob: probs[assigned],
                        iou: best.1,
                    });
                }
            }
            events.push(TrainingIteration {
                iter: events.len() as u64,
                matches,
            });
        }
    }

    Ok(DetectorOutput {
        records,
        events,
        quality,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::WorldParams;
    use crate::uncertainty::entropy;

    fn world() -> SyntheticWorld {
        let p = WorldParams {
            images: 200,
            scene_templates: 40,
            ..WorldParams::default()
        };
        SyntheticWorld::generate(&p, 5).unwrap()
    }

    fn ids(w: &SyntheticWorld, n: usize) -> BTreeSet<String> {
        w.images.iter().take(n).map(|s| s.image_id.clone()).collect()
    }

    #[test]
    fn no_labels_means_near_uniform_probs() {
        let w = world();
        let out = simulate_detector(&w, &BTreeSet::new(), &DetectorParams::default(), 1).unwrap();
        let max_entropy = ((w.params.classes + 1) as f64).ln();
        let mean: f64 = out.records.iter().flat_map(|r| &r.objects).map(|o| entropy(&o.probs)).sum::<f64>()
            / out.records.iter().map(|r| r.objects.len()).sum::<usize>() as f64;
        assert!(mean > 0.85 * max_entropy, "mean entropy {mean} vs max {max_entropy}");
        assert!(out.events.is_empty());
        assert!(out.quality.iter().all(|&q| q == 0.0));
    }

    #[test]
    fn easy_saturated_class_is_near_perfect() {
        let mut w = world();
        w.class_difficulty[0] = 0.0;
        let all = ids(&w, w.images.len());
        let params = DetectorParams { label_scale: 0.01, ..DetectorParams::default() };
        let out = simulate_detector(&w, &all, &params, 2).unwrap();
        assert!(out.quality[0] > 0.999);
        // noiseless reference: margin `sharpness` over C + 1 ways, perfect box
        let ways = (w.params.classes + 1) as f64;
        let p_ref = 1.0 / (1.0 + (ways - 1.0) * (-params.sharpness).exp());
        let q_ref = 1.0 - p_ref.powf(0.6);
        let matches: Vec<&MatchEvent> = out.events.iter().flat_map(|e| &e.matches).filter(|m| m.class_id == 0).collect();
        assert!(!matches.is_empty());
        assert!(matches.iter().all(|m| m.iou > 0.99));
        let qs: Vec<f64> = matches
            .iter()
            .map(|m| crate::difficulty::object_difficulty(m.prob, m.iou, 0.6).unwrap())
            .collect();
        let mean = qs.iter().sum::<f64>() / qs.len() as f64;
        assert!(mean < 1.5 * q_ref, "mean q = {mean}, reference {q_ref}");
        assert!(qs.iter().all(|&q| q < 0.1));
    }

    #[test]
    fn deterministic_under_seed() {
        let w = world();
        let l = ids(&w, 30);
        let a = simulate_detector(&w, &l, &DetectorParams::default(), 7).unwrap();
        let b = simulate_detector(&w, &l, &DetectorParams::default(), 7).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn unknown_labelled_id_rejected() {
        let w = world();
        let l: BTreeSet<String> = ["nope".to_string()].into();
        assert!(matches!(
            simulate_detector(&w, &l, &DetectorParams::default(), 0),
            Err(Error::UnknownId(_))
        ));
    }

    #[test]
    fn more_labels_never_lower_true_class_prob() {
        // common random numbers: same noise draws, larger label count
        let w = world();
        let p = DetectorParams::default();
        for c in 0..w.params.classes {
            let margin = |n: usize| {
                let mut counts = vec![0; w.params.classes];
                counts[c] = n;
                p.sharpness * class_quality(&w, &p, &counts)[c] * (1.0 - 0.5 * w.class_difficulty[c])
            };
            for seed in 0..4 {
                let mut prev = 0.0;
                for n in [0usize, 1, 2, 4, 8, 16, 32, 64] {
                    let mut rng = stream_rng(seed, &[99, c as u64]);
                    let prob = class_probs(&mut rng, w.params.classes + 1, c, margin(n), p.logit_noise)[c];
                    assert!(prob >= prev, "class {c} n {n}: {prob} < {prev}");
                    prev = prob;
                }
            }
        }
    }
}

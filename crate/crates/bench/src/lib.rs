//! Fixtures shared by the selection benchmarks.

use std::collections::BTreeSet;

use ppal_core::sim::{simulate_detector, DetectorParams, SyntheticWorld, WorldParams};
use ppal_core::{DetectionRecord, DifficultyState, EngineConfig, RoundState};

/// Detections for `images` synthetic images, a fifth of them labelled.
pub fn pool(images: usize, seed: u64) -> (Vec<DetectionRecord>, RoundState, DifficultyState) {
    let params = WorldParams {
        images,
        scene_templates: (images / 6).max(1),
        ..WorldParams::default()
    };
    let world = SyntheticWorld::generate(&params, seed).expect("valid world");
    let labelled: BTreeSet<String> = world.images.iter().step_by(5).map(|s| s.image_id.clone()).collect();
    let out = simulate_detector(&world, &labelled, &DetectorParams::default(), seed).expect("known ids");
    let unlabelled: Vec<String> = world
        .images
        .iter()
        .map(|s| s.image_id.clone())
        .filter(|id| !labelled.contains(id))
        .collect();
    let cfg = EngineConfig::default();
    let budget = (unlabelled.len() / 40).max(1);
    let round = RoundState::new(labelled, unlabelled, budget, cfg.clone()).expect("disjoint sets");
    let mut difficulty = DifficultyState::new(params.classes, cfg.m0, cfg.xi).expect("valid config");
    for it in &out.events {
        difficulty.update(&it.matches).expect("classes in range");
    }
    (out.records, round, difficulty)
}

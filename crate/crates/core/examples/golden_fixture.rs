//! Regenerates `tests/fixtures/golden40`: a 40-image synthetic pool with its
//! detections, training events, round state (10 labelled, budget 5) and the
//! difficulty state those events produce.
//!
//! cargo run -p ppal-core --example golden_fixture -- crates/core/tests/fixtures/golden40

use std::collections::BTreeSet;
use std::path::PathBuf;

use ppal_core::record::write_ndjson;
use ppal_core::sim::{simulate_detector, DetectorParams, SyntheticWorld, WorldParams};
use ppal_core::{DifficultyState, EngineConfig, RoundState};

fn main() -> ppal_core::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "golden40".into()));
    std::fs::create_dir_all(&dir).map_err(|e| ppal_core::Error::Io { path: dir.clone(), source: e })?;
    let params = WorldParams {
        classes: 5,
        rare_classes: 1,
        images: 40,
        dim: 8,
        max_objects: 4,
        scene_templates: 12,
        validation_per_class: 1,
        ..WorldParams::default()
    };
    let world = SyntheticWorld::generate(&params, 40)?;
    let labelled: BTreeSet<String> = world.images.iter().take(10).map(|s| s.image_id.clone()).collect();
    let out = simulate_detector(&world, &labelled, &DetectorParams::default(), 40)?;
    write_ndjson(&dir.join("detections.ndjson"), &out.records)?;
    write_ndjson(&dir.join("events.ndjson"), &out.events)?;

    let unlabelled = world.images.iter().skip(10).map(|s| s.image_id.clone());
    RoundState::new(labelled.iter().cloned(), unlabelled, 5, EngineConfig::default())?.save(&dir.join("round.json"))?;
    let mut difficulty = DifficultyState::new(params.classes, 0.99, 0.6)?;
    for it in &out.events {
        difficulty.update(&it.matches)?;
    }
    difficulty.save(&dir.join("difficulty.json"))
}

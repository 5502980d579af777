//! Desk-scale synthetic harness: a multi-object world, a mock detector whose
//! per-class quality grows with labelled data, the closed-loop benchmark, the
//! retrieval-correlation experiment, and exhaustive oracles for tests.

mod bench;
mod detector;
mod oracle;
mod retrieval;
mod stats;
mod world;

pub use bench::{run_al_benchmark, BenchConfig, BenchReport, BenchRow, PROBE_NOTE};
pub use detector::{simulate_detector, DetectorOutput, DetectorParams};
pub use oracle::{brute_force_k_center, brute_force_min_max_subset, MAX_BRUTE_FORCE_POINTS};
pub use retrieval::{
    retrieval_correlation, retrieval_pool, run_retrieval_bench, AnchorStat, RetrievalBenchConfig,
    RetrievalBenchReport, RetrievalReport, RetrievalSeedResult,
};
pub use stats::{jaccard, spearman};
pub use world::{GtObject, Scene, SyntheticWorld, WorldParams};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for a `(seed, tags...)` stream.
pub(crate) fn stream_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut h = seed ^ 0x243F_6A88_85A3_08D3;
    for &t in tags {
        h = splitmix(h ^ splitmix(t));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

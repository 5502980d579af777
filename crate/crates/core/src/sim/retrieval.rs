//! Retrieval correlation: does a similarity that retrieves close images also
//! retrieve images sharing object categories?

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detector::{simulate_detector, DetectorParams};
use super::stats::{jaccard, spearman};
use super::world::{SyntheticWorld, WorldParams};
use crate::config::SimilarityKind;
use crate::error::{Error, Result};
use crate::record::DetectionRecord;
use crate::similarity::similarity_matrix;

pub const NORMALIZATION: &str = "min-max over all retrieved similarities";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorStat {
    pub image_id: String,
    /// Mean similarity of the top-k neighbours, min-max normalized.
    pub similarity: f64,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub kind: SimilarityKind,
    pub k: usize,
    pub normalization: String,
    pub anchors: Vec<AnchorStat>,
    /// `None` when either column is constant.
    pub spearman: Option<f64>,
}

impl RetrievalReport {
    pub fn mean_jaccard(&self) -> f64 {
        self.anchors.iter().map(|a| a.jaccard).sum::<f64>() / self.anchors.len() as f64
    }
}

/// For each anchor, retrieves the `k` most similar other images (ties to the
/// lower index) and pairs the mean similarity with the mean category Jaccard.
pub fn retrieval_correlation(
    records: &[DetectionRecord],
    categories: &[BTreeSet<usize>],
    k: usize,
    kind: SimilarityKind,
) -> Result<RetrievalReport> {
    let n = records.len();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k = {k} must be in 1..{n}")));
    }
    if categories.len() != n {
        return Err(Error::invalid(format!(
            "{} category sets for {n} records",
            categories.len()
        )));
    }
    let sim = similarity_matrix(records, kind)?;
    let mut raw = Vec::with_capacity(n);
    let mut jac = Vec::with_capacity(n);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        let row = sim.row(i);
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let top = &order[..k];
        raw.push(top.iter().map(|&j| row[j]).sum::<f64>() / k as f64);
        jac.push(top.iter().map(|&j| jaccard(&categories[i], &categories[j])).sum::<f64>() / k as f64);
    }
    // a global affine map leaves rank correlation untouched
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let normalized: Vec<f64> = raw
        .iter()
        .map(|&s| if hi > lo { (s - lo) / (hi - lo) } else { 0.5 })
        .collect();
    Ok(RetrievalReport {
        kind,
        k,
        normalization: NORMALIZATION.to_string(),
        spearman: spearman(&normalized, &jac),
        anchors: records
            .iter()
            .zip(normalized.into_iter().zip(jac))
            .map(|(r, (similarity, jaccard))| AnchorStat {
                image_id: r.image_id.clone(),
                similarity,
                jaccard,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalBenchConfig {
    pub seeds: Vec<u64>,
    pub k: usize,
    /// Images labelled for the simulated detector before retrieval.
    pub labelled: usize,
    pub world: WorldParams,
    pub detector: DetectorParams,
}

impl Default for RetrievalBenchConfig {
    fn default() -> Self {
        RetrievalBenchConfig {
            seeds: vec![0, 1, 2],
            k: 20,
            labelled: 100,
            world: WorldParams {
                images: 300,
                scene_templates: 60,
                ..WorldParams::default()
            },
            detector: DetectorParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSeedResult {
    pub seed: u64,
    pub ccms: RetrievalReport,
    pub global: RetrievalReport,
    /// CCMS Spearman minus global Spearman; `None` if either is undefined.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalBenchReport {
    pub config: RetrievalBenchConfig,
    pub results: Vec<RetrievalSeedResult>,
    pub mean_gap: Option<f64>,
}

impl RetrievalBenchReport {
    pub const CSV_HEADER: &'static str = "seed,ccms_spearman,global_spearman,gap";

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.results {
            let _ = writeln!(out, "{},{},{},{}", r.seed, fmt(r.ccms.spearman), fmt(r.global.spearman), fmt(r.gap));
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
}

/// Detections for one seed's world, with ground-truth category sets.
pub fn retrieval_pool(cfg: &RetrievalBenchConfig, seed: u64) -> Result<(Vec<DetectionRecord>, Vec<BTreeSet<usize>>)> {
    let world = SyntheticWorld::generate(&cfg.world, seed)?;
    if cfg.labelled > world.images.len() {
        return Err(Error::invalid("more labelled images than the world holds"));
    }
    let labelled: BTreeSet<String> = world.images[..cfg.labelled].iter().map(|s| s.image_id.clone()).collect();
    let out = simulate_detector(&world, &labelled, &cfg.detector, seed)?;
    let categories = world.images.iter().map(|s| s.categories()).collect();
    Ok((out.records, categories))
}

/// Runs CCMS and global retrieval per seed. With `dump_dir`, each seed's CCMS
/// matrix is also written there as `ccms_<seed>.bin` plus an id sidecar.
pub fn run_retrieval_bench(cfg: &RetrievalBenchConfig, dump_dir: Option<&Path>) -> Result<RetrievalBenchReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::invalid("retrieval bench needs at least one seed"));
    }
    let mut results = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (records, categories) = retrieval_pool(cfg, seed)?;
        if let Some(dir) = dump_dir {
            let m = similarity_matrix(&records, SimilarityKind::Ccms)?;
            m.write_binary(&dir.join(format!("ccms_{seed}.bin")), &dir.join(format!("ccms_{seed}.ids.json")))?;
        }
        let ccms = retrieval_correlation(&records, &categories, cfg.k, SimilarityKind::Ccms)?;
        let global = retrieval_correlation(&records, &categories, cfg.k, SimilarityKind::Global)?;
        let gap = ccms.spearman.zip(global.spearman).map(|(a, b)| a - b);
        results.push(RetrievalSeedResult { seed, ccms, global, gap });
    }
    let gaps: Option<Vec<f64>> = results.iter().map(|r| r.gap).collect();
    let mean_gap = gaps.map(|g| g.iter().sum::<f64>() / g.len() as f64);
    Ok(RetrievalBenchReport {
        config: cfg.clone(),
        results,
        mean_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::DetectedObject;

    fn rec(id: &str, objs: &[(usize, [f64; 2])]) -> DetectionRecord {
        DetectionRecord {
            image_id: id.into(),
            objects: objs
                .iter()
                .map(|&(c, f)| DetectedObject {
                    feature: crate::record::l2_normalized(&f).unwrap(),
                    class_id: c,
                    score: 0.9,
                    probs: vec![0.9, 0.1],
                })
                .collect(),
            global_feature: None,
            fpn_features: Vec::new(),
        }
    }

    #[test]
    fn exact_duplicates_give_jaccard_one_at_k1() {
        let records = vec![
            rec("a", &[(0, [1.0, 0.0])]),
            rec("a2", &[(0, [1.0, 0.0])]),
            rec("b", &[(1, [0.0, 1.0]), (2, [1.0, 1.0])]),
            rec("b2", &[(1, [0.0, 1.0]), (2, [1.0, 1.0])]),
        ];
        let cats: Vec<BTreeSet<usize>> = records.iter().map(|r| r.objects.iter().map(|o| o.class_id).collect()).collect();
        for kind in [SimilarityKind::Ccms, SimilarityKind::Global] {
            let r = retrieval_correlation(&records, &cats, 1, kind).unwrap();
            assert_eq!(r.mean_jaccard(), 1.0);
        }
    }

    #[test]
    fn single_class_pool_has_unit_jaccard() {
        let records: Vec<_> = (0..5).map(|i| rec(&format!("i{i}"), &[(3, [1.0, i as f64])])).collect();
        let cats = vec![BTreeSet::from([3]); 5];
        for kind in [SimilarityKind::Ccms, SimilarityKind::Global] {
            let r = retrieval_correlation(&records, &cats, 2, kind).unwrap();
            assert!(r.anchors.iter().all(|a| a.jaccard == 1.0));
            assert!(r.anchors.iter().all(|a| (0.0..=1.0).contains(&a.similarity)));
        }
    }

    #[test]
    fn k_bounds() {
        let records: Vec<_> = (0..3).map(|i| rec(&format!("i{i}"), &[(0, [1.0, i as f64])])).collect();
        let cats = vec![BTreeSet::from([0]); 3];
        assert!(retrieval_correlation(&records, &cats, 0, SimilarityKind::Ccms).is_err());
        assert!(retrieval_correlation(&records, &cats, 3, SimilarityKind::Ccms).is_err());
        assert!(retrieval_correlation(&records, &cats[..2], 1, SimilarityKind::Ccms).is_err());
    }

    #[test]
    fn bench_is_reproducible() {
        let cfg = RetrievalBenchConfig {
            seeds: vec![1],
            k: 5,
            labelled: 20,
            world: WorldParams {
                images: 60,
                scene_templates: 15,
                validation_per_class: 1,
                ..WorldParams::default()
            },
            ..RetrievalBenchConfig::default()
        };
        let a = run_retrieval_bench(&cfg, None).unwrap();
        let b = run_retrieval_bench(&cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv().lines().count(), 2);
    }
}

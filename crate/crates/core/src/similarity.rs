//! Image-to-image similarities over detection records.
//!
//! The main measure is category-conditioned matching: every object of one
//! image is matched to its most similar same-class object in the other image
//! (shifted cosine, so a match scores in `[0, 2]` and "no same-class
//! counterpart" scores 0). The per-object scores are averaged with detection
//! score weights, and the two directions are averaged for symmetry.
//!
//! Weighted sums are accumulated in a canonical (sorted) term order so every
//! value is independent of the order objects are listed in.

use std::borrow::Borrow;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimilarityKind;
use crate::error::{Error, Result};
use crate::record::{l2_normalized, DetectedObject, DetectionRecord};

/// Floor applied to probability entries before the KL affinity.
pub const KL_EPSILON: f64 = 1e-8;

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `cos + 1` for unit vectors, clamped to `[0, 2]`.
#[inline]
fn shifted_cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0) + 1.0
}

fn canonical_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Score-weighted mean of per-object match values `s(o, other)`.
fn directed_by<F>(a: &DetectionRecord, b: &DetectionRecord, affinity: F) -> f64
where
    F: Fn(&DetectedObject, &DetectedObject) -> f64,
{
    if a.objects.is_empty() {
        return 0.0;
    }
    let total_score = canonical_sum(a.objects.iter().map(|o| o.score).collect());
    if total_score <= 0.0 {
        return 0.0;
    }
    let weighted: Vec<f64> = a
        .objects
        .iter()
        .map(|oa| {
            let best = b
                .objects
                .iter()
                .filter(|ob| ob.class_id == oa.class_id)
                .map(|ob| affinity(oa, ob))
                .fold(0.0_f64, f64::max);
            oa.score * best
        })
        .collect();
    canonical_sum(weighted) / total_score
}

/// How similar `a` looks from `a`'s side: each of its objects matched into `b`.
pub fn ccms_directed(a: &DetectionRecord, b: &DetectionRecord) -> f64 {
    directed_by(a, b, |x, y| shifted_cosine(&x.feature, &y.feature))
}

/// Symmetric category-conditioned matching similarity in `[0, 2]`.
pub fn ccms(a: &DetectionRecord, b: &DetectionRecord) -> f64 {
    0.5 * (ccms_directed(a, b) + ccms_directed(b, a))
}

fn floored(p: &[f64]) -> Vec<f64> {
    let v: Vec<f64> = p.iter().map(|&x| x.max(KL_EPSILON)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| a * (a / b).ln()).sum()
}

/// `exp(-(KL(p‖q) + KL(q‖p)) / 2)` after flooring both vectors at
/// [`KL_EPSILON`]. Vectors of different lengths have affinity 0.
pub fn kl_affinity(p: &[f64], q: &[f64]) -> f64 {
    if p.len() != q.len() || p.is_empty() {
        return 0.0;
    }
    let (p, q) = (floored(p), floored(q));
    let sym = 0.5 * (kl(&p, &q) + kl(&q, &p));
    (-sym.max(0.0)).exp()
}

/// Matching similarity over classification probability vectors, for
/// detectors whose object features are not comparable across levels.
pub fn kl_similarity(a: &DetectionRecord, b: &DetectionRecord) -> f64 {
    let directed = |x: &DetectionRecord, y: &DetectionRecord| {
        directed_by(x, y, |o1, o2| kl_affinity(&o1.probs, &o2.probs))
    };
    0.5 * (directed(a, b) + directed(b, a))
}

/// Shifted cosine of two whole-image features, in `[0, 2]`.
pub fn global_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("global features differ in dimension"));
    }
    let a = l2_normalized(a).ok_or_else(|| Error::invalid("zero global feature"))?;
    let b = l2_normalized(b).ok_or_else(|| Error::invalid("zero global feature"))?;
    Ok(shifted_cosine(&a, &b))
}

/// The record's whole-image feature, falling back to the normalized mean of
/// its object features.
pub fn image_feature(record: &DetectionRecord) -> Result<Vec<f64>> {
    if let Some(g) = &record.global_feature {
        return l2_normalized(g).ok_or_else(|| Error::invalid("zero global feature"));
    }
    let first = record
        .objects
        .first()
        .ok_or_else(|| Error::MissingFeature(record.image_id.clone(), "global"))?;
    let mut mean = vec![0.0; first.feature.len()];
    for o in &record.objects {
        for (m, x) in mean.iter_mut().zip(&o.feature) {
            *m += x;
        }
    }
    l2_normalized(&mean).ok_or_else(|| Error::MissingFeature(record.image_id.clone(), "global"))
}

/// Per-level shifted cosine averaged over feature-pyramid levels.
pub fn fpn_similarity(a: &DetectionRecord, b: &DetectionRecord) -> Result<f64> {
    for r in [a, b] {
        if r.fpn_features.is_empty() {
            return Err(Error::MissingFeature(r.image_id.clone(), "fpn"));
        }
    }
    if a.fpn_features.len() != b.fpn_features.len() {
        return Err(Error::invalid("records carry different numbers of fpn levels"));
    }
    let mut sims = Vec::with_capacity(a.fpn_features.len());
    for (x, y) in a.fpn_features.iter().zip(&b.fpn_features) {
        sims.push(global_similarity(x, y)?);
    }
    Ok(sims.iter().sum::<f64>() / sims.len() as f64)
}

/// Dense symmetric similarity matrix over a candidate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub n: usize,
    /// Row-major `n * n` values.
    pub values: Vec<f64>,
    pub ids: Vec<String>,
}

impl SimilarityMatrix {
    /// Builds a matrix from explicit rows. Rows must be square and symmetric.
    pub fn from_rows(rows: Vec<Vec<f64>>, ids: Option<Vec<String>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::invalid("similarity matrix must be non-empty"));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("similarity matrix must be square"));
        }
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        for i in 0..n {
            for j in 0..i {
                if values[i * n + j] != values[j * n + i] {
                    return Err(Error::invalid(format!("similarity matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        let ids = ids.unwrap_or_else(|| (0..n).map(|i| i.to_string()).collect());
        if ids.len() != n {
            return Err(Error::invalid("id list length does not match matrix size"));
        }
        Ok(SimilarityMatrix { n, values, ids })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// Distance used by the diversity stage: `2 - sim`.
    #[inline]
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        2.0 - self.get(i, j)
    }

    /// Writes `n` (u32 LE), a reserved u32, then row-major f32 LE values, plus
    /// a JSON id list next to it.
    pub fn write_binary(&self, matrix_path: &Path, ids_path: &Path) -> Result<()> {
        let n = u32::try_from(self.n).map_err(|_| Error::invalid("matrix too large to dump"))?;
        let file = File::create(matrix_path).map_err(|e| Error::io(matrix_path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(matrix_path, e);
        w.write_all(&n.to_le_bytes()).map_err(io)?;
        w.write_all(&0u32.to_le_bytes()).map_err(io)?;
        for &v in &self.values {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)?;
        let mut ids = serde_json::to_string(&self.ids)?;
        ids.push('\n');
        std::fs::write(ids_path, ids).map_err(|e| Error::io(ids_path, e))
    }

    pub fn read_binary(matrix_path: &Path, ids_path: &Path) -> Result<Self> {
        let file = File::open(matrix_path).map_err(|e| Error::io(matrix_path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(matrix_path, e);
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(io)?;
        let n = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word).map_err(io)?;
        let mut values = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            r.read_exact(&mut word).map_err(io)?;
            values.push(f32::from_le_bytes(word) as f64);
        }
        let text = std::fs::read_to_string(ids_path).map_err(|e| Error::io(ids_path, e))?;
        let ids: Vec<String> = serde_json::from_str(&text)?;
        if ids.len() != n {
            return Err(Error::invalid("id sidecar length does not match matrix size"));
        }
        Ok(SimilarityMatrix { n, values, ids })
    }
}

fn fill_symmetric<F>(n: usize, pair: F) -> Result<Vec<f64>>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| pair(i, j)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(values)
}

/// All-pairs similarity over `pool`, in pool order.
pub fn similarity_matrix<R>(pool: &[R], kind: SimilarityKind) -> Result<SimilarityMatrix>
where
    R: Borrow<DetectionRecord> + Sync,
{
    let pool: Vec<&DetectionRecord> = pool.iter().map(Borrow::borrow).collect();
    let n = pool.len();
    if n == 0 {
        return Err(Error::invalid("similarity matrix needs a non-empty pool"));
    }
    let values = match kind {
        SimilarityKind::Ccms => fill_symmetric(n, |i, j| Ok(ccms(pool[i], pool[j])))?,
        SimilarityKind::Kl => fill_symmetric(n, |i, j| Ok(kl_similarity(pool[i], pool[j])))?,
        SimilarityKind::Fpn => fill_symmetric(n, |i, j| fpn_similarity(pool[i], pool[j]))?,
        SimilarityKind::Global => {
            let feats: Vec<Vec<f64>> = pool.iter().map(|r| image_feature(r)).collect::<Result<_>>()?;
            if feats.iter().any(|f| f.len() != feats[0].len()) {
                return Err(Error::invalid("global features differ in dimension"));
            }
            fill_symmetric(n, |i, j| Ok(shifted_cosine(&feats[i], &feats[j])))?
        }
    };
    Ok(SimilarityMatrix {
        n,
        values,
        ids: pool.iter().map(|r| r.image_id.clone()).collect(),
    })
}

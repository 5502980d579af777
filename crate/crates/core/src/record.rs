//! Detection dumps and training-event streams.
//!
//! Both files are NDJSON. A detection dump holds one image per line:
//!
//! ```text
//! {"image_id": "000123", "objects": [{"feature": [..], "class": 3, "score": 0.91, "probs": [..]}]}
//! ```
//!
//! `probs` may be omitted for one-stage detectors, in which case the two-way
//! vector `(score, 1 - score)` is used. Records may additionally carry a
//! `global_feature` vector and a list of per-level `fpn_features` for the
//! whole-image similarity baselines.
//!
//! A training-event stream holds one detector iteration per line:
//!
//! ```text
//! {"iter": 17, "matches": [{"class": 3, "prob": 0.42, "iou": 0.77}]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_SUM_TOLERANCE: f64 = 1e-3;

/// One detected object: appearance feature, predicted class, detection score
/// and the classification distribution it was scored with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub feature: Vec<f64>,
    #[serde(rename = "class")]
    pub class_id: usize,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probs: Vec<f64>,
}

/// All detections of one image, sorted by descending score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub objects: Vec<DetectedObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fpn_features: Vec<Vec<f64>>,
}

impl DetectionRecord {
    pub fn new(image_id: impl Into<String>, objects: Vec<DetectedObject>) -> Self {
        DetectionRecord {
            image_id: image_id.into(),
            objects,
            global_feature: None,
            fpn_features: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Score-sorts the objects (stable) and keeps at most `cap` of them.
    pub fn sort_and_truncate(&mut self, cap: usize) {
        self.objects
            .sort_by(|a, b| b.score.total_cmp(&a.score));
        self.objects.truncate(cap);
    }
}

/// A matched prediction seen during detector training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchEvent {
    #[serde(rename = "class")]
    pub class_id: usize,
    /// Classification probability of the assigned ground-truth class.
    pub prob: f64,
    /// IoU between the prediction and its assigned ground-truth box.
    pub iou: f64,
}

/// All matches of one training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingIteration {
    pub iter: u64,
    pub matches: Vec<MatchEvent>,
}

/// Returns `v / ‖v‖₂`, or `None` for a zero (or non-finite) norm.
pub fn l2_normalized(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| x / norm).collect())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Streams an NDJSON source, handing each parsed line with its 1-based line
/// number to `f`. Blank lines are skipped.
pub fn for_each_ndjson<T, R, F>(reader: R, path: &Path, mut f: F) -> Result<()>
where
    T: DeserializeOwned,
    R: BufRead,
    F: FnMut(usize, T) -> Result<()>,
{
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        f(line_no, value)?;
    }
    Ok(())
}

struct DimCheck {
    expected: Option<usize>,
}

impl DimCheck {
    fn check(&mut self, line: usize, found: usize) -> Result<()> {
        match self.expected {
            None => {
                self.expected = Some(found);
                Ok(())
            }
            Some(expected) if expected == found => Ok(()),
            Some(expected) => Err(Error::DimensionMismatch {
                line,
                expected,
                found,
            }),
        }
    }
}

fn normalize_in_place(v: &mut Vec<f64>, line: usize) -> Result<()> {
    *v = l2_normalized(v).ok_or(Error::ZeroNorm { line })?;
    Ok(())
}

fn validate_object(obj: &mut DetectedObject, line: usize) -> Result<()> {
    let parse_err = |message: String| Error::Parse { line, message };
    if !(0.0..=1.0).contains(&obj.score) {
        return Err(parse_err(format!("score {} outside [0, 1]", obj.score)));
    }
    if obj.probs.is_empty() {
        obj.probs = vec![obj.score, 1.0 - obj.score];
    }
    if obj.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(parse_err("probability entry outside [0, 1]".into()));
    }
    let sum: f64 = obj.probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(parse_err(format!("probabilities sum to {sum}, expected 1")));
    }
    for p in &mut obj.probs {
        *p /= sum;
    }
    normalize_in_place(&mut obj.feature, line)
}

/// Reads a detection dump.
///
/// Object and image-level features are L2-normalized, objects are sorted by
/// descending score and capped at `max_objects`. Records keep file order.
pub fn ingest_detections(path: &Path, max_objects: usize) -> Result<Vec<DetectionRecord>> {
    read_detections(open(path)?, path, max_objects)
}

pub fn read_detections<R: BufRead>(
    reader: R,
    path: &Path,
    max_objects: usize,
) -> Result<Vec<DetectionRecord>> {
    let mut records = Vec::new();
    let mut object_dim = DimCheck { expected: None };
    let mut global_dim = DimCheck { expected: None };
    for_each_ndjson(reader, path, |line, mut rec: DetectionRecord| {
        for obj in &mut rec.objects {
            object_dim.check(line, obj.feature.len())?;
            validate_object(obj, line)?;
        }
        if let Some(g) = rec.global_feature.as_mut() {
            global_dim.check(line, g.len())?;
            normalize_in_place(g, line)?;
        }
        for level in &mut rec.fpn_features {
            normalize_in_place(level, line)?;
        }
        rec.sort_and_truncate(max_objects);
        records.push(rec);
        Ok(())
    })?;
    Ok(records)
}

/// Reads a training-event stream in full.
pub fn read_training_events(path: &Path) -> Result<Vec<TrainingIteration>> {
    let mut out = Vec::new();
    stream_training_events(path, |it| {
        out.push(it);
        Ok(())
    })?;
    Ok(out)
}

/// Streams a training-event file, validating each match's ranges.
pub fn stream_training_events<F>(path: &Path, mut f: F) -> Result<()>
where
    F: FnMut(TrainingIteration) -> Result<()>,
{
    for_each_ndjson(open(path)?, path, |line, it: TrainingIteration| {
        for m in &it.matches {
            if !(0.0..=1.0).contains(&m.prob) || !(0.0..=1.0).contains(&m.iou) {
                return Err(Error::Parse {
                    line,
                    message: "match prob and iou must lie in [0, 1]".into(),
                });
            }
        }
        f(it).map_err(|e| match e {
            Error::ClassOutOfRange { class, classes } => Error::Parse {
                line,
                message: format!("class id {class} out of range for {classes} classes"),
            },
            other => other,
        })
    })
}

/// Writes any serializable sequence as NDJSON.
pub fn write_ndjson<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn parse(text: &str, cap: usize) -> Result<Vec<DetectionRecord>> {
        read_detections(text.as_bytes(), Path::new("<mem>"), cap)
    }

    #[test]
    fn two_valid_lines_are_normalized() {
        let text = concat!(
            r#"{"image_id": "a", "objects": [{"feature": [3, 4], "class": 0, "score": 0.9, "probs": [0.5, 0.5]}]}"#,
            "\n",
            r#"{"image_id": "b", "objects": [{"feature": [0, 2], "class": 1, "score": 0.4, "probs": [0.1, 0.9]}]}"#,
            "\n"
        );
        let recs = parse(text, 100).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].image_id, "a");
        for r in &recs {
            for o in &r.objects {
                let n: f64 = o.feature.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(recs[0].objects[0].feature, vec![0.6, 0.8]);
    }

    #[test]
    fn empty_file_gives_no_records() {
        assert!(parse("", 100).unwrap().is_empty());
        assert!(parse("\n\n", 100).unwrap().is_empty());
    }

    #[test]
    fn truncates_to_highest_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scores: Vec<f64> = (0..150).map(|_| rng.random::<f64>()).collect();
        let objects: Vec<String> = scores
            .iter()
            .map(|s| format!(r#"{{"feature": [1, 0], "class": 0, "score": {s}}}"#))
            .collect();
        let line = format!(r#"{{"image_id": "x", "objects": [{}]}}"#, objects.join(","));
        let recs = parse(&line, 100).unwrap();
        let kept: Vec<f64> = recs[0].objects.iter().map(|o| o.score).collect();

        // oracle: sort a copy descending and take the first 100
        let mut expected = scores.clone();
        expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
        expected.truncate(100);
        assert_eq!(kept, expected);
    }

    #[test]
    fn missing_probs_become_binary() {
        let line = r#"{"image_id": "x", "objects": [{"feature": [1], "class": 4, "score": 0.75}]}"#;
        let recs = parse(line, 10).unwrap();
        assert_eq!(recs[0].objects[0].probs, vec![0.75, 0.25]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"image_id\": \"a\", \"objects\": []}\n{not json\n";
        match parse(text, 10) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_and_zero_norm_rejected() {
        let text = concat!(
            r#"{"image_id": "a", "objects": [{"feature": [1, 0], "class": 0, "score": 0.5}]}"#,
            "\n",
            r#"{"image_id": "b", "objects": [{"feature": [1, 0, 0], "class": 0, "score": 0.5}]}"#,
        );
        assert!(matches!(
            parse(text, 10),
            Err(Error::DimensionMismatch { line: 2, expected: 2, found: 3 })
        ));
        let zero = r#"{"image_id": "a", "objects": [{"feature": [0, 0], "class": 0, "score": 0.5}]}"#;
        assert!(matches!(parse(zero, 10), Err(Error::ZeroNorm { line: 1 })));
    }

    #[test]
    fn bad_probability_vectors_rejected() {
        let line = r#"{"image_id": "a", "objects": [{"feature": [1], "class": 0, "score": 0.5, "probs": [0.5, 0.6]}]}"#;
        assert!(matches!(parse(line, 10), Err(Error::Parse { line: 1, .. })));
        let line = r#"{"image_id": "a", "objects": [{"feature": [1], "class": 0, "score": 1.5}]}"#;
        assert!(parse(line, 10).is_err());
    }

    #[test]
    fn ingest_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ndjson");
        std::fs::write(
            &path,
            r#"{"image_id": "a", "objects": [{"feature": [1, 2], "class": 0, "score": 0.2}, {"feature": [2, 1], "class": 1, "score": 0.8}]}"#,
        )
        .unwrap();
        let first = ingest_detections(&path, 100).unwrap();
        let second = ingest_detections(&path, 100).unwrap();
        assert_eq!(first, second);
        assert_eq!(first[0].objects[0].class_id, 1);
    }

    #[test]
    fn training_events_validate_ranges() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.ndjson");
        std::fs::write(
            &path,
            "{\"iter\": 0, \"matches\": [{\"class\": 0, \"prob\": 0.5, \"iou\": 0.8}]}\n{\"iter\": 1, \"matches\": [{\"class\": 0, \"prob\": 1.5, \"iou\": 0.8}]}\n",
        )
        .unwrap();
        assert!(matches!(
            read_training_events(&path),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}

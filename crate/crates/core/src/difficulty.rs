//! Per-class training difficulty tracking and the difficulty coefficients
//! derived from it.
//!
//! During detector training every matched prediction gets a difficulty
//! `q = 1 - prob^xi * iou^(1 - xi)`. Per class, the batch mean of `q` is folded
//! into an exponential moving average whose momentum resets to `m0` whenever
//! the class is present and decays geometrically (`m <- m0 * m`) while it is
//! absent, so rarely seen classes catch up faster once they show up.
//!
//! At sampling time a difficulty `d ∈ [0, 1]` maps to the weight
//! `w = 1 + alpha * beta * ln(1 + gamma * d)` with `gamma = e^(1/alpha) - 1`,
//! which spans exactly `[1, 1 + beta]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::MatchEvent;

/// Axis-aligned box in corner convention `(x1, y1, x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        b.check()?;
        Ok(b)
    }

    fn check(&self) -> Result<()> {
        if self.x1 <= self.x2 && self.y1 <= self.y2 {
            Ok(())
        } else {
            Err(Error::invalid(format!("inverted box corners {self:?}")))
        }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.check()?;
    b.check()?;
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} = {v} outside [0, 1]")))
    }
}

/// Training difficulty of one matched prediction.
pub fn object_difficulty(prob: f64, iou: f64, xi: f64) -> Result<f64> {
    check_unit("prob", prob)?;
    check_unit("iou", iou)?;
    check_unit("xi", xi)?;
    Ok(difficulty_unchecked(prob, iou, xi))
}

// powf(0, 0) == 1, which is the convention wanted at the xi endpoints.
#[inline]
fn difficulty_unchecked(prob: f64, iou: f64, xi: f64) -> f64 {
    (1.0 - prob.powf(xi) * iou.powf(1.0 - xi)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyState {
    pub difficulties: Vec<f64>,
    pub momenta: Vec<f64>,
    pub m0: f64,
    pub xi: f64,
}

impl DifficultyState {
    /// Fresh state: every difficulty 1, every momentum `m0`.
    pub fn new(classes: usize, m0: f64, xi: f64) -> Result<Self> {
        if classes == 0 {
            return Err(Error::invalid("at least one class is required"));
        }
        if !(m0 > 0.0 && m0 < 1.0) {
            return Err(Error::invalid("m0 must lie in (0, 1)"));
        }
        check_unit("xi", xi)?;
        Ok(DifficultyState {
            difficulties: vec![1.0; classes],
            momenta: vec![m0; classes],
            m0,
            xi,
        })
    }

    pub fn classes(&self) -> usize {
        self.difficulties.len()
    }

    /// Start-of-round reset.
    pub fn reset_round(&mut self) {
        self.difficulties.iter_mut().for_each(|d| *d = 1.0);
        let m0 = self.m0;
        self.momenta.iter_mut().for_each(|m| *m = m0);
    }

    /// Folds one training iteration's matches into the tracker.
    pub fn update(&mut self, matches: &[MatchEvent]) -> Result<()> {
        let classes = self.classes();
        let mut sums = vec![0.0; classes];
        let mut counts = vec![0usize; classes];
        for m in matches {
            if m.class_id >= classes {
                return Err(Error::ClassOutOfRange {
                    class: m.class_id,
                    classes,
                });
            }
            sums[m.class_id] += object_difficulty(m.prob, m.iou, self.xi)?;
            counts[m.class_id] += 1;
        }
        for c in 0..classes {
            let m = self.momenta[c];
            if counts[c] > 0 {
                let mean = sums[c] / counts[c] as f64;
                self.difficulties[c] = (m * self.difficulties[c] + (1.0 - m) * mean).clamp(0.0, 1.0);
                self.momenta[c] = self.m0;
            } else {
                self.momenta[c] = (self.m0 * m).max(f64::MIN_POSITIVE);
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.difficulties.is_empty() || self.difficulties.len() != self.momenta.len() {
            return Err(Error::invalid(
                "difficulties and momenta must be non-empty and of equal length",
            ));
        }
        if !(self.m0 > 0.0 && self.m0 < 1.0) {
            return Err(Error::invalid("m0 must lie in (0, 1)"));
        }
        check_unit("xi", self.xi)?;
        for &d in &self.difficulties {
            check_unit("difficulty", d)?;
        }
        if self.momenta.iter().any(|&m| !(m > 0.0 && m <= self.m0)) {
            return Err(Error::invalid("momenta must lie in (0, m0]"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let state: DifficultyState = serde_json::from_str(&text)?;
        state.validate()?;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Functional form of [`DifficultyState::update`].
pub fn update_difficulties(state: &DifficultyState, matches: &[MatchEvent]) -> Result<DifficultyState> {
    let mut next = state.clone();
    next.update(matches)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyCoefficients {
    pub weights: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl DifficultyCoefficients {
    /// All weights 1: plain summed uncertainty.
    pub fn uniform(classes: usize) -> Self {
        DifficultyCoefficients {
            weights: vec![1.0; classes],
            alpha: 1.0,
            beta: 0.0,
            gamma: std::f64::consts::E - 1.0,
        }
    }

    pub fn weight(&self, class: usize) -> Result<f64> {
        self.weights
            .get(class)
            .copied()
            .ok_or(Error::ClassOutOfRange {
                class,
                classes: self.weights.len(),
            })
    }
}

/// Maps a difficulty in `[0, 1]` to its coefficient in `[1, 1 + beta]`.
///
/// The log term is divided by its own value at `d = 1` (which is 1 in exact
/// arithmetic) so that both endpoints come out exact in floating point.
pub fn coefficient(d: f64, alpha: f64, beta: f64) -> f64 {
    let gamma = (1.0 / alpha).exp_m1();
    let full = alpha * gamma.ln_1p();
    1.0 + beta * (alpha * (gamma * d).ln_1p()) / full
}

pub fn difficulty_coefficients(
    state: &DifficultyState,
    alpha: f64,
    beta: f64,
) -> Result<DifficultyCoefficients> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha must be positive"));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid("beta must be positive"));
    }
    Ok(DifficultyCoefficients {
        weights: state
            .difficulties
            .iter()
            .map(|&d| coefficient(d, alpha, beta))
            .collect(),
        alpha,
        beta,
        gamma: (1.0 / alpha).exp_m1(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(class_id: usize, prob: f64, iou: f64) -> MatchEvent {
        MatchEvent { class_id, prob, iou }
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = BBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
        let far = BBox::new(5.0, 5.0, 6.0, 6.0).unwrap();
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &far).unwrap(), 0.0);
        // inter = 1, union = 4 + 4 - 1
        assert!((iou(&a, &b).unwrap() - 1.0 / 7.0).abs() < 1e-15);
        let point = BBox::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(iou(&point, &point).unwrap(), 0.0);
    }

    #[test]
    fn inverted_box_is_an_error() {
        assert!(BBox::new(2.0, 0.0, 1.0, 1.0).is_err());
        let bad = BBox { x1: 0.0, y1: 3.0, x2: 1.0, y2: 1.0 };
        assert!(iou(&bad, &bad).is_err());
    }

    #[test]
    fn object_difficulty_examples() {
        assert_eq!(object_difficulty(1.0, 1.0, 0.6).unwrap(), 0.0);
        assert_eq!(object_difficulty(0.0, 0.3, 0.6).unwrap(), 1.0);
        let q = object_difficulty(0.5, 0.8, 0.6).unwrap();
        assert!((q - 0.396_582_366_345_483_7).abs() < 1e-12);
        // 0^0 convention at the endpoints of xi
        assert_eq!(object_difficulty(0.0, 0.5, 0.0).unwrap(), 0.5);
        assert_eq!(object_difficulty(0.5, 0.0, 1.0).unwrap(), 0.5);
        assert!(object_difficulty(1.2, 0.5, 0.6).is_err());
    }

    #[test]
    fn difficulty_is_monotone_on_a_grid() {
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        for &xi in &[0.0, 0.3, 0.6, 1.0] {
            for w in grid.windows(2) {
                for &other in &grid {
                    let lo = object_difficulty(w[0], other, xi).unwrap();
                    let hi = object_difficulty(w[1], other, xi).unwrap();
                    assert!(hi <= lo, "prob monotonicity at xi={xi}");
                    let lo = object_difficulty(other, w[0], xi).unwrap();
                    let hi = object_difficulty(other, w[1], xi).unwrap();
                    assert!(hi <= lo, "iou monotonicity at xi={xi}");
                }
            }
        }
    }

    #[test]
    fn ema_update_examples() {
        let mut s = DifficultyState::new(2, 0.99, 0.6).unwrap();
        // q = 0.5 exactly: prob = 0.5, iou = 0.5 gives 1 - 0.5 = 0.5
        s.update(&[ev(0, 0.5, 0.5)]).unwrap();
        assert!((s.difficulties[0] - 0.995).abs() < 1e-12);
        assert_eq!(s.momenta[0], 0.99);
        assert_eq!(s.difficulties[1], 1.0);
        assert_eq!(s.momenta[1], 0.99 * 0.99);
    }

    #[test]
    fn empty_batch_only_decays_momenta() {
        let s = DifficultyState::new(3, 0.9, 0.6).unwrap();
        let next = update_difficulties(&s, &[]).unwrap();
        assert_eq!(next.difficulties, s.difficulties);
        assert!(next.momenta.iter().all(|&m| m == 0.9 * 0.9));
    }

    #[test]
    fn batch_mean_is_used_per_class() {
        let mut s = DifficultyState::new(1, 0.5, 1.0).unwrap();
        // xi = 1: q = 1 - prob
        s.update(&[ev(0, 0.2, 1.0), ev(0, 0.6, 1.0)]).unwrap();
        // mean q = 0.6; 0.5 * 1 + 0.5 * 0.6
        assert!((s.difficulties[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_class_rejected_without_mutation() {
        let mut s = DifficultyState::new(2, 0.99, 0.6).unwrap();
        let before = s.clone();
        assert!(matches!(
            s.update(&[ev(0, 0.5, 0.5), ev(2, 0.5, 0.5)]),
            Err(Error::ClassOutOfRange { class: 2, classes: 2 })
        ));
        assert_eq!(s, before);
    }

    #[test]
    fn absent_momentum_is_geometric() {
        let m0 = 0.99_f64;
        let mut s = DifficultyState::new(1, m0, 0.6).unwrap();
        let mut expected = m0;
        for _ in 0..50 {
            s.update(&[]).unwrap();
            expected *= m0;
            assert_eq!(s.momenta[0], expected);
        }
    }

    #[test]
    fn reset_round_restores_fresh_values() {
        let mut s = DifficultyState::new(2, 0.9, 0.6).unwrap();
        s.update(&[ev(0, 0.9, 0.9)]).unwrap();
        s.reset_round();
        assert_eq!(s, DifficultyState::new(2, 0.9, 0.6).unwrap());
    }

    #[test]
    fn coefficient_examples() {
        assert_eq!(coefficient(0.0, 0.3, 0.2), 1.0);
        assert_eq!(coefficient(1.0, 0.3, 0.2), 1.2);
        // gamma = e^(10/3) - 1 = 27.031625, w = 1 + 0.06 ln(1 + gamma / 2)
        assert!((coefficient(0.5, 0.3, 0.2) - 1.160_514_314_131_171).abs() < 1e-12);
        let s = DifficultyState::new(3, 0.99, 0.6).unwrap();
        assert!(difficulty_coefficients(&s, 0.0, 0.2).is_err());
        assert!(difficulty_coefficients(&s, 0.3, -1.0).is_err());
        let c = difficulty_coefficients(&s, 0.3, 0.2).unwrap();
        assert!((c.gamma - 27.031_624_894_526_14).abs() < 1e-9);
        assert!(c.weight(3).is_err());
    }

    #[test]
    fn state_json_schema() {
        let s = DifficultyState::new(2, 0.99, 0.6).unwrap();
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"difficulties": [1.0, 1.0], "momenta": [0.99, 0.99], "m0": 0.99, "xi": 0.6})
        );
    }

    proptest! {
        #[test]
        fn difficulties_stay_in_unit_interval(
            events in proptest::collection::vec((0usize..4, 0.0f64..=1.0, 0.0f64..=1.0), 0..200),
            m0 in 0.01f64..0.999,
            xi in 0.0f64..=1.0,
        ) {
            let mut s = DifficultyState::new(4, m0, xi).unwrap();
            for chunk in events.chunks(7) {
                let batch: Vec<MatchEvent> = chunk.iter().map(|&(c, p, i)| ev(c, p, i)).collect();
                s.update(&batch).unwrap();
                prop_assert!(s.difficulties.iter().all(|d| (0.0..=1.0).contains(d)));
                prop_assert!(s.momenta.iter().all(|&m| m > 0.0 && m <= m0));
            }
        }

        #[test]
        fn coefficient_strictly_increasing(a in 0.0f64..1.0, b in 0.0f64..1.0, alpha in 0.05f64..3.0, beta in 0.01f64..2.0) {
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let wl = coefficient(lo, alpha, beta);
            let wh = coefficient(hi, alpha, beta);
            prop_assert!(wl < wh);
            prop_assert!(wl >= 1.0 && wh <= 1.0 + beta);
        }
    }
}

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::stream_rng;
use crate::difficulty::BBox;
use crate::error::{Error, Result};
use crate::record::l2_normalized;

/// Shape of a synthetic world. The last `rare_classes` class ids are rare
/// and hard; the rest are common with moderate difficulty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub classes: usize,
    pub images: usize,
    pub dim: usize,
    pub rare_classes: usize,
    pub max_objects: usize,
    /// Distinct scene layouts; images are jittered copies of these.
    pub scene_templates: usize,
    /// Zipf exponent of template popularity (0 = uniform).
    pub template_skew: f64,
    /// Sampling weight of a rare class relative to a common one.
    pub rare_weight: f64,
    pub common_difficulty: [f64; 2],
    pub rare_difficulty: f64,
    /// Within-class spread of object features at difficulty 0.
    pub class_spread: f64,
    /// Feature jitter between an image and its template.
    pub copy_jitter: f64,
    /// How close a rare class prototype sits to its confusable common class.
    pub rare_confusion: f64,
    pub validation_per_class: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            classes: 10,
            images: 1000,
            dim: 32,
            rare_classes: 2,
            max_objects: 6,
            scene_templates: 150,
            template_skew: 1.0,
            rare_weight: 0.12,
            common_difficulty: [0.1, 0.4],
            rare_difficulty: 0.9,
            class_spread: 0.8,
            copy_jitter: 0.15,
            rare_confusion: 0.8,
            validation_per_class: 50,
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(format!("world: {m}")));
        if self.classes == 0 || self.rare_classes >= self.classes {
            return fail("need at least one common class and rare_classes < classes");
        }
        if self.images == 0 || self.dim == 0 || self.max_objects == 0 || self.scene_templates == 0 {
            return fail("images, dim, max_objects and scene_templates must be positive");
        }
        let d = &self.common_difficulty;
        if !(0.0..=1.0).contains(&d[0]) || !(d[0]..=1.0).contains(&d[1]) || !(0.0..=1.0).contains(&self.rare_difficulty) {
            return fail("difficulties must lie in [0, 1]");
        }
        if !(self.rare_weight >= 0.0) || !(self.class_spread >= 0.0) || !(self.copy_jitter >= 0.0) || !(self.template_skew >= 0.0) {
            return fail("weights, spreads and skew must be non-negative");
        }
        Ok(())
    }
}

/// A ground-truth object.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub class_id: usize,
    /// Unit-norm appearance feature.
    pub feature: Vec<f64>,
    pub bbox: BBox,
}

/// A ground-truth image.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image_id: String,
    pub template: usize,
    pub objects: Vec<GtObject>,
    /// Unit-norm background component of the whole-image feature.
    pub background: Vec<f64>,
}

impl Scene {
    pub fn categories(&self) -> std::collections::BTreeSet<usize> {
        self.objects.iter().map(|o| o.class_id).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub params: WorldParams,
    pub seed: u64,
    pub prototypes: Vec<Vec<f64>>,
    pub class_difficulty: Vec<f64>,
    pub images: Vec<Scene>,
    /// Held-out `(class, feature)` pairs for the probe classifier.
    pub validation: Vec<(usize, Vec<f64>)>,
}

pub(crate) fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

pub(crate) fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        if let Some(v) = l2_normalized(&gaussian(rng, dim)) {
            return v;
        }
    }
}

/// `normalize(base + scale * g / sqrt(dim))`, i.e. noise of norm ≈ `scale`.
pub(crate) fn perturb(rng: &mut ChaCha8Rng, base: &[f64], scale: f64) -> Vec<f64> {
    let k = scale / (base.len() as f64).sqrt();
    let noisy: Vec<f64> = base
        .iter()
        .zip(gaussian(rng, base.len()))
        .map(|(&x, z)| x + k * z)
        .collect();
    l2_normalized(&noisy).unwrap_or_else(|| base.to_vec())
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let w = rng.random_range(0.1..0.6);
    let h = rng.random_range(0.1..0.6);
    let x1 = rng.random_range(0.0..1.0 - w);
    let y1 = rng.random_range(0.0..1.0 - h);
    BBox { x1, y1, x2: x1 + w, y2: y1 + h }
}

/// Moves every edge by up to `scale` times the box extent.
pub(crate) fn jitter_box(rng: &mut ChaCha8Rng, b: &BBox, scale: f64) -> BBox {
    let w = b.x2 - b.x1;
    let h = b.y2 - b.y1;
    let mut n = |s: f64| s * scale * rng.random_range(-1.0..1.0);
    let (x1, x2) = (b.x1 + n(w), b.x2 + n(w));
    let (y1, y2) = (b.y1 + n(h), b.y2 + n(h));
    BBox {
        x1: x1.min(x2),
        y1: y1.min(y2),
        x2: x1.max(x2),
        y2: y1.max(y2),
    }
}

fn pick_weighted(rng: &mut ChaCha8Rng, cumulative: &[f64]) -> usize {
    let total = *cumulative.last().expect("non-empty weights");
    let u = rng.random_range(0.0..total);
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

fn cumulative(weights: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .into_iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

impl SyntheticWorld {
    pub fn is_rare(&self, class: usize) -> bool {
        class >= self.params.classes - self.params.rare_classes
    }

    pub fn rare_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.params.classes - self.params.rare_classes..self.params.classes
    }

    /// Within-class spread of class `c` features.
    pub fn spread(&self, class: usize) -> f64 {
        self.params.class_spread * (0.5 + self.class_difficulty[class])
    }

    pub fn image_index(&self, id: &str) -> Option<usize> {
        // ids are zero-padded in generation order
        id.strip_prefix("img")
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&i| i < self.images.len() && self.images[i].image_id == id)
    }

    /// Bit-reproducible under `(params, seed)`.
    pub fn generate(params: &WorldParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let p = params;
        let common = p.classes - p.rare_classes;

        let mut rng = stream_rng(seed, &[1]);
        let mut prototypes: Vec<Vec<f64>> = (0..common).map(|_| unit(&mut rng, p.dim)).collect();
        for r in 0..p.rare_classes {
            let twin = r % common;
            let base = prototypes[twin].clone();
            prototypes.push(perturb(&mut rng, &base, p.rare_confusion));
        }
        let [lo, hi] = p.common_difficulty;
        let mut class_difficulty: Vec<f64> = (0..common)
            .map(|c| if common > 1 { lo + (hi - lo) * c as f64 / (common - 1) as f64 } else { lo })
            .collect();
        class_difficulty.extend(std::iter::repeat(p.rare_difficulty).take(p.rare_classes));

        let mut world = SyntheticWorld {
            params: p.clone(),
            seed,
            prototypes,
            class_difficulty,
            images: Vec::with_capacity(p.images),
            validation: Vec::new(),
        };

        let class_cdf = cumulative((0..p.classes).map(|c| if world.is_rare(c) { p.rare_weight } else { 1.0 }));
        let mut rng = stream_rng(seed, &[2]);
        let templates: Vec<Vec<GtObject>> = (0..p.scene_templates)
            .map(|_| {
                let n = rng.random_range(1..=p.max_objects);
                (0..n)
                    .map(|_| {
                        let class_id = pick_weighted(&mut rng, &class_cdf);
                        GtObject {
                            class_id,
                            feature: perturb(&mut rng, &world.prototypes[class_id], world.spread(class_id)),
                            bbox: random_box(&mut rng),
                        }
                    })
                    .collect()
            })
            .collect();

        let popularity = cumulative((0..p.scene_templates).map(|t| 1.0 / ((t + 1) as f64).powf(p.template_skew)));
        let width = p.images.to_string().len().max(4);
        for i in 0..p.images {
            let mut rng = stream_rng(seed, &[3, i as u64]);
            let template = pick_weighted(&mut rng, &popularity);
            let mut objects = Vec::with_capacity(templates[template].len());
            for o in &templates[template] {
                if rng.random::<f64>() < 0.1 {
                    continue;
                }
                objects.push(GtObject {
                    class_id: o.class_id,
                    feature: perturb(&mut rng, &o.feature, p.copy_jitter),
                    bbox: jitter_box(&mut rng, &o.bbox, 0.05),
                });
            }
            if objects.is_empty() {
                let o = &templates[template][0];
                objects.push(GtObject {
                    class_id: o.class_id,
                    feature: perturb(&mut rng, &o.feature, p.copy_jitter),
                    bbox: o.bbox,
                });
            }
            world.images.push(Scene {
                image_id: format!("img{i:0width$}"),
                template,
                objects,
                background: unit(&mut rng, p.dim),
            });
        }

        let mut rng = stream_rng(seed, &[4]);
        for c in 0..p.classes {
            for _ in 0..p.validation_per_class {
                let f = perturb(&mut rng, &world.prototypes[c], world.spread(c));
                world.validation.push((c, f));
            }
        }
        Ok(world)
    }
}

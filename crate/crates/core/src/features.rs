//! Synthetic appearance model.
//!
//! Every object carries a unit "latent" vector standing in for its
//! appearance and a unit "context" vector standing in for its
//! surroundings. Views and goals are noisy, normalized copies of these.
//! Same-category latents share a category prototype so instances of one
//! category are harder to tell apart than objects of different categories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Unit (or near-unit) feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Feature(pub Vec<f64>);

impl Feature {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Feature {
        let n = self.norm();
        if n > 0.0 {
            self.0.iter_mut().for_each(|v| *v /= n);
        }
        self
    }

    pub fn dot(&self, other: &Feature) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn cosine(&self, other: &Feature) -> f64 {
        let d = self.norm() * other.norm();
        if d == 0.0 {
            0.0
        } else {
            self.dot(other) / d
        }
    }

    /// `self * a + other * b`, not normalized.
    pub fn blend(&self, a: f64, other: &Feature, b: f64) -> Feature {
        Feature(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
    }

    pub fn zeros(dim: usize) -> Feature {
        Feature(vec![0.0; dim])
    }

    pub fn add_scaled(&mut self, other: &Feature, w: f64) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a += w * b);
    }

    /// Adds independent Gaussian noise with standard deviation `sigma` to
    /// every component.
    pub fn perturbed(&self, sigma: f64, rng: &mut impl Rng) -> Feature {
        Feature(
            self.0
                .iter()
                .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    }
}

/// The three crops a view can be matched with: tight box, box with
/// padding, and the whole frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewFeatures {
    pub bbox: Feature,
    pub bbox_pad: Feature,
    pub full: Feature,
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seed_of(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_u64, |acc, p| mix64(acc ^ mix64(*p)))
}

pub fn rng_from(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed_of(parts))
}

pub fn random_unit(dim: usize, rng: &mut impl Rng) -> Feature {
    Feature((0..dim).map(|_| rng.sample(StandardNormal)).collect()).normalized()
}

// Stream tags keep the hash domains of different vectors apart.
const TAG_PROTOTYPE: u64 = 0xC0FF_EE01;
const TAG_INSTANCE: u64 = 0xC0FF_EE02;
const TAG_CONTEXT: u64 = 0xC0FF_EE03;
const TAG_BACKGROUND: u64 = 0xC0FF_EE04;
const TAG_ANCHOR: u64 = 0xC0FF_EE05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureModel {
    pub dim: usize,
    /// Weight of the instance-specific direction relative to the category
    /// prototype; larger means instances of one category differ more.
    pub instance_spread: f64,
    /// Share of context blended into padded crops and goal descriptions.
    pub context_weight: f64,
    /// View noise at zero distance, and its growth per meter.
    pub view_noise: f64,
    pub view_noise_per_m: f64,
    pub image_goal_noise: f64,
    pub language_goal_noise: f64,
    /// Weight of the background term in whole-frame features.
    pub background_weight: f64,
    /// Weight of the slowly varying spatial component of context vectors,
    /// so neighboring objects have similar surroundings.
    pub spatial_context_weight: f64,
    /// Spacing of the spatial context anchors, meters.
    pub context_anchor_m: f64,
    /// Weight of a direction shared by every category prototype; makes
    /// categories partly confusable.
    pub category_overlap: f64,
}

impl Default for FeatureModel {
    fn default() -> Self {
        FeatureModel {
            dim: 8,
            instance_spread: 0.8,
            context_weight: 0.3,
            view_noise: 0.03,
            view_noise_per_m: 0.01,
            image_goal_noise: 0.1,
            language_goal_noise: 0.4,
            background_weight: 0.5,
            spatial_context_weight: 1.0,
            context_anchor_m: 2.5,
            category_overlap: 1.0,
        }
    }
}

impl FeatureModel {
    pub fn category_prototype(&self, category: u32) -> Feature {
        let own = random_unit(self.dim, &mut rng_from(&[TAG_PROTOTYPE, u64::from(category)]));
        if self.category_overlap == 0.0 {
            return own;
        }
        let shared = random_unit(self.dim, &mut rng_from(&[TAG_PROTOTYPE, u64::MAX]));
        own.blend(1.0, &shared, self.category_overlap).normalized()
    }

    pub fn latent(&self, id: u32, category: u32) -> Feature {
        let own = random_unit(self.dim, &mut rng_from(&[TAG_INSTANCE, u64::from(id)]));
        self.category_prototype(category)
            .blend(1.0, &own, self.instance_spread)
            .normalized()
    }

    pub fn context(&self, id: u32) -> Feature {
        random_unit(self.dim, &mut rng_from(&[TAG_CONTEXT, u64::from(id)]))
    }

    /// Context of an object centered at `(x, y)` meters: its own direction
    /// plus a bilinear blend of anchor vectors laid on a square lattice.
    pub fn context_at(&self, id: u32, x: f64, y: f64) -> Feature {
        let a = self.context_anchor_m;
        let (gx, gy) = (x / a, y / a);
        let (i0, j0) = (gx.floor(), gy.floor());
        let (fx, fy) = (gx - i0, gy - j0);
        let mut field = Feature::zeros(self.dim);
        for (di, dj, w) in [
            (0, 0, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let key = |v: f64, d: i64| (v as i64 + d) as u64;
            let anchor = random_unit(self.dim, &mut rng_from(&[TAG_ANCHOR, key(i0, di), key(j0, dj)]));
            field.add_scaled(&anchor, w);
        }
        let mut out = self.context(id);
        out.add_scaled(&field.normalized(), self.spatial_context_weight);
        out.normalized()
    }

    pub fn background(&self, seed: u64, t: u64) -> Feature {
        random_unit(self.dim, &mut rng_from(&[TAG_BACKGROUND, seed, t]))
    }

    /// Crop with padding: the crop feature blended with the object's context.
    pub fn with_context(&self, crop: &Feature, context: &Feature) -> Feature {
        crop.blend(1.0 - self.context_weight, context, self.context_weight)
            .normalized()
    }

    pub fn view_sigma(&self, distance_m: f64) -> f64 {
        self.view_noise + self.view_noise_per_m * distance_m.max(0.0)
    }
}

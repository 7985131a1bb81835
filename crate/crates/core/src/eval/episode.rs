use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geodesic::{footprint_field, world_grid};
use crate::error::{Error, Result};
use crate::features::rng_from;
use crate::geometry::{Cell, Pose};
use crate::goal_matching::{GoalSpec, Modality};
use crate::sim::WorldSpec;

const TAG_EPISODE: u64 = 0xE915_0DE0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub min_goals: usize,
    pub max_goals: usize,
    /// Probability that an image or language goal carries the wrong category.
    pub p_cat: f64,
    /// Free cells required around the start cell (Chebyshev radius).
    pub start_clearance_cells: i32,
    pub budget_per_goal: u32,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            min_goals: 5,
            max_goals: 10,
            p_cat: 0.05,
            start_clearance_cells: 5,
            budget_per_goal: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub world: String,
    pub seed: u64,
    pub start: Cell,
    pub goals: Vec<GoalSpec>,
    pub budget_per_goal: u32,
}

impl EpisodeSpec {
    /// Start pose: center of the start cell, facing east.
    pub fn start_pose(&self, cell_size: f64) -> Pose {
        let p = self.start.center(cell_size);
        Pose {
            x: p.x,
            y: p.y,
            heading_deg: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.goals.len();
        if !(5..=10).contains(&n) {
            return Err(Error::Episode(format!("{n} goals, need 5 to 10")));
        }
        let count = |m| self.goals.iter().filter(|g| g.modality == m).count();
        let counts = Modality::ALL.map(count);
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        if hi - lo > 1 {
            return Err(Error::Episode(format!("unbalanced modalities {counts:?}")));
        }
        for g in &self.goals {
            if (g.modality == Modality::Category) == g.goal_feature.is_some() {
                return Err(Error::Episode("only image and language goals carry a feature".into()));
            }
        }
        Ok(())
    }
}

/// Samples a goal sequence over distinct objects, with modalities split as
/// evenly as possible, and a start cell that can reach every target.
pub fn generate_episode(world: &WorldSpec, seed: u64, cfg: &EpisodeConfig) -> Result<EpisodeSpec> {
    if world.objects.len() < cfg.min_goals {
        return Err(Error::Episode(format!(
            "world {:?} has {} objects, need at least {}",
            world.name,
            world.objects.len(),
            cfg.min_goals
        )));
    }
    let mut rng = rng_from(&[TAG_EPISODE, seed]);
    let max = cfg.max_goals.min(world.objects.len());
    let n = rng.random_range(cfg.min_goals..=max);

    let mut order: Vec<usize> = (0..world.objects.len()).collect();
    order.shuffle(&mut rng);
    let targets = &order[..n];

    let mut modalities: Vec<Modality> = (0..n).map(|i| Modality::ALL[i % 3]).collect();
    // The remainder would always favor the first modalities; rotate it.
    let rot = rng.random_range(0..3);
    for m in &mut modalities {
        *m = Modality::ALL[(Modality::ALL.iter().position(|x| x == m).unwrap() + rot) % 3];
    }
    modalities.shuffle(&mut rng);

    let features = &world.features;
    let mut goals = Vec::with_capacity(n);
    for (&k, &modality) in targets.iter().zip(&modalities) {
        let o = &world.objects[k];
        let goal = match modality {
            Modality::Category => GoalSpec::category(o.category),
            Modality::Image | Modality::Language => {
                let sigma = if modality == Modality::Image {
                    features.image_goal_noise
                } else {
                    features.language_goal_noise
                };
                let seen = o.latent_feature.perturbed(sigma, &mut rng).normalized();
                let feature = features.with_context(&seen, &o.context_feature);
                let mut category = o.category;
                if world.category_count > 1 && rng.random_bool(cfg.p_cat) {
                    let other = rng.random_range(0..world.category_count - 1);
                    category = if other >= o.category { other + 1 } else { other };
                }
                GoalSpec::with_feature(modality, category, feature)
            }
        };
        goals.push(GoalSpec {
            goal_id: Some(o.id),
            ..goal
        });
    }

    let grid = world_grid(world);
    let fields: Vec<_> = targets
        .iter()
        .map(|&k| footprint_field(&grid, world.objects[k].footprint.iter().copied()))
        .collect();
    let r = cfg.start_clearance_cells;
    let mut candidates: Vec<Cell> = world
        .occupancy()
        .cells()
        .filter(|c| {
            (-r..=r).all(|dr| (-r..=r).all(|dc| world.is_free(c.offset(dr, dc))))
                && fields.iter().all(|f| f.get(*c).is_finite())
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::Episode(format!("world {:?} has no valid start cell", world.name)));
    }
    candidates.sort();
    let start = candidates[rng.random_range(0..candidates.len())];

    let spec = EpisodeSpec {
        world: world.name.clone(),
        seed,
        start,
        goals,
        budget_per_goal: cfg.budget_per_goal,
    };
    spec.validate()?;
    Ok(spec)
}

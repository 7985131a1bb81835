use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::world::{Occupant, WorldSpec};
use super::{advance_dynamics, AgentState, PersonState, SimConfig};
use crate::features::{rng_from, Feature, ViewFeatures};
use crate::geometry::{angle_diff_deg, walk_ray, walk_segment, Cell};

const TAG_OBSERVE: u64 = 0x0B5E_0001;

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthRay {
    /// Heading offset from the agent heading, degrees.
    pub offset_deg: f64,
    /// Sensed range in meters; meaningless when `dropped`.
    pub range_m: f64,
    /// The ray returned before max range.
    pub hit: bool,
    /// No reading (reflective surface).
    pub dropped: bool,
}

/// Point in the agent body frame, meters forward and to the left.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoPoint {
    pub forward: f64,
    pub left: f64,
}

/// Ground-truth origin of a detection. Used by evaluation and tests only.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectionSource {
    Object(u32),
    Person(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub source: DetectionSource,
    /// Observed category; may be wrong.
    pub category: u32,
    /// Centers of the visible footprint cells, body frame.
    pub ego_points: Vec<EgoPoint>,
    pub features: ViewFeatures,
    /// Distance to the closest visible cell center.
    pub distance_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub timestep: u32,
    pub pose: AgentState,
    pub rays: Vec<DepthRay>,
    /// Relative depth per ray: an unknown affine function of true range.
    pub dense_estimate: Vec<f64>,
    pub detections: Vec<Detection>,
    /// Whole-frame appearance feature.
    pub frame_feature: Feature,
}

fn blocker(world: &WorldSpec, persons: &[PersonState], c: Cell) -> Option<Blocker> {
    match world.occupant(c) {
        Occupant::Wall => Some(Blocker::Wall),
        Occupant::Object(i) => Some(Blocker::Object(i)),
        Occupant::Free => persons
            .iter()
            .position(|p| p.covers(c))
            .map(Blocker::Person),
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Blocker {
    Wall,
    Object(usize),
    Person(usize),
}

struct Visible {
    source: DetectionSource,
    true_category: u32,
    latent: Feature,
    context: Feature,
    cells: Vec<Cell>,
    distance_m: f64,
    is_person: bool,
}

/// Renders one observation. Deterministic in `(world, cfg, state, seed, t)`.
pub fn observe(
    world: &WorldSpec,
    cfg: &SimConfig,
    state: &AgentState,
    seed: u64,
    t: u32,
) -> Observation {
    let mut rng = rng_from(&[TAG_OBSERVE, seed, u64::from(t)]);
    let persons = advance_dynamics(world, t);
    let origin = state.point();
    let cs = world.cell_size;

    // Per-frame affine distortion of the relative depth estimate.
    let est_scale: f64 = rng.random_range(0.5..2.0);
    let est_offset: f64 = rng.random_range(-0.5..0.5);

    let mut rays = Vec::with_capacity(cfg.ray_count);
    let mut dense_estimate = Vec::with_capacity(cfg.ray_count);
    for i in 0..cfg.ray_count {
        let offset = cfg.ray_offset_deg(i);
        let heading = state.heading_deg + offset;
        let mut hit: Option<(f64, Blocker)> = None;
        let own = Cell::containing(origin, cs);
        walk_ray(origin, heading, cfg.max_range_m, cs, |c, t_enter, _| {
            if c == own {
                return true;
            }
            match blocker(world, &persons, c) {
                Some(b) => {
                    hit = Some((t_enter, b));
                    false
                }
                None => true,
            }
        });
        let (true_range, ray) = match hit {
            Some((d, b)) if d < cfg.max_range_m => {
                let reflective = matches!(b, Blocker::Object(k) if world.objects[k].reflective);
                let noise: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.depth_noise_m;
                let dropped = reflective && rng.random_bool(cfg.reflective_dropout);
                (
                    d,
                    DepthRay {
                        offset_deg: offset,
                        range_m: if dropped { 0.0 } else { (d + noise).max(0.0) },
                        hit: true,
                        dropped,
                    },
                )
            }
            _ => (
                cfg.max_range_m,
                DepthRay {
                    offset_deg: offset,
                    range_m: cfg.max_range_m,
                    hit: false,
                    dropped: false,
                },
            ),
        };
        let est_noise: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.estimate_noise;
        dense_estimate.push(est_scale * true_range + est_offset + est_noise);
        rays.push(ray);
    }

    let visible = visible_things(world, cfg, state, &persons);

    let features = &cfg.features;
    let background = features.background(seed, u64::from(t));
    let total_cells: usize = visible.iter().map(|v| v.cells.len()).sum();

    // Crop features first; the frame feature mixes every visible crop.
    let crops: Vec<Feature> = visible
        .iter()
        .map(|v| {
            v.latent
                .perturbed(features.view_sigma(v.distance_m), &mut rng)
                .normalized()
        })
        .collect();
    let mut frame = Feature::zeros(features.dim);
    for (v, crop) in visible.iter().zip(&crops) {
        frame.add_scaled(crop, v.cells.len() as f64 / total_cells as f64);
    }
    frame.add_scaled(&background, features.background_weight);
    let frame_feature = frame.normalized();

    let mut detections = Vec::new();
    for (v, crop) in visible.into_iter().zip(crops) {
        if rng.random_bool(cfg.miss_prob) {
            continue;
        }
        let mut category = v.true_category;
        if !v.is_person && world.category_count > 1 && rng.random_bool(cfg.misclass_prob) {
            let other = rng.random_range(0..world.category_count - 1);
            category = if other >= v.true_category { other + 1 } else { other };
        }
        let ego_points = v
            .cells
            .iter()
            .map(|c| {
                let (forward, left) = state.frame_to_body(c.center(cs));
                EgoPoint { forward, left }
            })
            .collect();
        let bbox_pad = features.with_context(&crop, &v.context);
        detections.push(Detection {
            source: v.source,
            category,
            ego_points,
            features: ViewFeatures {
                bbox: crop,
                bbox_pad,
                full: frame_feature.clone(),
            },
            distance_m: v.distance_m,
        });
    }

    Observation {
        timestep: t,
        pose: *state,
        rays,
        dense_estimate,
        detections,
        frame_feature,
    }
}

/// Footprint cells of every object and person that are inside the view
/// frustum and have a clear line of sight. Cells of the same object do not
/// occlude each other (footprints are height-summed).
fn visible_things(
    world: &WorldSpec,
    cfg: &SimConfig,
    state: &AgentState,
    persons: &[PersonState],
) -> Vec<Visible> {
    let cs = world.cell_size;
    let origin = state.point();
    let own = Cell::containing(origin, cs);
    let half_fov = cfg.fov_deg / 2.0;

    let in_view = |c: Cell, me: Blocker| -> Option<f64> {
        let p = c.center(cs);
        let d = origin.dist(p);
        if d > cfg.max_range_m {
            return None;
        }
        let bearing = (p.y - origin.y).atan2(p.x - origin.x).to_degrees();
        if angle_diff_deg(state.heading_deg, bearing).abs() > half_fov {
            return None;
        }
        let mut clear = true;
        walk_segment(origin, p, cs, |cell, _, _| {
            if cell == c || cell == own {
                return true;
            }
            match blocker(world, persons, cell) {
                Some(b) if b != me => {
                    clear = false;
                    false
                }
                _ => true,
            }
        });
        clear.then_some(d)
    };

    let mut out = Vec::new();
    for (k, o) in world.objects.iter().enumerate() {
        // Cheap rejection on the footprint's closest cell.
        let near = o
            .footprint
            .iter()
            .map(|c| origin.dist(c.center(cs)))
            .fold(f64::INFINITY, f64::min);
        if near > cfg.max_range_m {
            continue;
        }
        let mut cells = Vec::new();
        let mut best = f64::INFINITY;
        for &c in &o.footprint {
            if let Some(d) = in_view(c, Blocker::Object(k)) {
                cells.push(c);
                best = best.min(d);
            }
        }
        if !cells.is_empty() {
            out.push(Visible {
                source: super::DetectionSource::Object(o.id),
                true_category: o.category,
                latent: o.latent_feature.clone(),
                context: o.context_feature.clone(),
                cells,
                distance_m: best,
                is_person: false,
            });
        }
    }
    for (j, p) in persons.iter().enumerate() {
        let script = &world.persons[p.index];
        let mut cells = Vec::new();
        let mut best = f64::INFINITY;
        for &c in &p.cells {
            if let Some(d) = in_view(c, Blocker::Person(j)) {
                cells.push(c);
                best = best.min(d);
            }
        }
        if !cells.is_empty() {
            out.push(Visible {
                source: super::DetectionSource::Person(p.id),
                true_category: world.person_category(),
                latent: script.latent_feature.clone(),
                context: script.context_feature.clone(),
                cells,
                distance_m: best,
                is_person: true,
            });
        }
    }
    out
}

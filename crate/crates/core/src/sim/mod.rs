//! Deterministic 2D home simulator: motion, depth raycasts, object
//! detections and scripted persons.

mod sensor;
mod world;

use serde::{Deserialize, Serialize};

pub use sensor::{observe, DepthRay, Detection, DetectionSource, EgoPoint, Observation};
pub use world::{
    load_world, load_world_with, ObjectFile, Occupant, PersonFile, PersonScript, WorldFile,
    WorldObject, WorldSpec, PERSON_ID_BASE, PERSON_RADIUS_CELLS,
};

use crate::features::FeatureModel;
use crate::geometry::{walk_segment, wrap_deg, Cell, Pose};

/// Agent pose in the world frame: meters and degrees.
pub type AgentState = Pose;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub step_size_m: f64,
    pub turn_deg: f64,
    pub fov_deg: f64,
    pub ray_count: usize,
    pub max_range_m: f64,
    /// Standard deviation of range noise on returned rays.
    pub depth_noise_m: f64,
    /// Dropout probability for rays that hit reflective objects.
    pub reflective_dropout: f64,
    pub miss_prob: f64,
    pub misclass_prob: f64,
    /// Noise of the relative (monocular) depth estimate.
    pub estimate_noise: f64,
    pub features: FeatureModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            step_size_m: 0.25,
            turn_deg: 30.0,
            fov_deg: 90.0,
            ray_count: 60,
            max_range_m: 5.0,
            depth_noise_m: 0.005,
            reflective_dropout: 0.5,
            miss_prob: 0.05,
            misclass_prob: 0.0,
            estimate_noise: 0.005,
            features: FeatureModel::default(),
        }
    }
}

impl SimConfig {
    /// Heading offset of ray `i` relative to the agent heading. Ray
    /// `ray_count / 2` looks straight ahead.
    pub fn ray_offset_deg(&self, i: usize) -> f64 {
        self.fov_deg * (i as f64 / self.ray_count as f64 - 0.5)
    }
}

/// Where a scripted person stands at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonState {
    pub index: usize,
    pub id: u32,
    pub center: Cell,
    pub cells: Vec<Cell>,
}

impl PersonState {
    pub fn covers(&self, c: Cell) -> bool {
        self.center.chebyshev(c) <= PERSON_RADIUS_CELLS && self.cells.binary_search(&c).is_ok()
    }
}

/// Positions of every active scripted person at step `t`.
pub fn advance_dynamics(world: &WorldSpec, t: u32) -> Vec<PersonState> {
    world
        .persons
        .iter()
        .enumerate()
        .filter(|(_, p)| p.active[0] <= t && t < p.active[1])
        .map(|(index, p)| {
            let k = ((t - p.active[0]) as usize) % p.waypoints.len();
            let center = p.waypoints[k];
            let r = PERSON_RADIUS_CELLS;
            let mut cells = Vec::new();
            for dr in -r..=r {
                for dc in -r..=r {
                    let c = center.offset(dr, dc);
                    if world.is_free(c) {
                        cells.push(c);
                    }
                }
            }
            cells.sort();
            PersonState {
                index,
                id: p.id,
                center,
                cells,
            }
        })
        .collect()
}

/// True when `c` is blocked for motion and sight by walls, furniture or a person.
pub fn blocked(world: &WorldSpec, persons: &[PersonState], c: Cell) -> bool {
    !world.is_free(c) || persons.iter().any(|p| p.covers(c))
}

/// Applies one discrete action. A forward step whose swept segment touches
/// an occupied cell leaves the agent where it is.
pub fn step(
    world: &WorldSpec,
    cfg: &SimConfig,
    persons: &[PersonState],
    state: &AgentState,
    action: Action,
) -> AgentState {
    match action {
        Action::Stop => *state,
        Action::TurnLeft => Pose {
            heading_deg: wrap_deg(state.heading_deg + cfg.turn_deg),
            ..*state
        },
        Action::TurnRight => Pose {
            heading_deg: wrap_deg(state.heading_deg - cfg.turn_deg),
            ..*state
        },
        Action::Forward => {
            let start = state.point();
            let end = start.advance(state.heading_deg, cfg.step_size_m);
            let mut clear = true;
            walk_segment(start, end, world.cell_size, |c, _, _| {
                clear = !blocked(world, persons, c);
                clear
            });
            if clear {
                Pose {
                    x: end.x,
                    y: end.y,
                    ..*state
                }
            } else {
                *state
            }
        }
    }
}

/// Bundles a world, configuration and seed for stepping an episode.
#[derive(Clone, Debug)]
pub struct Simulator<'w> {
    pub world: &'w WorldSpec,
    pub cfg: SimConfig,
    pub seed: u64,
}

impl<'w> Simulator<'w> {
    pub fn new(world: &'w WorldSpec, cfg: SimConfig, seed: u64) -> Self {
        Simulator { world, cfg, seed }
    }

    pub fn persons_at(&self, t: u32) -> Vec<PersonState> {
        advance_dynamics(self.world, t)
    }

    pub fn step(&self, state: &AgentState, action: Action, t: u32) -> AgentState {
        step(self.world, &self.cfg, &self.persons_at(t), state, action)
    }

    pub fn observe(&self, state: &AgentState, t: u32) -> Observation {
        observe(self.world, &self.cfg, state, self.seed, t)
    }
}

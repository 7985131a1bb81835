use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::episode::{generate_episode, EpisodeConfig, EpisodeSpec};
use super::geodesic::{goal_field, world_grid};
use super::metrics::{spl, GoalResult, SUCCESS_DISTANCE_M};
use crate::agent::{Agent, AgentConfig, ReplanReason, Variant};
use crate::error::{Error, Result};
use crate::features::seed_of;
use crate::geometry::{Cell, MapFrame};
use crate::global_policy::GoalKind;
use crate::goal_matching::{Annotation, Modality};
use crate::instance_memory::{InstanceMemory, MemoryDump};
use crate::sim::{Action, Simulator, SimConfig, WorldSpec};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub agent: AgentConfig,
    pub episode: EpisodeConfig,
}

/// Compact view of the long-term goal for logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<u32>,
    /// Explore cell, or the first goal cell (map frame).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell: Option<Cell>,
}

impl From<&GoalKind> for TargetSummary {
    fn from(k: &GoalKind) -> Self {
        match k {
            GoalKind::PointGoal { instance, cells } => TargetSummary {
                kind: "point_goal".into(),
                instance: Some(*instance),
                cell: cells.first().copied(),
            },
            GoalKind::Explore { cell } => TargetSummary {
                kind: "explore".into(),
                instance: None,
                cell: Some(*cell),
            },
            GoalKind::None => TargetSummary {
                kind: "none".into(),
                instance: None,
                cell: None,
            },
        }
    }
}

/// One step of the log. Poses are in the world frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: u32,
    pub goal_index: usize,
    pub x: f64,
    pub y: f64,
    pub heading_deg: f64,
    pub action: Action,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replan: Option<ReplanReason>,
    pub target: TargetSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode: usize,
    pub variant: Variant,
    pub spec: EpisodeSpec,
    pub results: Vec<GoalResult>,
    pub trajectory: Vec<TrajectoryStep>,
    /// Final instance memory and benchmark annotations for its feature goals.
    pub dump: MemoryDump,
    pub annotations: Vec<Annotation>,
}

/// Runs every goal of `spec` in order with one agent.
pub fn run_episode(
    world: &WorldSpec,
    spec: &EpisodeSpec,
    variant: Variant,
    cfg: &RunConfig,
    episode: usize,
) -> Result<EpisodeOutcome> {
    let sim = Simulator::new(world, cfg.sim.clone(), spec.seed);
    let mut pose = spec.start_pose(world.cell_size);
    if !world.is_free(spec.start) {
        return Err(Error::Episode(format!("start cell {:?} is not free", spec.start)));
    }
    let agent_cfg = AgentConfig {
        variant,
        ..cfg.agent.clone()
    };
    let mut agent = Agent::new(world.category_count, pose, agent_cfg, cfg.sim.clone())?;
    let grid = world_grid(world);
    let mut t: u32 = 0;
    let mut results = Vec::with_capacity(spec.goals.len());
    let mut trajectory = Vec::new();

    for (gi, goal) in spec.goals.iter().enumerate() {
        let truth = goal_field(world, &grid, goal);
        let geodesic_m = truth.at_point(pose.point());
        agent.begin_goal(goal, t);
        let (mut steps, mut path_m) = (0u32, 0.0f64);
        let mut stopped = false;
        let mut gave_up = false;
        while steps < spec.budget_per_goal {
            let obs = sim.observe(&pose, t);
            agent.perceive(&obs)?;
            let report = agent.act(&pose, t)?;
            steps += 1;
            trajectory.push(TrajectoryStep {
                t,
                goal_index: gi + 1,
                x: pose.x,
                y: pose.y,
                heading_deg: pose.heading_deg,
                action: report.action,
                replan: report.replan,
                target: TargetSummary::from(&report.target),
            });
            let next = sim.step(&pose, report.action, t);
            path_m += next.point().dist(pose.point());
            pose = next;
            t += 1;
            if report.action == Action::Stop {
                stopped = true;
                gave_up = report.gave_up;
                break;
            }
        }
        let remaining = truth.at_point(pose.point());
        let success =
            stopped && !gave_up && remaining < SUCCESS_DISTANCE_M && steps <= spec.budget_per_goal;
        log::debug!(
            "episode {episode} goal {} {:?}: success={success} steps={steps} remaining={remaining:.2}",
            gi + 1,
            goal.modality
        );
        results.push(GoalResult {
            episode,
            goal_index: gi + 1,
            modality: goal.modality,
            success,
            steps,
            path_m,
            geodesic_m,
            spl: spl(success, geodesic_m, path_m),
        });
        agent.end_goal();
    }

    let dump_name = format!("episode_{episode:04}");
    let annotations = annotate(world, spec, agent.memory(), agent.frame(), &dump_name);
    Ok(EpisodeOutcome {
        episode,
        variant,
        spec: spec.clone(),
        results,
        trajectory,
        dump: agent.memory().to_dump(),
        annotations,
    })
}

/// Benchmark annotations: each feature goal's truth is the instance of the
/// target's category that overlaps the target footprint most.
pub fn annotate(
    world: &WorldSpec,
    spec: &EpisodeSpec,
    memory: &InstanceMemory,
    frame: &MapFrame,
    dump: &str,
) -> Vec<Annotation> {
    let mut out = Vec::new();
    for goal in &spec.goals {
        if goal.modality == Modality::Category {
            continue;
        }
        let Some(target) = goal.goal_id.and_then(|id| world.object(id)) else {
            continue;
        };
        let cells: std::collections::BTreeSet<Cell> =
            target.footprint.iter().map(|c| frame.world_cell_to_map(*c)).collect();
        let truth_instance = memory
            .instances()
            .filter(|i| i.category == target.category)
            .map(|i| (i.id, i.cells.intersection(&cells).count()))
            .filter(|(_, n)| *n > 0)
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|(id, _)| id);
        out.push(Annotation {
            dump: dump.to_string(),
            goal: goal.clone(),
            truth_instance,
        });
    }
    out
}

/// Seed of episode `i` in a suite seeded with `seed`.
pub fn episode_seed(seed: u64, i: usize) -> u64 {
    seed_of(&[seed, i as u64])
}

/// Generates and runs `episodes` episodes, cycling through `worlds`, on the
/// rayon pool. Results come back in episode order.
pub fn run_suite(
    worlds: &[WorldSpec],
    variant: Variant,
    episodes: usize,
    seed: u64,
    cfg: &RunConfig,
) -> Result<Vec<EpisodeOutcome>> {
    if worlds.is_empty() {
        return Err(Error::Episode("no worlds".into()));
    }
    let specs = suite_specs(worlds, episodes, seed, &cfg.episode)?;
    run_specs(worlds, &specs, variant, cfg)
}

pub fn suite_specs(
    worlds: &[WorldSpec],
    episodes: usize,
    seed: u64,
    cfg: &EpisodeConfig,
) -> Result<Vec<EpisodeSpec>> {
    (0..episodes)
        .map(|i| generate_episode(&worlds[i % worlds.len()], episode_seed(seed, i), cfg))
        .collect()
}

pub fn run_specs(
    worlds: &[WorldSpec],
    specs: &[EpisodeSpec],
    variant: Variant,
    cfg: &RunConfig,
) -> Result<Vec<EpisodeOutcome>> {
    let by_name: BTreeMap<&str, &WorldSpec> = worlds.iter().map(|w| (w.name.as_str(), w)).collect();
    specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let world = by_name
                .get(spec.world.as_str())
                .ok_or_else(|| Error::Episode(format!("unknown world {:?}", spec.world)))?;
            run_episode(world, spec, variant, cfg, i)
        })
        .collect()
}

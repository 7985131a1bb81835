//! The navigation agent: perception into map and memory, long-term goal
//! selection and the local planner, for every method variant.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::Feature;
use crate::geometry::{Cell, MapFrame, Pose};
use crate::global_policy::{person_goal_update, Exclusions, GlobalPolicy, GoalKind, LongTermGoal};
use crate::goal_matching::{score_feature, GoalSpec, MatchConfig, Method, Modality};
use crate::instance_memory::InstanceMemory;
use crate::perception::{grounded_depths, project_detections, project_rays};
use crate::planner::{fast_march, plan_with, Controller, DistanceField, PlanError, PlanGrid, StopAt, Window};
use crate::semantic_map::{init_map, LabeledCells, MapUpdate, SemanticMap, DEFAULT_MAP_SIDE};
use crate::sim::{Action, Observation, SimConfig};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Goat,
    NoInstances,
    NoMemory,
    Cow,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Goat, Variant::NoInstances, Variant::NoMemory, Variant::Cow];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Goat => "goat",
            Variant::NoInstances => "no-instances",
            Variant::NoMemory => "no-memory",
            Variant::Cow => "cow",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s || v.name().replace('-', "_") == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub variant: Variant,
    pub image_match: MatchConfig,
    pub language_match: MatchConfig,
    /// Cosine threshold for whole-frame matching before full exploration.
    pub frame_match_threshold: f64,
    pub policy: GlobalPolicy,
    pub controller: Controller,
    pub inflation_cells: i32,
    pub stop_radius_m: f64,
    pub map_side: usize,
    pub dilation: i32,
    /// Planning window margin around everything explored, in cells.
    pub plan_margin_cells: i32,
    /// Obstacle changes this close to the descent path trigger a replan.
    pub replan_corridor_m: f64,
    /// Extra field beyond the agent's value computed before the planner
    /// stops early.
    pub plan_lookahead_m: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            variant: Variant::Goat,
            image_match: MatchConfig::image_default(),
            language_match: MatchConfig::language_default(),
            frame_match_threshold: 0.75,
            policy: GlobalPolicy::default(),
            controller: Controller::default(),
            inflation_cells: 3,
            stop_radius_m: 1.0,
            map_side: DEFAULT_MAP_SIDE,
            dilation: 3,
            plan_margin_cells: 20,
            replan_corridor_m: 1.0,
            plan_lookahead_m: 1.0,
        }
    }
}

/// One stored frame for whole-image matching.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub step: u32,
    pub feature: Feature,
    /// Map cells of the frame's detections, or the viewpoint when it had none.
    pub cells: Vec<Cell>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplanReason {
    NewGoal,
    ObstacleChange,
    OffField,
}

/// What the agent did in one step, for the trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub action: Action,
    pub replan: Option<ReplanReason>,
    pub target: GoalKind,
    /// The agent ran out of options and gave up on the goal.
    pub gave_up: bool,
}

struct PlanCache {
    goal_cells: Vec<Cell>,
    grid: PlanGrid,
    field: DistanceField,
    path: Vec<Cell>,
}

struct GoalState {
    spec: GoalSpec,
    ltg: LongTermGoal,
    excl: Exclusions,
    plan: Option<PlanCache>,
    needs_match: bool,
    failed: bool,
}

pub struct Agent {
    cfg: AgentConfig,
    sim: SimConfig,
    person_category: u32,
    frame: MapFrame,
    map: SemanticMap,
    memory: InstanceMemory,
    frames: Vec<FrameRecord>,
    goal: Option<GoalState>,
    bbox: Option<(Cell, Cell)>,
    agent_field: Option<(Cell, DistanceField)>,
    pending_changes: Vec<Cell>,
}

impl Agent {
    /// `categories` counts object categories; one more channel is added for
    /// people. The map frame is anchored at `start` (world frame).
    pub fn new(categories: u32, start: Pose, cfg: AgentConfig, sim: SimConfig) -> Result<Agent> {
        let map = init_map(categories + 1, cfg.map_side)?;
        let frame = MapFrame::new(start, map.agent_cell(), map.cell_size());
        Ok(Agent {
            person_category: categories,
            frame,
            map,
            memory: InstanceMemory::new(cfg.dilation),
            frames: Vec::new(),
            goal: None,
            bbox: None,
            agent_field: None,
            pending_changes: Vec::new(),
            cfg,
            sim,
        })
    }

    pub fn map(&self) -> &SemanticMap {
        &self.map
    }

    pub fn memory(&self) -> &InstanceMemory {
        &self.memory
    }

    pub fn frame(&self) -> &MapFrame {
        &self.frame
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn person_category(&self) -> u32 {
        self.person_category
    }

    pub fn current_goal(&self) -> Option<&LongTermGoal> {
        self.goal.as_ref().map(|g| &g.ltg)
    }

    /// Starts a new goal. Variants without instance matching see every goal
    /// as a category goal.
    pub fn begin_goal(&mut self, goal: &GoalSpec, step: u32) {
        let mut spec = goal.clone();
        spec.goal_id = None;
        if self.cfg.variant == Variant::NoInstances {
            spec = GoalSpec::category(goal.category);
        }
        self.goal = Some(GoalState {
            spec,
            ltg: LongTermGoal {
                kind: GoalKind::None,
                issued_at: step,
            },
            excl: Exclusions::default(),
            plan: None,
            needs_match: true,
            failed: false,
        });
    }

    /// Ends the current goal; the no-memory variant forgets everything.
    pub fn end_goal(&mut self) {
        self.goal = None;
        if self.cfg.variant == Variant::NoMemory {
            self.map.reset();
            self.memory.clear();
            self.frames.clear();
            self.bbox = None;
            self.agent_field = None;
        }
    }

    fn grow_bbox(&mut self, cells: &[Cell]) {
        for &c in cells {
            self.bbox = Some(match self.bbox {
                None => (c, c),
                Some((lo, hi)) => (
                    Cell::new(lo.row.min(c.row), lo.col.min(c.col)),
                    Cell::new(hi.row.max(c.row), hi.col.max(c.col)),
                ),
            });
        }
    }

    /// Integrates one observation into the map and memory.
    pub fn perceive(&mut self, obs: &Observation) -> Result<()> {
        let side = self.map.side();
        let (depths, _) = grounded_depths(obs);
        let rays = project_rays(obs, &depths, &self.frame, side, &self.sim);
        let projected = project_detections(obs, &self.frame, side);
        let pose = self.frame.pose_to_map(&obs.pose);
        let agent_cell = Cell::containing(pose.point(), self.frame.cell_size);

        let (people, objects): (Vec<_>, Vec<_>) = projected
            .items
            .into_iter()
            .partition(|p| p.category == self.person_category);
        let mut touched = BTreeSet::new();
        if !people.is_empty() {
            touched.insert(self.person_category);
        }
        let mut labeled: Vec<LabeledCells> =
            person_goal_update(&mut self.map, &mut self.memory, people, self.person_category)?;
        let mut frame_cells = BTreeSet::new();
        for p in objects {
            frame_cells.extend(p.cells.iter().copied());
            let a = self.memory.associate(&p.cells, p.category, p.view);
            if !a.absorbed.is_empty() {
                self.map.relabel(p.category, &a.absorbed, a.id);
                for l in &mut labeled {
                    if a.absorbed.contains(&l.id) {
                        l.id = a.id;
                    }
                }
                if let Some(g) = &mut self.goal {
                    if let GoalKind::PointGoal { instance, .. } = &mut g.ltg.kind {
                        if self.cfg.variant != Variant::Cow && a.absorbed.contains(instance) {
                            *instance = a.id;
                        }
                    }
                }
            }
            touched.insert(p.category);
            labeled.push(LabeledCells {
                category: p.category,
                id: a.id,
                cells: p.cells.into_iter().collect(),
            });
        }
        if self.cfg.variant == Variant::Cow {
            let cells = if frame_cells.is_empty() {
                vec![agent_cell]
            } else {
                frame_cells.into_iter().collect()
            };
            self.frames.push(FrameRecord {
                step: obs.timestep,
                feature: obs.frame_feature.clone(),
                cells,
            });
        }
        self.grow_bbox(&rays.free);
        self.grow_bbox(&rays.hits);
        self.grow_bbox(&[agent_cell]);
        let upd = MapUpdate {
            labeled,
            hits: rays.hits,
            free: rays.free,
            agent: Some(agent_cell),
        };
        let changed = self.map.update(&upd, &self.memory)?;
        self.pending_changes.extend(changed);
        self.agent_field = None;

        if let Some(g) = &mut self.goal {
            let rematch = match self.cfg.variant {
                Variant::Cow => true,
                _ => {
                    let cfg = match_config(&self.cfg, g.spec.modality);
                    touched.contains(&g.spec.category) || !cfg.subsample_by_category
                }
            };
            if rematch {
                g.needs_match = true;
            }
        }
        Ok(())
    }

    fn window(&self, extra: &[Cell]) -> Window {
        let side = self.map.side();
        let mut cells: Vec<Cell> = extra.to_vec();
        if let Some((lo, hi)) = self.bbox {
            cells.push(lo);
            cells.push(hi);
        }
        Window::around(cells, self.cfg.plan_margin_cells, side, side)
    }

    fn plan_grid(&self, window: Window, carve: &[Cell]) -> PlanGrid {
        let map = &self.map;
        PlanGrid::build(
            window,
            map.cell_size(),
            |c| map.is_obstacle(c),
            self.cfg.inflation_cells,
            carve,
        )
    }

    /// Distance field from the agent over the explored window.
    fn agent_field(&mut self) -> &DistanceField {
        let here = self.map.agent_cell();
        if self.agent_field.as_ref().is_none_or(|(c, _)| *c != here) {
            let grid = self.plan_grid(self.window(&[here]), &[here]);
            self.agent_field = Some((here, fast_march(&grid, &[here], None)));
        }
        &self.agent_field.as_ref().expect("just computed").1
    }

    fn localize_frames(&self, spec: &GoalSpec, fully_explored: bool, excl: &Exclusions) -> Option<(u32, Vec<Cell>)> {
        let goal = match &spec.goal_feature {
            Some(f) => f.clone(),
            None => self.sim.features.category_prototype(spec.category),
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, fr) in self.frames.iter().enumerate() {
            if excl.instances.contains(&(i as u32)) {
                continue;
            }
            let s = score_feature(&goal, &fr.feature, 0.0, Method::Cosine);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (i, s) = best?;
        (fully_explored || s >= self.cfg.frame_match_threshold).then(|| (i as u32, self.frames[i].cells.clone()))
    }

    /// Localization only: `Some` goal when the current goal matches.
    fn try_match(&mut self, fully_explored: bool) -> Result<Option<GoalKind>> {
        let Some(g) = self.goal.as_ref() else {
            return Ok(None);
        };
        let spec = g.spec.clone();
        let excl = g.excl.clone();
        if self.cfg.variant == Variant::Cow {
            return Ok(self
                .localize_frames(&spec, fully_explored, &excl)
                .map(|(instance, cells)| GoalKind::PointGoal { instance, cells }));
        }
        let cfg = match_config(&self.cfg, spec.modality).clone();
        let policy = self.cfg.policy.clone();
        let field = self.agent_field().clone();
        let m = policy.localize(&spec, &self.memory, &cfg, fully_explored, &field, &excl)?;
        Ok(m.instance.map(|id| GoalKind::PointGoal {
            instance: id,
            cells: self.memory.get(id).expect("localized").cells.iter().copied().collect(),
        }))
    }

    fn explore_target(&mut self) -> Option<Cell> {
        let excl = self.goal.as_ref().map(|g| g.excl.clone()).unwrap_or_default();
        let policy = self.cfg.policy.clone();
        let field = self.agent_field().clone();
        policy.frontier_target(&self.map, &field, &excl)
    }

    /// Full decision with the fully-explored retry.
    fn redecide(&mut self, step: u32) -> Result<()> {
        let kind = if let Some(k) = self.try_match(false)? {
            k
        } else if let Some(cell) = self.explore_target() {
            GoalKind::Explore { cell }
        } else if let Some(k) = self.try_match(true)? {
            k
        } else {
            GoalKind::None
        };
        let g = self.goal.as_mut().expect("goal active");
        g.needs_match = false;
        if kind == GoalKind::None {
            g.failed = true;
        }
        if kind != g.ltg.kind {
            g.plan = None;
        }
        g.ltg = LongTermGoal { kind, issued_at: step };
        Ok(())
    }

    fn build_plan(&self, goal_cells: &[Cell], here: Cell) -> Option<PlanCache> {
        let mut carve = goal_cells.to_vec();
        carve.push(here);
        let mut win_cells = goal_cells.to_vec();
        win_cells.push(here);
        let grid = self.plan_grid(self.window(&win_cells), &carve);
        let stop = StopAt {
            cell: here,
            margin: self.cfg.plan_lookahead_m,
        };
        let field = plan_with(&grid, goal_cells, Some(stop)).ok()?;
        let path = field.descent_path(here, 2000);
        Some(PlanCache {
            goal_cells: goal_cells.to_vec(),
            grid,
            field,
            path,
        })
    }

    fn corridor_hit(&self, plan: &PlanCache, changes: &[Cell]) -> bool {
        let r = (self.cfg.replan_corridor_m / self.map.cell_size()).ceil() as i32;
        changes
            .iter()
            .any(|c| plan.path.iter().any(|p| p.chebyshev(*c) <= r && p.euclidean(*c) <= f64::from(r)))
    }

    /// Chooses the next action. `pose` is the agent's pose reading in the
    /// world frame.
    pub fn act(&mut self, pose: &Pose, step: u32) -> Result<StepReport> {
        let map_pose = self.frame.pose_to_map(pose);
        let here = Cell::containing(map_pose.point(), self.frame.cell_size);
        let changes = std::mem::take(&mut self.pending_changes);
        let Some(g) = self.goal.as_mut() else {
            return Ok(StepReport {
                action: Action::Stop,
                replan: None,
                target: GoalKind::None,
                gave_up: true,
            });
        };

        // Moving instances (people) keep their goal cells current.
        if self.cfg.variant != Variant::Cow {
            if let GoalKind::PointGoal { instance, cells } = &mut g.ltg.kind {
                if let Some(inst) = self.memory.get(*instance) {
                    let now: Vec<Cell> = inst.cells.iter().copied().collect();
                    if now != *cells {
                        *cells = now;
                    }
                }
            }
        }

        let mut replan = None;
        for _attempt in 0..6 {
            let g = self.goal.as_mut().expect("goal active");
            if g.failed {
                break;
            }
            // Exploring: take a match when one appears, drop spent targets.
            let stale_explore = match g.ltg.kind {
                GoalKind::Explore { cell } => {
                    let reached = cell.chebyshev(here) <= 2;
                    if reached {
                        g.excl.visited.push(cell);
                    }
                    reached || !self.map.is_frontier(cell)
                }
                GoalKind::None => true,
                GoalKind::PointGoal { .. } => false,
            };
            let needs_match = g.needs_match && !matches!(g.ltg.kind, GoalKind::PointGoal { .. });
            if needs_match && !stale_explore {
                let g_step = step;
                if let Some(kind) = self.try_match(false)? {
                    let g = self.goal.as_mut().expect("goal active");
                    g.ltg = LongTermGoal { kind, issued_at: g_step };
                    g.plan = None;
                }
                self.goal.as_mut().expect("goal active").needs_match = false;
            }
            if stale_explore {
                self.redecide(step)?;
            }
            let g = self.goal.as_ref().expect("goal active");
            if g.failed {
                break;
            }
            let goal_cells = g.ltg.cells();
            let stop_radius = match g.ltg.kind {
                GoalKind::PointGoal { .. } => self.cfg.stop_radius_m,
                _ => 0.0,
            };

            let reason = match &g.plan {
                None => Some(ReplanReason::NewGoal),
                Some(p) if p.goal_cells != goal_cells => Some(ReplanReason::NewGoal),
                Some(p) if !p.field.get(here).is_finite() => Some(ReplanReason::OffField),
                Some(p) if self.corridor_hit(p, &changes) => Some(ReplanReason::ObstacleChange),
                _ => None,
            };
            if let Some(r) = reason {
                let plan = self.build_plan(&goal_cells, here);
                replan = replan.or(Some(r));
                self.goal.as_mut().expect("goal active").plan = plan;
            }
            let g = self.goal.as_mut().expect("goal active");
            let outcome = match &g.plan {
                Some(p) => self.cfg.controller.next_action(&map_pose, &p.field, &p.grid, stop_radius),
                None => Err(PlanError::Unreachable),
            };
            match outcome {
                Ok(action) => {
                    return Ok(StepReport {
                        action,
                        replan,
                        target: g.ltg.kind.clone(),
                        gave_up: false,
                    })
                }
                Err(PlanError::Unreachable) => {
                    match g.ltg.kind {
                        GoalKind::PointGoal { instance, .. } => {
                            g.excl.instances.insert(instance);
                        }
                        GoalKind::Explore { cell } => g.excl.visited.push(cell),
                        GoalKind::None => {}
                    }
                    g.ltg.kind = GoalKind::None;
                    g.plan = None;
                }
            }
        }
        let g = self.goal.as_mut().expect("goal active");
        if !g.failed {
            // Out of attempts this step: look around and try again next step.
            return Ok(StepReport {
                action: Action::TurnLeft,
                replan,
                target: g.ltg.kind.clone(),
                gave_up: false,
            });
        }
        Ok(StepReport {
            action: Action::Stop,
            replan,
            target: GoalKind::None,
            gave_up: true,
        })
    }
}

fn match_config(cfg: &AgentConfig, modality: Modality) -> &MatchConfig {
    match modality {
        Modality::Language => &cfg.language_match,
        _ => &cfg.image_match,
    }
}

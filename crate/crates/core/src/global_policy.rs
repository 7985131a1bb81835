//! Long-term goal selection: navigate to a localized instance or explore the
//! closest frontier. Also keeps moving people current in the map.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::Cell;
use crate::goal_matching::{localize_goal_excluding, GoalSpec, MatchConfig, MatchResult};
use crate::instance_memory::InstanceMemory;
use crate::perception::Projection;
use crate::planner::DistanceField;
use crate::semantic_map::{LabeledCells, SemanticMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GoalKind {
    PointGoal { instance: u32, cells: Vec<Cell> },
    Explore { cell: Cell },
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongTermGoal {
    pub kind: GoalKind,
    pub issued_at: u32,
}

impl LongTermGoal {
    pub fn cells(&self) -> Vec<Cell> {
        match &self.kind {
            GoalKind::PointGoal { cells, .. } => cells.clone(),
            GoalKind::Explore { cell } => vec![*cell],
            GoalKind::None => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalPolicy {
    /// Frontier clusters smaller than this are ignored (ray gaps at range
    /// leave single unexplored cells inside seen space).
    pub min_frontier_cells: usize,
    /// Frontier clusters whose nearest cell is this close to an explore
    /// target already reached are skipped.
    pub visited_radius_cells: i32,
    /// Search ring around instance cells when measuring their distance in
    /// the agent field; should exceed the planner's obstacle inflation.
    pub instance_ring_cells: i32,
}

impl Default for GlobalPolicy {
    fn default() -> Self {
        GlobalPolicy {
            min_frontier_cells: 3,
            visited_radius_cells: 6,
            instance_ring_cells: 4,
        }
    }
}

/// Distance in `field` (sourced at the agent) to reach near `cells`: the best
/// passable cell within `ring` cells, plus the straight remainder.
pub fn instance_distance(field: &DistanceField, cells: &BTreeSet<Cell>, ring: i32) -> f64 {
    let cs = field.cell_size();
    let mut best = f64::INFINITY;
    for &c in cells {
        for dr in -ring..=ring {
            for dc in -ring..=ring {
                let v = field.get(c.offset(dr, dc));
                if v.is_finite() {
                    best = best.min(v + cs * f64::from(dr).hypot(f64::from(dc)));
                }
            }
        }
    }
    best
}

/// Things the agent has ruled out for the current goal.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Exclusions {
    pub instances: BTreeSet<u32>,
    pub visited: Vec<Cell>,
}

impl GlobalPolicy {
    /// Localization step alone, with geodesics taken from `agent_field`.
    pub fn localize(
        &self,
        goal: &GoalSpec,
        memory: &InstanceMemory,
        cfg: &MatchConfig,
        fully_explored: bool,
        agent_field: &DistanceField,
        excl: &Exclusions,
    ) -> Result<MatchResult> {
        let geodesic = |id: u32| {
            memory
                .get(id)
                .map_or(f64::INFINITY, |i| instance_distance(agent_field, &i.cells, self.instance_ring_cells))
        };
        localize_goal_excluding(goal, memory, cfg, fully_explored, &geodesic, &excl.instances)
    }

    /// Nearest reachable frontier cell, skipping cells close to targets
    /// already visited. Clusters smaller than `min_frontier_cells` are noise.
    pub fn frontier_target(&self, map: &SemanticMap, agent_field: &DistanceField, excl: &Exclusions) -> Option<Cell> {
        let r = self.visited_radius_cells;
        map.frontiers(Some(agent_field))
            .into_iter()
            .filter(|f| f.distance_m.is_finite() && f.cells.len() >= self.min_frontier_cells)
            .flat_map(|f| f.cells)
            .filter(|c| excl.visited.iter().all(|v| v.chebyshev(*c) > r))
            .map(|c| (agent_field.get(c), c))
            .filter(|(d, _)| d.is_finite())
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)))
            .map(|(_, c)| c)
    }

    /// One decision: a localized instance becomes a point goal, otherwise the
    /// nearest frontier is explored, otherwise nothing is left.
    #[allow(clippy::too_many_arguments)]
    pub fn decide(
        &self,
        goal: &GoalSpec,
        memory: &InstanceMemory,
        map: &SemanticMap,
        cfg: &MatchConfig,
        fully_explored: bool,
        agent_field: &DistanceField,
        excl: &Exclusions,
        step: u32,
    ) -> Result<LongTermGoal> {
        let m = self.localize(goal, memory, cfg, fully_explored, agent_field, excl)?;
        let kind = if let Some(id) = m.instance {
            let inst = memory.get(id).expect("localized instance exists");
            GoalKind::PointGoal {
                instance: id,
                cells: inst.cells.iter().copied().collect(),
            }
        } else if let Some(cell) = self.frontier_target(map, agent_field, excl) {
            GoalKind::Explore { cell }
        } else {
            GoalKind::None
        };
        Ok(LongTermGoal {
            kind,
            issued_at: step,
        })
    }
}

/// Minimum bbox cosine for a detection to continue an existing person track.
pub const PERSON_MATCH_COSINE: f64 = 0.5;

/// Re-associates person detections with person instances by appearance and
/// moves each instance to its new cells. Old cells the new detection does
/// not cover are cleared from the person channel and the obstacle channel.
/// Returns the labels to write for this step.
pub fn person_goal_update(
    map: &mut SemanticMap,
    memory: &mut InstanceMemory,
    detections: Vec<Projection>,
    person_category: u32,
) -> Result<Vec<LabeledCells>> {
    let mut taken = BTreeSet::new();
    let mut out = Vec::new();
    for det in detections {
        let track = memory
            .instances_by_category(person_category)
            .into_iter()
            .filter(|id| !taken.contains(id))
            .filter_map(|id| {
                let last = memory.get(id)?.views.last()?;
                let s = last.bbox.cosine(&det.view.bbox);
                (s >= PERSON_MATCH_COSINE).then_some((id, s))
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|(id, _)| id);
        let cells = det.cells.clone();
        let id = match track {
            Some(id) => {
                let old = memory.relocate(id, det.cells, det.view)?;
                map.clear_instance_cells(person_category, id, old.difference(&cells).copied());
                id
            }
            None => memory.insert_new(det.cells, person_category, det.view),
        };
        taken.insert(id);
        out.push(LabeledCells {
            category: person_category,
            id,
            cells: cells.into_iter().collect(),
        });
    }
    Ok(out)
}

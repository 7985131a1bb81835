//! Ground-truth geodesics on the world grid. Walls and furniture block,
//! people are ignored and nothing is inflated.

use crate::geometry::{Cell, Grid};
use crate::goal_matching::{GoalSpec, Modality};
use crate::planner::{fast_march, DistanceField, PlanGrid};
use crate::sim::WorldSpec;

pub fn world_grid(world: &WorldSpec) -> PlanGrid {
    let obstacles = Grid::from_vec(
        world.rows(),
        world.cols(),
        world.occupancy().cells().map(|c| !world.is_free(c)).collect(),
    );
    PlanGrid::from_obstacles(&obstacles, world.cell_size)
}

pub fn footprint_field(grid: &PlanGrid, cells: impl IntoIterator<Item = Cell>) -> DistanceField {
    let seeds: Vec<Cell> = cells.into_iter().collect();
    fast_march(grid, &seeds, None)
}

/// Seed cells that count as reaching `goal`: the target's footprint, or
/// every object of the category for category goals.
pub fn goal_cells(world: &WorldSpec, goal: &GoalSpec) -> Vec<Cell> {
    let Some(target) = goal.goal_id.and_then(|id| world.object(id)) else {
        return world
            .objects
            .iter()
            .filter(|o| o.category == goal.category)
            .flat_map(|o| o.footprint.iter().copied())
            .collect();
    };
    if goal.modality == Modality::Category {
        world
            .objects
            .iter()
            .filter(|o| o.category == target.category)
            .flat_map(|o| o.footprint.iter().copied())
            .collect()
    } else {
        target.footprint.iter().copied().collect()
    }
}

pub fn goal_field(world: &WorldSpec, grid: &PlanGrid, goal: &GoalSpec) -> DistanceField {
    footprint_field(grid, goal_cells(world, goal))
}

//! Local policy: Fast Marching geodesic distance fields over the map's
//! free space and the discrete controller that descends them.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_diff_deg, walk_segment, wrap_deg, Cell, Grid, Point, Pose};
use crate::sim::Action;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("goal cannot be reached")]
    Unreachable,
}

/// Rectangular sub-window of a larger grid: rows `[row0, row0 + rows)` and
/// columns `[col0, col0 + cols)`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub row0: i32,
    pub col0: i32,
    pub rows: usize,
    pub cols: usize,
}

impl Window {
    pub fn full(rows: usize, cols: usize) -> Self {
        Window {
            row0: 0,
            col0: 0,
            rows,
            cols,
        }
    }

    /// Smallest window covering `cells`, grown by `margin` and clipped to
    /// `[0, rows) x [0, cols)`.
    pub fn around(cells: impl IntoIterator<Item = Cell>, margin: i32, rows: usize, cols: usize) -> Self {
        let (mut r0, mut c0, mut r1, mut c1) = (i32::MAX, i32::MAX, i32::MIN, i32::MIN);
        for c in cells {
            r0 = r0.min(c.row);
            c0 = c0.min(c.col);
            r1 = r1.max(c.row);
            c1 = c1.max(c.col);
        }
        if r0 > r1 {
            return Window::full(rows, cols);
        }
        let r0 = (r0 - margin).max(0);
        let c0 = (c0 - margin).max(0);
        let r1 = (r1 + margin).min(rows as i32 - 1);
        let c1 = (c1 + margin).min(cols as i32 - 1);
        Window {
            row0: r0,
            col0: c0,
            rows: (r1 - r0 + 1).max(0) as usize,
            cols: (c1 - c0 + 1).max(0) as usize,
        }
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.row >= self.row0
            && c.col >= self.col0
            && c.row < self.row0 + self.rows as i32
            && c.col < self.col0 + self.cols as i32
    }

    fn local(&self, c: Cell) -> Option<usize> {
        self.contains(c)
            .then(|| (c.row - self.row0) as usize * self.cols + (c.col - self.col0) as usize)
    }

    fn global(&self, i: usize) -> Cell {
        Cell::new(
            self.row0 + (i / self.cols) as i32,
            self.col0 + (i % self.cols) as i32,
        )
    }
}

/// Binary traversability over a window, after obstacle inflation.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanGrid {
    window: Window,
    passable: Vec<bool>,
    cell_size: f64,
}

/// Cell offsets of a disk of `radius` cells.
pub fn disk_offsets(radius: i32) -> Vec<(i32, i32)> {
    let mut out = Vec::new();
    for dr in -radius..=radius {
        for dc in -radius..=radius {
            if dr * dr + dc * dc <= radius * radius {
                out.push((dr, dc));
            }
        }
    }
    out
}

impl PlanGrid {
    /// Builds the free-space mask: cells within `inflation` (Euclidean,
    /// cells) of an obstacle are blocked, then every non-obstacle cell within
    /// `inflation` of a `carve` cell is reopened. Carving keeps goals and the
    /// agent's own neighborhood reachable.
    pub fn build(
        window: Window,
        cell_size: f64,
        is_obstacle: impl Fn(Cell) -> bool,
        inflation: i32,
        carve: &[Cell],
    ) -> PlanGrid {
        let n = window.rows * window.cols;
        let mut raw = vec![false; n];
        for (i, slot) in raw.iter_mut().enumerate() {
            *slot = is_obstacle(window.global(i));
        }
        let mut passable = vec![true; n];
        let disk = disk_offsets(inflation);
        // Obstacles just outside the window still inflate into it.
        let pad = inflation;
        for r in window.row0 - pad..window.row0 + window.rows as i32 + pad {
            for c in window.col0 - pad..window.col0 + window.cols as i32 + pad {
                let cell = Cell::new(r, c);
                let obstacle = match window.local(cell) {
                    Some(i) => raw[i],
                    None => is_obstacle(cell),
                };
                if !obstacle {
                    continue;
                }
                for &(dr, dc) in &disk {
                    if let Some(j) = window.local(cell.offset(dr, dc)) {
                        passable[j] = false;
                    }
                }
            }
        }
        for &g in carve {
            for &(dr, dc) in &disk {
                if let Some(j) = window.local(g.offset(dr, dc)) {
                    if !raw[j] {
                        passable[j] = true;
                    }
                }
            }
        }
        PlanGrid {
            window,
            passable,
            cell_size,
        }
    }

    /// Uninflated mask straight from a boolean obstacle grid.
    pub fn from_obstacles(obstacles: &Grid<bool>, cell_size: f64) -> PlanGrid {
        let window = Window::full(obstacles.rows(), obstacles.cols());
        PlanGrid {
            window,
            passable: obstacles.as_slice().iter().map(|o| !o).collect(),
            cell_size,
        }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn passable(&self, c: Cell) -> bool {
        self.window.local(c).is_some_and(|i| self.passable[i])
    }

    pub fn set_passable(&mut self, c: Cell, v: bool) {
        if let Some(i) = self.window.local(c) {
            self.passable[i] = v;
        }
    }
}

/// Geodesic distance in meters to the goal set; `+∞` where unreachable.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    window: Window,
    values: Vec<f64>,
    cell_size: f64,
}

impl DistanceField {
    pub fn get(&self, c: Cell) -> f64 {
        self.window
            .local(c)
            .map_or(f64::INFINITY, |i| self.values[i])
    }

    pub fn at_point(&self, p: Point) -> f64 {
        self.get(Cell::containing(p, self.cell_size))
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn finite_cells(&self) -> impl Iterator<Item = (Cell, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, v)| (self.window.global(i), *v))
    }

    /// Greedy 8-neighbor descent from `start`, at most `max_len` cells.
    pub fn descent_path(&self, start: Cell, max_len: usize) -> Vec<Cell> {
        let mut path = vec![start];
        let mut cur = start;
        let mut v = self.get(cur);
        while path.len() < max_len && v > 0.0 && v.is_finite() {
            let Some((next, nv)) = cur
                .neighbors8()
                .into_iter()
                .map(|n| (n, self.get(n)))
                .filter(|(_, nv)| *nv < v)
                .min_by(|a, b| a.1.total_cmp(&b.1))
            else {
                break;
            };
            path.push(next);
            cur = next;
            v = nv;
        }
        path
    }
}

#[derive(Copy, Clone, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on value, then index for determinism.
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// First-order upwind (Godunov) solution of |∇u| = 1 from the values of the
/// two axis neighbors, `a` along columns and `b` along rows.
pub fn upwind_update(a: f64, b: f64, h: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if !lo.is_finite() {
        return f64::INFINITY;
    }
    if !hi.is_finite() || hi - lo >= h {
        return lo + h;
    }
    let d = hi - lo;
    0.5 * (lo + hi + (2.0 * h * h - d * d).sqrt())
}

/// Early termination: once `cell` is accepted, keep marching only until
/// values exceed its value by `margin` meters.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct StopAt {
    pub cell: Cell,
    pub margin: f64,
}

/// Fast Marching from `goals` over the passable cells of `grid`. Goal cells
/// are seeded at zero even when they are not passable themselves.
pub fn fast_march(grid: &PlanGrid, goals: &[Cell], stop: Option<StopAt>) -> DistanceField {
    let w = grid.window;
    let n = w.rows * w.cols;
    let h = grid.cell_size;
    let mut values = vec![f64::INFINITY; n];
    let mut known = vec![false; n];
    let mut heap = BinaryHeap::new();
    for g in goals {
        if let Some(i) = w.local(*g) {
            if values[i] != 0.0 {
                values[i] = 0.0;
                heap.push(Entry(0.0, i));
            }
        }
    }
    let stop_index = stop.and_then(|s| w.local(s.cell).map(|i| (i, s.margin)));
    let mut limit = f64::INFINITY;
    let cols = w.cols as i32;
    let rows = w.rows as i32;
    while let Some(Entry(v, i)) = heap.pop() {
        if known[i] || v > values[i] {
            continue;
        }
        if v > limit {
            break;
        }
        known[i] = true;
        if let Some((si, margin)) = stop_index {
            if si == i {
                limit = v + margin;
            }
        }
        let r = (i / w.cols) as i32;
        let c = (i % w.cols) as i32;
        for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= rows || nc >= cols {
                continue;
            }
            let j = nr as usize * w.cols + nc as usize;
            if known[j] || !grid.passable[j] {
                continue;
            }
            let pick = |a: Option<usize>, b: Option<usize>| -> f64 {
                let va = a.filter(|&k| known[k]).map_or(f64::INFINITY, |k| values[k]);
                let vb = b.filter(|&k| known[k]).map_or(f64::INFINITY, |k| values[k]);
                va.min(vb)
            };
            let idx = |rr: i32, cc: i32| -> Option<usize> {
                (rr >= 0 && cc >= 0 && rr < rows && cc < cols).then(|| rr as usize * w.cols + cc as usize)
            };
            let a = pick(idx(nr, nc - 1), idx(nr, nc + 1));
            let b = pick(idx(nr - 1, nc), idx(nr + 1, nc));
            let u = upwind_update(a, b, h);
            if u < values[j] {
                values[j] = u;
                heap.push(Entry(u, j));
            }
        }
    }
    for (v, k) in values.iter_mut().zip(&known) {
        if !k {
            *v = f64::INFINITY;
        }
    }
    DistanceField {
        window: w,
        values,
        cell_size: h,
    }
}

/// Plans a distance field to `goals`. Fails when no cell outside the goal
/// set can reach it.
pub fn plan(grid: &PlanGrid, goals: &[Cell]) -> Result<DistanceField, PlanError> {
    plan_with(grid, goals, None)
}

pub fn plan_with(
    grid: &PlanGrid,
    goals: &[Cell],
    stop: Option<StopAt>,
) -> Result<DistanceField, PlanError> {
    let field = fast_march(grid, goals, stop);
    let reaches_out = field.values.iter().any(|v| v.is_finite() && *v > 0.0);
    if reaches_out {
        Ok(field)
    } else {
        Err(PlanError::Unreachable)
    }
}

/// Step geometry the controller plans with.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub step_size_m: f64,
    pub turn_deg: f64,
}

impl Default for Controller {
    fn default() -> Self {
        Controller {
            step_size_m: 0.25,
            turn_deg: 30.0,
        }
    }
}

impl Controller {
    fn turn_toward(&self, heading: f64, desired: f64) -> Action {
        let diff = angle_diff_deg(heading, desired);
        if diff.abs() <= self.turn_deg / 2.0 {
            Action::Forward
        } else if diff > 0.0 {
            Action::TurnLeft
        } else {
            Action::TurnRight
        }
    }

    /// Endpoint value of a forward step along `heading`, if every cell the
    /// step sweeps is passable.
    fn step_value(&self, pose: &Pose, heading: f64, field: &DistanceField, grid: &PlanGrid) -> Option<f64> {
        let start = pose.point();
        let end = start.advance(heading, self.step_size_m);
        let cs = field.cell_size;
        let own = Cell::containing(start, cs);
        let mut ok = true;
        walk_segment(start, end, cs, |c, _, _| {
            ok = c == own || grid.passable(c);
            ok
        });
        let v = field.at_point(end);
        (ok && v.is_finite()).then_some(v)
    }

    /// Next discrete action descending `field`. Stops when the field value
    /// at the agent drops below `stop_radius`; a radius of 0 never stops.
    pub fn next_action(
        &self,
        pose: &Pose,
        field: &DistanceField,
        grid: &PlanGrid,
        stop_radius: f64,
    ) -> Result<Action, PlanError> {
        let here = field.at_point(pose.point());
        if !here.is_finite() {
            return Err(PlanError::Unreachable);
        }
        if here < stop_radius {
            return Ok(Action::Stop);
        }
        let headings = (360.0 / self.turn_deg).round() as usize;
        let mut best: Option<(f64, f64, f64)> = None; // (value, |turn|, heading)
        for k in 0..headings {
            let h = wrap_deg(k as f64 * self.turn_deg);
            let Some(v) = self.step_value(pose, h, field, grid) else {
                continue;
            };
            if v >= here - 1e-9 {
                continue;
            }
            let turn = angle_diff_deg(pose.heading_deg, h).abs();
            let better = match best {
                None => true,
                Some((bv, bt, _)) => v < bv - 1e-12 || ((v - bv).abs() <= 1e-12 && turn < bt),
            };
            if better {
                best = Some((v, turn, h));
            }
        }
        if let Some((_, _, h)) = best {
            return Ok(self.turn_toward(pose.heading_deg, h));
        }
        // No straight step descends: aim along the grid descent path instead.
        let cs = field.cell_size;
        let here_cell = Cell::containing(pose.point(), cs);
        let path = field.descent_path(here_cell, 6);
        let Some(&target) = path.last().filter(|&&c| c != here_cell) else {
            return Ok(Action::TurnLeft);
        };
        let p = pose.point();
        let t = target.center(cs);
        let bearing = (t.y - p.y).atan2(t.x - p.x).to_degrees();
        let desired = wrap_deg((bearing / self.turn_deg).round() * self.turn_deg);
        Ok(self.turn_toward(pose.heading_deg, desired))
    }
}

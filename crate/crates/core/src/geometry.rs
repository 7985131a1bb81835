//! Grid cells, dense 2D grids, dilation and the rigid transforms shared by
//! the simulator and the agent.
//!
//! Convention: a point is `(x, y)` in meters, a cell is `(row, col)` with
//! `col = floor(x / cell)` and `row = floor(y / cell)`. Heading 0° points
//! along +x and angles grow counter-clockwise (towards +y).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Side of one grid cell in meters.
pub const CELL_SIZE_M: f64 = 0.05;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Cell {
    pub row: i32,
    pub col: i32,
}

impl From<[i32; 2]> for Cell {
    fn from([row, col]: [i32; 2]) -> Self {
        Cell { row, col }
    }
}

impl From<Cell> for [i32; 2] {
    fn from(c: Cell) -> Self {
        [c.row, c.col]
    }
}

impl Cell {
    pub const fn new(row: i32, col: i32) -> Self {
        Cell { row, col }
    }

    pub fn offset(self, dr: i32, dc: i32) -> Self {
        Cell::new(self.row + dr, self.col + dc)
    }

    pub fn neighbors4(self) -> [Cell; 4] {
        [
            self.offset(-1, 0),
            self.offset(1, 0),
            self.offset(0, -1),
            self.offset(0, 1),
        ]
    }

    pub fn neighbors8(self) -> [Cell; 8] {
        [
            self.offset(-1, -1),
            self.offset(-1, 0),
            self.offset(-1, 1),
            self.offset(0, -1),
            self.offset(0, 1),
            self.offset(1, -1),
            self.offset(1, 0),
            self.offset(1, 1),
        ]
    }

    pub fn chebyshev(self, other: Cell) -> i32 {
        (self.row - other.row).abs().max((self.col - other.col).abs())
    }

    /// Euclidean distance between cell centers, in cells.
    pub fn euclidean(self, other: Cell) -> f64 {
        let dr = f64::from(self.row - other.row);
        let dc = f64::from(self.col - other.col);
        dr.hypot(dc)
    }

    /// Center of the cell in meters.
    pub fn center(self, cell_size: f64) -> Point {
        Point::new(
            (f64::from(self.col) + 0.5) * cell_size,
            (f64::from(self.row) + 0.5) * cell_size,
        )
    }

    pub fn containing(p: Point, cell_size: f64) -> Cell {
        Cell::new(
            (p.y / cell_size).floor() as i32,
            (p.x / cell_size).floor() as i32,
        )
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn advance(self, heading_deg: f64, dist: f64) -> Point {
        let (s, c) = heading_deg.to_radians().sin_cos();
        Point::new(self.x + c * dist, self.y + s * dist)
    }
}

/// Normalizes an angle in degrees to `[0, 360)`.
pub fn wrap_deg(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Signed smallest difference `to - from` in `(-180, 180]`.
pub fn angle_diff_deg(from: f64, to: f64) -> f64 {
    let d = (to - from).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Dense row-major 2D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(rows: usize, cols: usize, fill: T) -> Self {
        Grid {
            rows,
            cols,
            data: vec![fill; rows * cols],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "grid data length");
        Grid { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.row >= 0 && c.col >= 0 && (c.row as usize) < self.rows && (c.col as usize) < self.cols
    }

    pub fn index(&self, c: Cell) -> Option<usize> {
        self.in_bounds(c)
            .then(|| c.row as usize * self.cols + c.col as usize)
    }

    pub fn cell_of(&self, index: usize) -> Cell {
        Cell::new((index / self.cols) as i32, (index % self.cols) as i32)
    }

    pub fn get(&self, c: Cell) -> Option<&T> {
        self.index(c).map(|i| &self.data[i])
    }

    pub fn get_mut(&mut self, c: Cell) -> Option<&mut T> {
        self.index(c).map(move |i| &mut self.data[i])
    }

    pub fn set(&mut self, c: Cell, v: T) -> bool {
        match self.get_mut(c) {
            Some(slot) => {
                *slot = v;
                true
            }
            None => false,
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.data.len()).map(|i| self.cell_of(i))
    }
}

/// Square (Chebyshev) dilation of a cell set by `radius` cells.
pub fn dilate(cells: &BTreeSet<Cell>, radius: i32) -> BTreeSet<Cell> {
    let mut out = BTreeSet::new();
    for c in cells {
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                out.insert(c.offset(dr, dc));
            }
        }
    }
    out
}

/// True when some cell of `a` lies within Chebyshev distance `radius` of a
/// cell of `b`, i.e. `dilate(a, radius) ∩ b ≠ ∅`.
pub fn within_dilation(a: &BTreeSet<Cell>, b: &BTreeSet<Cell>, radius: i32) -> bool {
    // Range queries on the ordered set keep this cheap for compact footprints.
    a.iter().any(|c| {
        let lo = Cell::new(c.row - radius, i32::MIN);
        let hi = Cell::new(c.row + radius, i32::MAX);
        b.range(lo..=hi).any(|o| (o.col - c.col).abs() <= radius)
    })
}

/// Pose in a planar frame: position in meters, heading in degrees.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading_deg: f64,
}

impl Pose {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }

    /// Body-frame `(forward, left)` offset to the frame this pose lives in.
    pub fn body_to_frame(&self, forward: f64, left: f64) -> Point {
        let (s, c) = self.heading_deg.to_radians().sin_cos();
        Point::new(
            self.x + c * forward - s * left,
            self.y + s * forward + c * left,
        )
    }

    /// Inverse of [`Pose::body_to_frame`].
    pub fn frame_to_body(&self, p: Point) -> (f64, f64) {
        let (s, c) = self.heading_deg.to_radians().sin_cos();
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

/// Rigid transform between the simulator's world frame and an agent's map
/// frame. The map frame is anchored so that `anchor_world` lands on the
/// center of `anchor_cell` with the anchor heading pointing east.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapFrame {
    pub anchor_world: Pose,
    pub anchor_cell: Cell,
    pub cell_size: f64,
}

impl MapFrame {
    pub fn new(anchor_world: Pose, anchor_cell: Cell, cell_size: f64) -> Self {
        MapFrame {
            anchor_world,
            anchor_cell,
            cell_size,
        }
    }

    pub fn world_to_map(&self, p: Point) -> Point {
        let (fwd, left) = self.anchor_world.frame_to_body(p);
        let c = self.anchor_cell.center(self.cell_size);
        Point::new(c.x + fwd, c.y + left)
    }

    pub fn map_to_world(&self, p: Point) -> Point {
        let c = self.anchor_cell.center(self.cell_size);
        self.anchor_world.body_to_frame(p.x - c.x, p.y - c.y)
    }

    pub fn pose_to_map(&self, pose: &Pose) -> Pose {
        let p = self.world_to_map(pose.point());
        Pose {
            x: p.x,
            y: p.y,
            heading_deg: wrap_deg(pose.heading_deg - self.anchor_world.heading_deg),
        }
    }

    pub fn world_cell_to_map(&self, c: Cell) -> Cell {
        Cell::containing(self.world_to_map(c.center(self.cell_size)), self.cell_size)
    }

    pub fn map_cell_to_world(&self, c: Cell) -> Cell {
        Cell::containing(self.map_to_world(c.center(self.cell_size)), self.cell_size)
    }
}

/// Grid traversal along a ray (Amanatides–Woo). Calls `visit(cell, t_enter,
/// t_exit)` for every cell the ray passes through up to `max_t` meters, in
/// order; stops early when `visit` returns `false`.
pub fn walk_ray(
    origin: Point,
    heading_deg: f64,
    max_t: f64,
    cell_size: f64,
    mut visit: impl FnMut(Cell, f64, f64) -> bool,
) {
    let (dy, dx) = heading_deg.to_radians().sin_cos();
    let mut cell = Cell::containing(origin, cell_size);
    let step_c = if dx > 0.0 { 1 } else { -1 };
    let step_r = if dy > 0.0 { 1 } else { -1 };
    let inv = |d: f64| if d.abs() < 1e-12 { f64::INFINITY } else { 1.0 / d.abs() };
    let delta_x = cell_size * inv(dx);
    let delta_y = cell_size * inv(dy);
    let next_boundary = |pos: f64, idx: i32, step: i32| -> f64 {
        if step > 0 {
            f64::from(idx + 1) * cell_size - pos
        } else {
            pos - f64::from(idx) * cell_size
        }
    };
    let mut t_max_x = if dx.abs() < 1e-12 {
        f64::INFINITY
    } else {
        next_boundary(origin.x, cell.col, step_c) * inv(dx)
    };
    let mut t_max_y = if dy.abs() < 1e-12 {
        f64::INFINITY
    } else {
        next_boundary(origin.y, cell.row, step_r) * inv(dy)
    };
    let mut t_enter = 0.0;
    loop {
        let t_exit = t_max_x.min(t_max_y);
        if !visit(cell, t_enter, t_exit.min(max_t)) || t_exit >= max_t {
            return;
        }
        t_enter = t_exit;
        if t_max_x < t_max_y {
            cell.col += step_c;
            t_max_x += delta_x;
        } else {
            cell.row += step_r;
            t_max_y += delta_y;
        }
    }
}

/// Walks the straight segment `a → b`, see [`walk_ray`].
pub fn walk_segment(
    a: Point,
    b: Point,
    cell_size: f64,
    visit: impl FnMut(Cell, f64, f64) -> bool,
) {
    let len = a.dist(b);
    let heading = (b.y - a.y).atan2(b.x - a.x).to_degrees();
    walk_ray(a, heading, len, cell_size, visit);
}

//! Reference implementations the library is checked against. Each one is
//! written the slow, obvious way and shares no code with the crate. The
//! generators at the end build random inputs for them.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::path::PathBuf;

use goat_core::features::{Feature, FeatureModel};
use goat_core::geometry::{dilate, Cell, Grid};
use goat_core::instance_memory::{InstanceMemory, ViewRecord};
use goat_core::semantic_map::SemanticMap;
use goat_core::sim::WorldSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn load(name: &str) -> WorldSpec {
    goat_core::sim::load_world(fixture(name)).unwrap()
}

/// World from a 0/1 grid with walls and the given objects/persons JSON.
pub fn world_from_cells(cells: &[Vec<u8>], objects: &str, persons: &str) -> WorldSpec {
    let text = format!(
        r#"{{"name": "test", "cells": {}, "cell_size_m": 0.05, "objects": {objects}, "persons": {persons}}}"#,
        serde_json::to_string(cells).unwrap()
    );
    WorldSpec::from_json(&text, &FeatureModel::default()).unwrap()
}

/// Room of `rows × cols` cells with a one-cell wall border.
pub fn walled_room(rows: usize, cols: usize) -> Vec<Vec<u8>> {
    let mut cells = vec![vec![0u8; cols]; rows];
    for (r, row) in cells.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            if r == 0 || c == 0 || r == rows - 1 || c == cols - 1 {
                *v = 1;
            }
        }
    }
    cells
}

#[derive(PartialEq)]
struct Node(f64, usize);
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

/// 8-connected Dijkstra over `free` (row-major), edge lengths h and h√2.
/// Diagonal moves are allowed only when both side cells are free.
pub fn dijkstra8(free: &[bool], rows: usize, cols: usize, goals: &[(usize, usize)], h: f64) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; rows * cols];
    let mut heap = BinaryHeap::new();
    for &(r, c) in goals {
        dist[r * cols + c] = 0.0;
        heap.push(Node(0.0, r * cols + c));
    }
    while let Some(Node(d, i)) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        let (r, c) = ((i / cols) as i64, (i % cols) as i64);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                    continue;
                }
                let j = nr as usize * cols + nc as usize;
                if !free[j] {
                    continue;
                }
                if dr != 0 && dc != 0 {
                    let a = (r + dr) as usize * cols + c as usize;
                    let b = r as usize * cols + (c + dc) as usize;
                    if !free[a] || !free[b] {
                        continue;
                    }
                }
                let w = if dr != 0 && dc != 0 { h * 2f64.sqrt() } else { h };
                if d + w < dist[j] {
                    dist[j] = d + w;
                    heap.push(Node(d + w, j));
                }
            }
        }
    }
    dist
}

/// Connected components over detections: an edge joins two detections of
/// the same category whose cells come within Chebyshev distance `p`.
/// Returns groups of detection indices, each sorted, ordered by first index.
pub fn detection_components(dets: &[(BTreeSet<Cell>, u32)], p: i32) -> Vec<Vec<usize>> {
    let n = dets.len();
    let near = |a: &BTreeSet<Cell>, b: &BTreeSet<Cell>| a.iter().any(|x| b.iter().any(|y| x.chebyshev(*y) <= p));
    let mut label: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if dets[i].1 == dets[j].1 && label[j] < label[i] && near(&dets[i].0, &dets[j].0) {
                    label[i] = label[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, l) in label.into_iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Least squares for `d ≈ a·x + b` via the 2×2 normal equations and
/// Cramer's rule.
pub fn normal_equations(x: &[f64], d: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sd: f64 = d.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxd: f64 = x.iter().zip(d).map(|(a, b)| a * b).sum();
    let det = sxx * n - sx * sx;
    ((sxd * n - sx * sd) / det, (sxx * sd - sx * sxd) / det)
}

/// Frontier cells by the definition, read channel by channel, and their
/// 8-connected clusters.
pub fn frontier_scan(map: &SemanticMap) -> (BTreeSet<Cell>, BTreeSet<Vec<Cell>>) {
    let m = map.side() as i32;
    let obstacle = map.obstacle_channel();
    let explored = map.explored_channel();
    let exp = |r: i32, c: i32| r >= 0 && c >= 0 && r < m && c < m && map.get(explored, Cell::new(r, c)) == 1;
    let mut cells = BTreeSet::new();
    for r in 0..m {
        for c in 0..m {
            if !exp(r, c) || map.get(obstacle, Cell::new(r, c)) == 1 {
                continue;
            }
            if !exp(r - 1, c) || !exp(r + 1, c) || !exp(r, c - 1) || !exp(r, c + 1) {
                cells.insert(Cell::new(r, c));
            }
        }
    }
    let list: Vec<Cell> = cells.iter().copied().collect();
    let mut label: Vec<usize> = (0..list.len()).collect();
    loop {
        let mut changed = false;
        for i in 0..list.len() {
            for j in 0..list.len() {
                if label[j] < label[i] && list[i].chebyshev(list[j]) == 1 {
                    label[i] = label[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: BTreeMap<usize, Vec<Cell>> = BTreeMap::new();
    for (i, l) in label.into_iter().enumerate() {
        groups.entry(l).or_default().push(list[i]);
    }
    (cells, groups.into_values().collect())
}

/// Distance along a ray to the first blocked cell other than the origin's,
/// found by stepping 0.5 mm at a time. `blocked` sees world cells.
pub fn march_ray(
    x: f64,
    y: f64,
    heading_deg: f64,
    max_m: f64,
    cell_size: f64,
    blocked: impl Fn(Cell) -> bool,
) -> f64 {
    let own = Cell::new((y / cell_size).floor() as i32, (x / cell_size).floor() as i32);
    let (s, c) = heading_deg.to_radians().sin_cos();
    let step = 0.0005;
    let mut t = 0.0;
    while t < max_m {
        let px = x + c * t;
        let py = y + s * t;
        let cell = Cell::new((py / cell_size).floor() as i32, (px / cell_size).floor() as i32);
        if cell != own && blocked(cell) {
            return t;
        }
        t += step;
    }
    f64::INFINITY
}

// Random inputs and checks shared by the module tests and the acceptance run.

pub fn block(r: i32, c: i32, h: i32, w: i32) -> BTreeSet<Cell> {
    (r..r + h).flat_map(|rr| (c..c + w).map(move |cc| Cell::new(rr, cc))).collect()
}

/// Random rectangles of wall on an `n × n` grid with a border.
pub fn random_map(seed: u64, n: usize) -> Grid<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Grid::new(n, n, false);
    for i in 0..n as i32 {
        for c in [Cell::new(0, i), Cell::new(n as i32 - 1, i), Cell::new(i, 0), Cell::new(i, n as i32 - 1)] {
            g.set(c, true);
        }
    }
    for _ in 0..rng.random_range(3..12) {
        let (r, c) = (rng.random_range(1..n as i32 - 1), rng.random_range(1..n as i32 - 1));
        let (h, w) = (rng.random_range(1..n as i32 / 3), rng.random_range(1..n as i32 / 3));
        for rr in r..(r + h).min(n as i32 - 1) {
            for cc in c..(c + w).min(n as i32 - 1) {
                g.set(Cell::new(rr, cc), true);
            }
        }
    }
    g
}

pub fn random_free(g: &Grid<bool>, rng: &mut ChaCha8Rng) -> Cell {
    loop {
        let c = Cell::new(rng.random_range(0..g.rows() as i32), rng.random_range(0..g.cols() as i32));
        if !g.get(c).unwrap() {
            return c;
        }
    }
}

/// Feeds `dets` to a fresh memory in order and compares the result with the
/// component oracle. Also checks same-category separation after every call,
/// cell unions and view counts.
pub fn association_agrees(dets: &[(BTreeSet<Cell>, u32)], p: i32) -> Result<(), String> {
    let mut mem = InstanceMemory::new(p);
    let mut owner: Vec<u32> = Vec::new();
    for (t, (cells, cat)) in dets.iter().enumerate() {
        let f = Feature(vec![0.0, 1.0]);
        let view = ViewRecord {
            bbox: f.clone(),
            bbox_pad: f.clone(),
            full: f,
            distance_m: 2.0,
            step: t as u32,
        };
        let a = mem.associate(cells, *cat, view);
        for o in owner.iter_mut() {
            if a.absorbed.contains(o) {
                *o = a.id;
            }
        }
        owner.push(a.id);
        let all: Vec<_> = mem.instances().collect();
        for (i, x) in all.iter().enumerate() {
            for y in &all[i + 1..] {
                if x.category == y.category && !dilate(&x.cells, p).is_disjoint(&y.cells) {
                    return Err(format!("instances {} and {} touch after detection {t}", x.id, y.id));
                }
            }
        }
    }
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, id) in owner.iter().enumerate() {
        groups.entry(*id).or_default().push(i);
    }
    let got: BTreeSet<Vec<usize>> = groups.values().cloned().collect();
    let want: BTreeSet<Vec<usize>> = detection_components(dets, p).into_iter().collect();
    if got != want {
        return Err(format!("partition {got:?} but components {want:?}"));
    }
    for (id, members) in &groups {
        let inst = mem.get(*id).ok_or(format!("instance {id} missing"))?;
        let union: BTreeSet<Cell> = members.iter().flat_map(|&i| dets[i].0.iter().copied()).collect();
        if inst.cells != union {
            return Err(format!("instance {id} cells differ from its detections"));
        }
        if inst.views.len() != members.len() {
            return Err(format!("instance {id} has {} views for {} detections", inst.views.len(), members.len()));
        }
    }
    if mem.total_views() != dets.len() || mem.len() != groups.len() {
        return Err("view or instance count mismatch".into());
    }
    Ok(())
}

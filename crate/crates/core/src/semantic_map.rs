//! The K×M×M integer map: one instance-id channel per category followed by
//! obstacle, explored, current-location and past-location channels.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Cell, CELL_SIZE_M};
use crate::instance_memory::InstanceMemory;
use crate::planner::DistanceField;

pub const DEFAULT_MAP_SIDE: usize = 300;
pub const SNAPSHOT_VERSION: u32 = 1;

/// Cells carrying one instance id in one category channel.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCells {
    pub category: u32,
    pub id: u32,
    pub cells: Vec<Cell>,
}

/// Everything one observation writes into the map.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MapUpdate {
    pub labeled: Vec<LabeledCells>,
    /// Depth returns (obstacles).
    pub hits: Vec<Cell>,
    /// Cells traversed by rays this step.
    pub free: Vec<Cell>,
    pub agent: Option<Cell>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticMap {
    categories: u32,
    side: usize,
    cell_size: f64,
    agent: Cell,
    data: Vec<i32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontierCluster {
    pub cells: Vec<Cell>,
    /// Cluster cell with the smallest distance (first cell when none is
    /// reachable).
    pub nearest: Cell,
    /// Geodesic distance from the agent in meters, `+∞` when unreachable.
    pub distance_m: f64,
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    version: u32,
    k: usize,
    m: usize,
    c: u32,
    cell_size: f64,
    agent: Cell,
}

/// Creates an all-zero map with the agent at the center cell.
pub fn init_map(categories: u32, side: usize) -> Result<SemanticMap> {
    if categories < 1 || side < 3 {
        return Err(Error::InvalidMapDimensions { categories, side });
    }
    let k = categories as usize + 4;
    let mut map = SemanticMap {
        categories,
        side,
        cell_size: CELL_SIZE_M,
        agent: Cell::new((side / 2) as i32, (side / 2) as i32),
        data: vec![0; k * side * side],
    };
    let agent = map.agent;
    map.put(map.current_channel(), agent, 1);
    Ok(map)
}

impl SemanticMap {
    pub fn categories(&self) -> u32 {
        self.categories
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channels(&self) -> usize {
        self.categories as usize + 4
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn obstacle_channel(&self) -> usize {
        self.categories as usize
    }

    pub fn explored_channel(&self) -> usize {
        self.categories as usize + 1
    }

    pub fn current_channel(&self) -> usize {
        self.categories as usize + 2
    }

    pub fn past_channel(&self) -> usize {
        self.categories as usize + 3
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.data
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.row >= 0 && c.col >= 0 && (c.row as usize) < self.side && (c.col as usize) < self.side
    }

    fn idx(&self, channel: usize, c: Cell) -> Option<usize> {
        self.in_bounds(c)
            .then(|| (channel * self.side + c.row as usize) * self.side + c.col as usize)
    }

    /// Value at `(channel, cell)`; 0 outside the map.
    pub fn get(&self, channel: usize, c: Cell) -> i32 {
        self.idx(channel, c).map_or(0, |i| self.data[i])
    }

    fn put(&mut self, channel: usize, c: Cell, v: i32) {
        if let Some(i) = self.idx(channel, c) {
            self.data[i] = v;
        }
    }

    pub fn is_obstacle(&self, c: Cell) -> bool {
        self.get(self.obstacle_channel(), c) != 0
    }

    pub fn is_explored(&self, c: Cell) -> bool {
        self.get(self.explored_channel(), c) != 0
    }

    pub fn agent_cell(&self) -> Cell {
        self.agent
    }

    pub fn instance_at(&self, category: u32, c: Cell) -> Option<u32> {
        let v = self.get(category as usize, c);
        (v > 0).then_some(v as u32)
    }

    /// Writes one observation. Free cells are applied first, so a cell both
    /// traversed and returned by different rays ends up an obstacle. Returns
    /// the cells whose obstacle bit changed.
    pub fn update(&mut self, upd: &MapUpdate, memory: &InstanceMemory) -> Result<Vec<Cell>> {
        for l in &upd.labeled {
            if l.category >= self.categories {
                return Err(Error::CategoryMismatch {
                    id: l.id,
                    expected: l.category,
                    actual: self.categories,
                });
            }
            let inst = memory.get(l.id).ok_or(Error::UnknownInstance(l.id))?;
            if inst.category != l.category {
                return Err(Error::CategoryMismatch {
                    id: l.id,
                    expected: inst.category,
                    actual: l.category,
                });
            }
        }
        let (obs, exp) = (self.obstacle_channel(), self.explored_channel());
        let before: Vec<(Cell, i32)> = upd
            .free
            .iter()
            .chain(&upd.hits)
            .chain(upd.labeled.iter().flat_map(|l| &l.cells))
            .map(|&c| (c, self.get(obs, c)))
            .collect();
        for &c in &upd.free {
            self.put(exp, c, 1);
            self.put(obs, c, 0);
        }
        for &c in &upd.hits {
            self.put(exp, c, 1);
            self.put(obs, c, 1);
        }
        for l in &upd.labeled {
            for &c in &l.cells {
                self.put(l.category as usize, c, l.id as i32);
                self.put(obs, c, 1);
                self.put(exp, c, 1);
            }
        }
        if let Some(a) = upd.agent {
            self.move_agent(a);
        }
        let mut changed: Vec<Cell> = before
            .into_iter()
            .filter(|&(c, v)| self.get(obs, c) != v)
            .map(|(c, _)| c)
            .collect();
        changed.sort_unstable();
        changed.dedup();
        Ok(changed)
    }

    pub fn move_agent(&mut self, a: Cell) {
        if !self.in_bounds(a) {
            return;
        }
        let cur = self.current_channel();
        self.put(cur, self.agent, 0);
        self.agent = a;
        self.put(cur, a, 1);
        self.put(self.past_channel(), a, 1);
        self.put(self.explored_channel(), a, 1);
    }

    /// Rewrites ids in `category`'s channel after instance merges.
    pub fn relabel(&mut self, category: u32, from: &[u32], to: u32) {
        if from.is_empty() {
            return;
        }
        let ch = category as usize;
        let start = ch * self.side * self.side;
        for v in &mut self.data[start..start + self.side * self.side] {
            if *v > 0 && from.contains(&(*v as u32)) {
                *v = to as i32;
            }
        }
    }

    /// Clears `id` from `cells` in its category channel together with the
    /// obstacle bit (an instance that has moved away).
    /// Returns the cells that were cleared.
    pub fn clear_instance_cells(
        &mut self,
        category: u32,
        id: u32,
        cells: impl IntoIterator<Item = Cell>,
    ) -> Vec<Cell> {
        let obs = self.obstacle_channel();
        let mut cleared = Vec::new();
        for c in cells {
            if self.get(category as usize, c) == id as i32 {
                self.put(category as usize, c, 0);
                self.put(obs, c, 0);
                cleared.push(c);
            }
        }
        cleared
    }

    /// True when `c` is currently a frontier cell.
    pub fn is_frontier(&self, c: Cell) -> bool {
        self.is_explored(c)
            && !self.is_obstacle(c)
            && c.neighbors4().iter().any(|nb| !self.is_explored(*nb))
    }

    /// Zeroes everything except the agent's current location.
    pub fn reset(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0);
        let a = self.agent;
        self.put(self.current_channel(), a, 1);
    }

    /// Explored, non-obstacle cells with an unexplored 4-neighbor. Cells
    /// outside the map count as unexplored.
    pub fn frontier_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        let n = self.side as i32;
        for r in 0..n {
            for c in 0..n {
                let cell = Cell::new(r, c);
                if self.is_frontier(cell) {
                    out.push(cell);
                }
            }
        }
        out
    }

    /// 8-connected frontier clusters ordered by distance in `field`
    /// (ascending, unreachable last). Without a field all distances are
    /// infinite and clusters keep scan order.
    pub fn frontiers(&self, field: Option<&DistanceField>) -> Vec<FrontierCluster> {
        let cells: BTreeSet<Cell> = self.frontier_cells().into_iter().collect();
        let mut seen = BTreeSet::new();
        let mut clusters = Vec::new();
        for &start in &cells {
            if !seen.insert(start) {
                continue;
            }
            let mut stack = vec![start];
            let mut members = Vec::new();
            while let Some(c) = stack.pop() {
                members.push(c);
                for nb in c.neighbors8() {
                    if cells.contains(&nb) && seen.insert(nb) {
                        stack.push(nb);
                    }
                }
            }
            members.sort_unstable();
            let (nearest, distance_m) = members
                .iter()
                .map(|&c| (c, field.map_or(f64::INFINITY, |f| f.get(c))))
                .fold((members[0], f64::INFINITY), |best, cur| {
                    if cur.1 < best.1 {
                        cur
                    } else {
                        best
                    }
                });
            clusters.push(FrontierCluster {
                cells: members,
                nearest,
                distance_m,
            });
        }
        clusters.sort_by(|a, b| {
            a.distance_m
                .total_cmp(&b.distance_m)
                .then_with(|| a.nearest.cmp(&b.nearest))
        });
        clusters
    }

    /// Writes a one-line JSON header followed by the little-endian i32
    /// payload in channel, row, column order.
    pub fn write_snapshot(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = SnapshotHeader {
            version: SNAPSHOT_VERSION,
            k: self.channels(),
            m: self.side,
            c: self.categories,
            cell_size: self.cell_size,
            agent: self.agent,
        };
        let line = serde_json::to_string(&header).map_err(std::io::Error::other)?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_snapshot(r: impl Read) -> Result<SemanticMap> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)
            .map_err(|e| Error::Snapshot(format!("header: {e}")))?;
        let header: SnapshotHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Snapshot(format!("header: {e}")))?;
        if header.version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!(
                "version {} unsupported (expected {SNAPSHOT_VERSION})",
                header.version
            )));
        }
        if header.k != header.c as usize + 4 {
            return Err(Error::Snapshot(format!(
                "k = {} does not match c = {}",
                header.k, header.c
            )));
        }
        let n = header.k * header.m * header.m;
        let mut bytes = Vec::with_capacity(n * 4);
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Snapshot(format!("payload: {e}")))?;
        if bytes.len() != n * 4 {
            return Err(Error::Snapshot(format!(
                "payload has {} bytes, expected {}",
                bytes.len(),
                n * 4
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(SemanticMap {
            categories: header.c,
            side: header.m,
            cell_size: header.cell_size,
            agent: header.agent,
            data,
        })
    }

    pub fn snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_snapshot(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn restore(path: impl AsRef<Path>) -> Result<SemanticMap> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        SemanticMap::read_snapshot(file)
    }
}

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Feature, FeatureModel};
use crate::geometry::{Cell, Grid, CELL_SIZE_M};

/// Ids of scripted persons start here so they never collide with objects.
pub const PERSON_ID_BASE: u32 = 10_000;

/// Half side of a person's square footprint, in cells.
pub const PERSON_RADIUS_CELLS: i32 = 3;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorldFile {
    #[serde(default)]
    pub name: Option<String>,
    pub cells: Vec<Vec<u8>>,
    pub cell_size_m: f64,
    #[serde(default)]
    pub category_count: Option<u32>,
    #[serde(default)]
    pub category_names: Vec<String>,
    pub objects: Vec<ObjectFile>,
    #[serde(default)]
    pub persons: Vec<PersonFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObjectFile {
    pub id: u32,
    pub category: u32,
    pub footprint: Vec<Cell>,
    #[serde(default)]
    pub reflective: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PersonFile {
    pub waypoints: Vec<Cell>,
    pub active: [u32; 2],
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Occupant {
    Free,
    Wall,
    /// Index into [`WorldSpec::objects`].
    Object(usize),
}

#[derive(Clone, Debug)]
pub struct WorldObject {
    pub id: u32,
    pub category: u32,
    pub footprint: BTreeSet<Cell>,
    pub reflective: bool,
    pub latent_feature: Feature,
    pub context_feature: Feature,
}

/// A person walking a scripted loop: waypoint `k` is occupied at step
/// `active[0] + k (mod len)` while `active[0] <= t < active[1]`.
#[derive(Clone, Debug)]
pub struct PersonScript {
    pub id: u32,
    pub waypoints: Vec<Cell>,
    pub active: [u32; 2],
    pub latent_feature: Feature,
    pub context_feature: Feature,
}

#[derive(Clone, Debug)]
pub struct WorldSpec {
    pub name: String,
    pub cell_size: f64,
    pub category_count: u32,
    pub category_names: Vec<String>,
    pub objects: Vec<WorldObject>,
    pub persons: Vec<PersonScript>,
    /// Appearance model the latent and context vectors were drawn from.
    pub features: FeatureModel,
    occupancy: Grid<Occupant>,
}

impl WorldSpec {
    pub fn rows(&self) -> usize {
        self.occupancy.rows()
    }

    pub fn cols(&self) -> usize {
        self.occupancy.cols()
    }

    /// Static occupant of a cell; out-of-bounds reads as wall.
    pub fn occupant(&self, c: Cell) -> Occupant {
        self.occupancy.get(c).copied().unwrap_or(Occupant::Wall)
    }

    /// Free of walls and furniture (persons not considered).
    pub fn is_free(&self, c: Cell) -> bool {
        self.occupant(c) == Occupant::Free
    }

    pub fn occupancy(&self) -> &Grid<Occupant> {
        &self.occupancy
    }

    /// Category id used for people; one past the object categories.
    pub fn person_category(&self) -> u32 {
        self.category_count
    }

    pub fn object(&self, id: u32) -> Option<&WorldObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn from_file(file: WorldFile, features: &FeatureModel) -> Result<WorldSpec> {
        if (file.cell_size_m - CELL_SIZE_M).abs() > 1e-9 {
            return Err(Error::InvalidWorld(format!(
                "cell_size_m must be {CELL_SIZE_M}, got {}",
                file.cell_size_m
            )));
        }
        let rows = file.cells.len();
        let cols = file.cells.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 || file.cells.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidWorld("cells must be a non-empty rectangle".into()));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for row in &file.cells {
            for &v in row {
                data.push(match v {
                    0 => Occupant::Free,
                    1 => Occupant::Wall,
                    other => {
                        return Err(Error::InvalidWorld(format!("cell value {other} not in {{0,1}}")))
                    }
                });
            }
        }
        let mut occupancy = Grid::from_vec(rows, cols, data);

        let max_cat = file.objects.iter().map(|o| o.category + 1).max().unwrap_or(0);
        let category_count = file.category_count.unwrap_or(max_cat.max(1));
        if category_count == 0 {
            return Err(Error::InvalidWorld("category_count must be >= 1".into()));
        }

        let mut ids = HashSet::new();
        let mut objects = Vec::with_capacity(file.objects.len());
        for (index, o) in file.objects.iter().enumerate() {
            let bad = |reason: String| Error::InvalidObject { id: o.id, reason };
            if o.id >= PERSON_ID_BASE {
                return Err(bad(format!("ids must be below {PERSON_ID_BASE}")));
            }
            if !ids.insert(o.id) {
                return Err(bad("duplicate id".into()));
            }
            if o.category >= category_count {
                return Err(bad(format!(
                    "category {} outside [0, {category_count})",
                    o.category
                )));
            }
            let footprint: BTreeSet<Cell> = o.footprint.iter().copied().collect();
            if footprint.is_empty() {
                return Err(bad("empty footprint".into()));
            }
            for &c in &footprint {
                match occupancy.get(c) {
                    None => return Err(bad(format!("footprint cell {c:?} out of bounds"))),
                    Some(Occupant::Wall) => {
                        return Err(bad(format!("footprint cell {c:?} is an obstacle cell")))
                    }
                    Some(Occupant::Object(j)) => {
                        return Err(bad(format!(
                            "footprint cell {c:?} overlaps object {}",
                            file.objects[*j].id
                        )))
                    }
                    Some(Occupant::Free) => {}
                }
            }
            if !is_four_connected(&footprint) {
                return Err(bad("footprint is not 4-connected".into()));
            }
            for &c in &footprint {
                occupancy.set(c, Occupant::Object(index));
            }
            let n = footprint.len() as f64;
            let (sx, sy) = footprint.iter().fold((0.0, 0.0), |(sx, sy), c| {
                let p = c.center(CELL_SIZE_M);
                (sx + p.x, sy + p.y)
            });
            objects.push(WorldObject {
                id: o.id,
                category: o.category,
                footprint,
                reflective: o.reflective,
                latent_feature: features.latent(o.id, o.category),
                context_feature: features.context_at(o.id, sx / n, sy / n),
            });
        }

        let mut persons = Vec::with_capacity(file.persons.len());
        for (i, p) in file.persons.iter().enumerate() {
            if p.waypoints.is_empty() {
                return Err(Error::InvalidWorld(format!("person {i} has no waypoints")));
            }
            if p.active[0] > p.active[1] {
                return Err(Error::InvalidWorld(format!("person {i} has active t0 > t1")));
            }
            if let Some(w) = p.waypoints.iter().find(|w| occupancy.get(**w) != Some(&Occupant::Free)) {
                return Err(Error::InvalidWorld(format!(
                    "person {i} waypoint {w:?} is not a free cell"
                )));
            }
            let id = PERSON_ID_BASE + i as u32;
            persons.push(PersonScript {
                id,
                waypoints: p.waypoints.clone(),
                active: p.active,
                latent_feature: features.latent(id, category_count),
                context_feature: features.context(id),
            });
        }

        let mut category_names = file.category_names.clone();
        category_names.resize_with(category_count as usize, Default::default);
        Ok(WorldSpec {
            name: file.name.unwrap_or_else(|| "world".into()),
            cell_size: file.cell_size_m,
            category_count,
            category_names,
            objects,
            persons,
            features: features.clone(),
            occupancy,
        })
    }

    pub fn from_json(text: &str, features: &FeatureModel) -> Result<WorldSpec> {
        let file: WorldFile = serde_json::from_str(text).map_err(|e| Error::parse("world", e))?;
        WorldSpec::from_file(file, features)
    }
}

/// Reads and validates a world file with the default feature model.
pub fn load_world(path: impl AsRef<Path>) -> Result<WorldSpec> {
    load_world_with(path, &FeatureModel::default())
}

pub fn load_world_with(path: impl AsRef<Path>, features: &FeatureModel) -> Result<WorldSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: WorldFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let mut world = WorldSpec::from_file(file, features)?;
    if world.name == "world" {
        if let Some(stem) = path.file_stem() {
            world.name = stem.to_string_lossy().into_owned();
        }
    }
    Ok(world)
}

fn is_four_connected(cells: &BTreeSet<Cell>) -> bool {
    let Some(&start) = cells.iter().next() else {
        return false;
    };
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        for n in c.neighbors4() {
            if cells.contains(&n) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen.len() == cells.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(objects: &str) -> String {
        format!(
            r#"{{"cells": [[1,1,1,1,1],[1,0,0,0,1],[1,0,0,0,1],[1,1,1,1,1]],
                "cell_size_m": 0.05, "objects": {objects}}}"#
        )
    }

    #[test]
    fn minimal_world_loads() {
        let w = WorldSpec::from_json(
            &tiny(r#"[{"id": 1, "category": 0, "footprint": [[1,1]]}]"#),
            &FeatureModel::default(),
        )
        .unwrap();
        assert_eq!(w.objects.len(), 1);
        assert_eq!(w.category_count, 1);
        assert_eq!(w.occupant(Cell::new(1, 1)), Occupant::Object(0));
        assert!((w.objects[0].latent_feature.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn object_on_obstacle_names_the_object() {
        let err = WorldSpec::from_json(
            &tiny(r#"[{"id": 42, "category": 0, "footprint": [[0,0]]}]"#),
            &FeatureModel::default(),
        )
        .unwrap_err();
        match err {
            Error::InvalidObject { id, .. } => assert_eq!(id, 42),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_disconnected_and_duplicate() {
        let features = FeatureModel::default();
        let split = tiny(r#"[{"id": 3, "category": 0, "footprint": [[1,1],[1,3]]}]"#);
        assert!(matches!(
            WorldSpec::from_json(&split, &features),
            Err(Error::InvalidObject { id: 3, .. })
        ));
        let dup = tiny(
            r#"[{"id": 3, "category": 0, "footprint": [[1,1]]},
                {"id": 3, "category": 0, "footprint": [[2,2]]}]"#,
        );
        assert!(matches!(
            WorldSpec::from_json(&dup, &features),
            Err(Error::InvalidObject { id: 3, .. })
        ));
    }

    #[test]
    fn rejects_bad_person_waypoint() {
        let text = r#"{"cells": [[0,1]], "cell_size_m": 0.05, "objects": [],
            "persons": [{"waypoints": [[0,1]], "active": [0, 5]}]}"#;
        assert!(matches!(
            WorldSpec::from_json(text, &FeatureModel::default()),
            Err(Error::InvalidWorld(_))
        ));
    }

    #[test]
    fn parse_error_is_reported() {
        assert!(matches!(
            WorldSpec::from_json("{", &FeatureModel::default()),
            Err(Error::Parse { .. })
        ));
    }
}

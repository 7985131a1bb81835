//! Object instance memory: detections clustered over time into instances
//! by category and dilated map overlap, each keeping every view it was
//! seen in.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Feature;
use crate::geometry::{within_dilation, Cell};

/// Default dilation radius in cells.
pub const DEFAULT_DILATION: i32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub bbox: Feature,
    pub bbox_pad: Feature,
    pub full: Feature,
    pub distance_m: f64,
    pub step: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: u32,
    pub category: u32,
    pub cells: BTreeSet<Cell>,
    pub views: Vec<ViewRecord>,
    pub last_seen: u32,
}

/// Outcome of [`InstanceMemory::associate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Association {
    pub id: u32,
    pub created: bool,
    /// Instances merged into `id` by this call, now gone.
    pub absorbed: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMemory {
    instances: BTreeMap<u32, ObjectInstance>,
    next_id: u32,
    dilation: i32,
}

impl Default for InstanceMemory {
    fn default() -> Self {
        InstanceMemory::new(DEFAULT_DILATION)
    }
}

impl InstanceMemory {
    pub fn new(dilation: i32) -> Self {
        InstanceMemory {
            instances: BTreeMap::new(),
            next_id: 1,
            dilation,
        }
    }

    pub fn dilation(&self) -> i32 {
        self.dilation
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&ObjectInstance> {
        self.instances.get(&id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &ObjectInstance> {
        self.instances.values()
    }

    pub fn clear(&mut self) {
        self.instances.clear();
    }

    /// Adds one detection. Every instance with the same category whose
    /// cells meet the dilated detection is merged into the lowest such id,
    /// which then absorbs the detection's cells and view.
    pub fn associate(
        &mut self,
        cells: &BTreeSet<Cell>,
        category: u32,
        view: ViewRecord,
    ) -> Association {
        assert!(!cells.is_empty(), "detection with no cells");
        let step = view.step;
        let matched: Vec<u32> = self
            .instances
            .values()
            .filter(|i| i.category == category && within_dilation(cells, &i.cells, self.dilation))
            .map(|i| i.id)
            .collect();

        let Some((&keep, rest)) = matched.split_first() else {
            let id = self.next_id;
            self.next_id += 1;
            self.instances.insert(
                id,
                ObjectInstance {
                    id,
                    category,
                    cells: cells.clone(),
                    views: vec![view],
                    last_seen: step,
                },
            );
            return Association {
                id,
                created: true,
                absorbed: Vec::new(),
            };
        };

        let mut absorbed_views = Vec::new();
        let mut absorbed_cells = BTreeSet::new();
        let mut last_seen = step;
        for id in rest {
            let gone = self.instances.remove(id).expect("matched id present");
            absorbed_cells.extend(gone.cells);
            absorbed_views.extend(gone.views);
            last_seen = last_seen.max(gone.last_seen);
        }
        let inst = self.instances.get_mut(&keep).expect("matched id present");
        inst.cells.extend(absorbed_cells);
        inst.cells.extend(cells.iter().copied());
        if !absorbed_views.is_empty() {
            inst.views.extend(absorbed_views);
            inst.views.sort_by_key(|v| v.step);
        }
        inst.views.push(view);
        inst.last_seen = inst.last_seen.max(last_seen);
        Association {
            id: keep,
            created: false,
            absorbed: rest.to_vec(),
        }
    }

    /// Replaces an instance's cells outright (moving instances such as
    /// people) and records the view. Returns the previous cells.
    pub fn relocate(
        &mut self,
        id: u32,
        cells: BTreeSet<Cell>,
        view: ViewRecord,
    ) -> Result<BTreeSet<Cell>> {
        let inst = self.instances.get_mut(&id).ok_or(Error::UnknownInstance(id))?;
        inst.last_seen = inst.last_seen.max(view.step);
        inst.views.push(view);
        Ok(std::mem::replace(&mut inst.cells, cells))
    }

    /// Creates an instance without association (used for moving instances).
    pub fn insert_new(&mut self, cells: BTreeSet<Cell>, category: u32, view: ViewRecord) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        let last_seen = view.step;
        self.instances.insert(
            id,
            ObjectInstance {
                id,
                category,
                cells,
                views: vec![view],
                last_seen,
            },
        );
        id
    }

    pub fn views_of(&self, id: u32) -> Result<&[ViewRecord]> {
        self.instances
            .get(&id)
            .map(|i| i.views.as_slice())
            .ok_or(Error::UnknownInstance(id))
    }

    pub fn instances_by_category(&self, category: u32) -> Vec<u32> {
        self.instances
            .values()
            .filter(|i| i.category == category)
            .map(|i| i.id)
            .collect()
    }

    pub fn total_views(&self) -> usize {
        self.instances.values().map(|i| i.views.len()).sum()
    }

    pub fn to_dump(&self) -> MemoryDump {
        MemoryDump {
            version: DUMP_VERSION,
            dilation: self.dilation,
            instances: self.instances.values().cloned().collect(),
        }
    }

    pub fn from_dump(dump: MemoryDump) -> Result<Self> {
        if dump.version != DUMP_VERSION {
            return Err(Error::InvalidWorld(format!(
                "memory dump version {} unsupported",
                dump.version
            )));
        }
        let next_id = dump.instances.iter().map(|i| i.id + 1).max().unwrap_or(1);
        Ok(InstanceMemory {
            instances: dump.instances.into_iter().map(|i| (i.id, i)).collect(),
            next_id,
            dilation: dump.dilation,
        })
    }
}

pub const DUMP_VERSION: u32 = 1;

/// JSON dump consumed by the offline matching benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryDump {
    pub version: u32,
    pub dilation: i32,
    pub instances: Vec<ObjectInstance>,
}

impl MemoryDump {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::parse("memory dump", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MemoryDump> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(step: u32) -> ViewRecord {
        let f = Feature(vec![1.0, 0.0]);
        ViewRecord {
            bbox: f.clone(),
            bbox_pad: f.clone(),
            full: f,
            distance_m: 1.0,
            step,
        }
    }

    fn cells(list: &[(i32, i32)]) -> BTreeSet<Cell> {
        list.iter().map(|&(r, c)| Cell::new(r, c)).collect()
    }

    const CHAIR: u32 = 0;
    const COUCH: u32 = 1;

    #[test]
    fn first_detection_creates_instance_one() {
        let mut m = InstanceMemory::default();
        let a = m.associate(&cells(&[(10, 10)]), CHAIR, view(0));
        assert_eq!(a, Association { id: 1, created: true, absorbed: vec![] });
    }

    #[test]
    fn overlapping_detection_updates() {
        let mut m = InstanceMemory::default();
        m.associate(&cells(&[(10, 10)]), CHAIR, view(0));
        let a = m.associate(&cells(&[(12, 13)]), CHAIR, view(1));
        assert_eq!(a.id, 1);
        assert!(!a.created);
        assert_eq!(m.views_of(1).unwrap().len(), 2);
        assert_eq!(m.get(1).unwrap().cells.len(), 2);
    }

    #[test]
    fn category_mismatch_blocks_merge() {
        let mut m = InstanceMemory::default();
        m.associate(&cells(&[(10, 10)]), CHAIR, view(0));
        let a = m.associate(&cells(&[(10, 10)]), COUCH, view(1));
        assert_eq!(a.id, 2);
        assert!(a.created);
        assert_eq!(m.instances_by_category(CHAIR), vec![1]);
    }

    #[test]
    fn bridging_detection_merges_into_lowest_id() {
        let mut m = InstanceMemory::default();
        m.associate(&cells(&[(0, 0)]), CHAIR, view(0));
        m.associate(&cells(&[(0, 0)]), CHAIR, view(1));
        m.associate(&cells(&[(0, 6)]), CHAIR, view(2));
        m.associate(&cells(&[(0, 6)]), CHAIR, view(3));
        m.associate(&cells(&[(0, 6)]), CHAIR, view(4));
        assert_eq!(m.views_of(1).unwrap().len(), 2);
        assert_eq!(m.views_of(2).unwrap().len(), 3);
        let a = m.associate(&cells(&[(0, 3)]), CHAIR, view(5));
        assert_eq!(a.id, 1);
        assert_eq!(a.absorbed, vec![2]);
        assert_eq!(m.views_of(1).unwrap().len(), 6);
        assert!(m.views_of(2).is_err());
        assert_eq!(m.instances_by_category(CHAIR), vec![1]);
        let steps: Vec<_> = m.views_of(1).unwrap().iter().map(|v| v.step).collect();
        assert_eq!(steps, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn unknown_id_is_an_error() {
        let m = InstanceMemory::default();
        assert!(matches!(m.views_of(9), Err(Error::UnknownInstance(9))));
    }

    #[test]
    fn ids_are_not_reused() {
        let mut m = InstanceMemory::default();
        m.associate(&cells(&[(0, 0)]), CHAIR, view(0));
        m.associate(&cells(&[(0, 6)]), CHAIR, view(1));
        m.associate(&cells(&[(0, 3)]), CHAIR, view(2));
        let a = m.associate(&cells(&[(50, 50)]), CHAIR, view(3));
        assert_eq!(a.id, 3);
    }

    #[test]
    fn dump_round_trip() {
        let mut m = InstanceMemory::new(5);
        m.associate(&cells(&[(3, 4), (3, 5)]), CHAIR, view(0));
        let back = InstanceMemory::from_dump(
            serde_json::from_str(&serde_json::to_string(&m.to_dump()).unwrap()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, m);
    }
}

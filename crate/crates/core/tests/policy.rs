mod common;

use std::collections::BTreeSet;

use common::{walled_room, world_from_cells};
use goat_core::features::Feature;
use goat_core::geometry::{Cell, MapFrame, Pose};
use goat_core::global_policy::{person_goal_update, Exclusions, GlobalPolicy, GoalKind};
use goat_core::goal_matching::{Aggregation, Context, MatchConfig, Method};
use goat_core::instance_memory::{InstanceMemory, ViewRecord};
use goat_core::perception::{project_detections, Projection};
use goat_core::planner::{fast_march, DistanceField, PlanGrid, Window};
use goat_core::semantic_map::{init_map, LabeledCells, MapUpdate, SemanticMap};
use goat_core::sim::{advance_dynamics, DetectionSource, SimConfig, Simulator};
use goat_core::{GoalSpec, Modality};
use proptest::prelude::*;

const SIDE: usize = 60;

fn view(f: Feature, step: u32) -> ViewRecord {
    ViewRecord {
        bbox: f.clone(),
        bbox_pad: f.clone(),
        full: f,
        distance_m: 1.0,
        step,
    }
}

fn axis(k: usize) -> Feature {
    let mut v = vec![0.0; 4];
    v[k] = 1.0;
    Feature(v)
}

fn cosine() -> MatchConfig {
    MatchConfig {
        method: Method::Cosine,
        threshold: Some(0.75),
        subsample_by_category: true,
        context: Context::Bbox,
        aggregation: Aggregation::Max,
    }
}

/// Room rows 10..50, columns 10..50 with walls; columns up to `seen_to`
/// explored. The agent stands at (30, 15).
fn room_map(seen_to: i32) -> SemanticMap {
    let mut map = init_map(2, SIDE).unwrap();
    let mut upd = MapUpdate {
        agent: Some(Cell::new(30, 15)),
        ..MapUpdate::default()
    };
    for r in 9..=50 {
        for c in 9..=seen_to.min(50) {
            let cell = Cell::new(r, c);
            if r == 9 || r == 50 || c == 9 || c == 50 {
                upd.hits.push(cell);
            } else {
                upd.free.push(cell);
            }
        }
    }
    map.update(&upd, &InstanceMemory::default()).unwrap();
    map
}

fn agent_field(map: &SemanticMap) -> DistanceField {
    let here = map.agent_cell();
    let grid = PlanGrid::build(Window::full(SIDE, SIDE), 0.05, |c| map.is_obstacle(c), 0, &[here]);
    fast_march(&grid, &[here], None)
}

/// Nearest qualifying frontier cell by direct search over the clusters.
fn nearest_frontier(map: &SemanticMap, field: &DistanceField, min_cells: usize) -> Option<Cell> {
    map.frontiers(Some(field))
        .into_iter()
        .filter(|f| f.cells.len() >= min_cells)
        .flat_map(|f| f.cells)
        .filter(|c| field.get(*c).is_finite())
        .min_by(|a, b| field.get(*a).total_cmp(&field.get(*b)).then(a.cmp(b)))
}

#[test]
fn known_instance_becomes_a_point_goal() {
    let map = room_map(30);
    let field = agent_field(&map);
    let mut mem = InstanceMemory::new(3);
    let cells: BTreeSet<Cell> = [Cell::new(20, 25), Cell::new(20, 26)].into_iter().collect();
    let id = mem.associate(&cells, 1, view(axis(0), 0)).id;
    let policy = GlobalPolicy::default();
    let ltg = policy
        .decide(&GoalSpec::category(1), &mem, &map, &cosine(), false, &field, &Exclusions::default(), 4)
        .unwrap();
    assert_eq!(
        ltg.kind,
        GoalKind::PointGoal {
            instance: id,
            cells: cells.into_iter().collect()
        }
    );
    assert_eq!(ltg.issued_at, 4);
}

#[test]
fn empty_memory_explores_the_nearest_frontier() {
    let map = room_map(30);
    let field = agent_field(&map);
    let policy = GlobalPolicy::default();
    let ltg = policy
        .decide(&GoalSpec::category(0), &InstanceMemory::new(3), &map, &cosine(), false, &field, &Exclusions::default(), 0)
        .unwrap();
    let GoalKind::Explore { cell } = ltg.kind else {
        panic!("expected explore, got {:?}", ltg.kind)
    };
    assert!(map.is_frontier(cell));
    assert_eq!(cell.col, 30);
    assert_eq!(Some(cell), nearest_frontier(&map, &field, policy.min_frontier_cells));

    // A visited target pushes exploration elsewhere along the frontier.
    let excl = Exclusions {
        visited: vec![cell],
        ..Exclusions::default()
    };
    let next = policy.frontier_target(&map, &field, &excl).unwrap();
    assert!(next.chebyshev(cell) > policy.visited_radius_cells);
}

#[test]
fn fully_explored_retry_takes_the_best_instance() {
    // The target was seen under the wrong category; only a distractor of the
    // goal category remains.
    let map = room_map(50);
    let field = agent_field(&map);
    assert!(map.frontiers(Some(&field)).is_empty());
    let mut mem = InstanceMemory::new(3);
    mem.associate(&[Cell::new(20, 40)].into_iter().collect(), 1, view(axis(0), 0));
    let distractor = mem
        .associate(&[Cell::new(40, 40)].into_iter().collect(), 0, view(Feature(vec![0.6, 0.8, 0.0, 0.0]), 1))
        .id;
    let goal = GoalSpec::with_feature(Modality::Image, 0, axis(0));
    let policy = GlobalPolicy::default();
    let excl = Exclusions::default();
    let first = policy.decide(&goal, &mem, &map, &cosine(), false, &field, &excl, 0).unwrap();
    assert_eq!(first.kind, GoalKind::None);
    let retry = policy.decide(&goal, &mem, &map, &cosine(), true, &field, &excl, 0).unwrap();
    assert!(matches!(retry.kind, GoalKind::PointGoal { instance, .. } if instance == distractor));
    let empty = policy
        .decide(&goal, &InstanceMemory::new(3), &map, &cosine(), true, &field, &excl, 0)
        .unwrap();
    assert_eq!(empty.kind, GoalKind::None);
}

fn person_projection(cells: &[Cell], f: Feature, step: u32) -> Projection {
    Projection {
        cells: cells.iter().copied().collect(),
        category: 2,
        view: view(f, step),
        source: DetectionSource::Person(10_000),
    }
}

fn write(map: &mut SemanticMap, mem: &InstanceMemory, labels: Vec<LabeledCells>) {
    map.update(
        &MapUpdate {
            labeled: labels,
            ..MapUpdate::default()
        },
        mem,
    )
    .unwrap();
}

#[test]
fn person_tracks_follow_the_person() {
    let mut map = init_map(3, SIDE).unwrap();
    let mut mem = InstanceMemory::new(3);
    let person = 2;
    let here: Vec<Cell> = (0..3).map(|d| Cell::new(30, 30 + d)).collect();
    let l = person_goal_update(&mut map, &mut mem, vec![person_projection(&here, axis(1), 0)], person).unwrap();
    write(&mut map, &mem, l);
    let l = person_goal_update(&mut map, &mut mem, vec![person_projection(&here, axis(1), 1)], person).unwrap();
    write(&mut map, &mem, l);
    let id = mem.instances_by_category(person)[0];
    assert_eq!(mem.len(), 1);
    for c in &here {
        assert_eq!(map.instance_at(person, *c), Some(id));
        assert!(map.is_obstacle(*c));
    }

    // One meter east.
    let there: Vec<Cell> = here.iter().map(|c| c.offset(0, 20)).collect();
    let l = person_goal_update(&mut map, &mut mem, vec![person_projection(&there, axis(1), 2)], person).unwrap();
    assert_eq!(l[0].id, id);
    write(&mut map, &mem, l);
    for c in &here {
        assert_eq!(map.instance_at(person, *c), None);
        assert!(!map.is_obstacle(*c));
    }
    for c in &there {
        assert_eq!(map.instance_at(person, *c), Some(id));
        assert!(map.is_obstacle(*c));
    }
    assert_eq!(mem.len(), 1);
}

#[test]
fn follow_goal_lags_the_person_by_at_most_one_step() {
    let cells = walled_room(60, 120);
    let path: Vec<[i32; 2]> = (0..40).map(|k| [30, 50 + k]).collect();
    let persons = format!(r#"[{{"waypoints": {}, "active": [0, 40]}}]"#, serde_json::to_string(&path).unwrap());
    let w = world_from_cells(&cells, "[]", &persons);
    let cfg = SimConfig {
        miss_prob: 0.0,
        ..SimConfig::default()
    };
    let sim = Simulator::new(&w, cfg, 0);
    let pose = {
        let p = Cell::new(30, 10).center(0.05);
        Pose {
            x: p.x,
            y: p.y,
            heading_deg: 0.0,
        }
    };
    let frame = MapFrame::new(pose, Cell::new(150, 150), 0.05);
    let person = w.person_category();
    let mut map = init_map(person + 1, 300).unwrap();
    let mut mem = InstanceMemory::new(3);
    let mut tracked = 0;
    for t in 0..40u32 {
        let obs = sim.observe(&pose, t);
        let dets: Vec<Projection> = project_detections(&obs, &frame, 300)
            .items
            .into_iter()
            .filter(|p| p.category == person)
            .collect();
        assert_eq!(dets.len(), 1, "person visible at t={t}");
        let labels = person_goal_update(&mut map, &mut mem, dets, person).unwrap();
        assert_eq!(mem.instances_by_category(person).len(), 1);
        let goal: BTreeSet<Cell> = labels[0].cells.iter().copied().collect();
        write(&mut map, &mem, labels);
        let truth = |s: u32| -> BTreeSet<Cell> {
            advance_dynamics(&w, s)
                .iter()
                .flat_map(|p| p.cells.iter().map(|c| frame.world_cell_to_map(*c)))
                .collect()
        };
        let mut allowed = truth(t);
        if t > 0 {
            allowed.extend(truth(t - 1));
        }
        assert!(!goal.is_empty() && goal.is_subset(&allowed), "t={t}");
        tracked += 1;
    }
    assert_eq!(tracked, 40);
}

fn random_map(writes: &[(u16, u8)], agent: (i32, i32)) -> SemanticMap {
    let side = 30;
    let mut map = init_map(2, side).unwrap();
    let mut upd = MapUpdate::default();
    for &(i, kind) in writes {
        let c = Cell::new((i as usize / side % side) as i32, (i as usize % side) as i32);
        match kind % 4 {
            0 | 1 => upd.free.push(c),
            2 => upd.hits.push(c),
            _ => {}
        }
    }
    upd.agent = Some(Cell::new(agent.0, agent.1));
    map.update(&upd, &InstanceMemory::default()).unwrap();
    map
}

fn random_memory(items: &[(i32, i32, u32, u8)]) -> InstanceMemory {
    let mut mem = InstanceMemory::new(1);
    for &(r, c, cat, f) in items {
        mem.associate(&[Cell::new(r, c)].into_iter().collect(), cat, view(axis(f as usize % 4), 0));
    }
    mem
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decide_invariants(
        writes in prop::collection::vec((any::<u16>(), any::<u8>()), 0..900),
        agent in (0i32..30, 0i32..30),
        items in prop::collection::vec((0i32..30, 0i32..30, 0u32..2, any::<u8>()), 0..5),
        goal_axis in 0usize..4,
        goal_cat in 0u32..2,
        feature_goal in any::<bool>(),
        fully in any::<bool>(),
    ) {
        let map = random_map(&writes, agent);
        let mem = random_memory(&items);
        let field = {
            let here = map.agent_cell();
            let grid = PlanGrid::build(Window::full(30, 30), 0.05, |c| map.is_obstacle(c), 0, &[here]);
            fast_march(&grid, &[here], None)
        };
        let goal = if feature_goal {
            GoalSpec::with_feature(Modality::Language, goal_cat, axis(goal_axis))
        } else {
            GoalSpec::category(goal_cat)
        };
        let policy = GlobalPolicy::default();
        let excl = Exclusions::default();
        let a = policy.decide(&goal, &mem, &map, &cosine(), fully, &field, &excl, 3).unwrap();
        let b = policy.decide(&goal, &mem, &map, &cosine(), fully, &field, &excl, 3).unwrap();
        prop_assert_eq!(&a, &b);
        let m = policy.localize(&goal, &mem, &cosine(), fully, &field, &excl).unwrap();
        match &a.kind {
            GoalKind::Explore { cell } => {
                prop_assert!(m.instance.is_none());
                prop_assert!(map.is_frontier(*cell));
            }
            GoalKind::PointGoal { instance, cells } => {
                prop_assert_eq!(m.instance, Some(*instance));
                prop_assert!(!cells.is_empty());
            }
            GoalKind::None => {
                prop_assert!(m.instance.is_none());
                prop_assert!(nearest_frontier(&map, &field, policy.min_frontier_cells).is_none());
            }
        }
    }
}

mod common;

use common::{fixture, load, march_ray, walled_room, world_from_cells};
use goat_core::geometry::{angle_diff_deg, Cell, Pose};
use goat_core::sim::{
    advance_dynamics, blocked, load_world, Action, DetectionSource, Occupant, SimConfig, Simulator,
};
use proptest::prelude::*;

fn pose_at(row: i32, col: i32, heading_deg: f64) -> Pose {
    let p = Cell::new(row, col).center(0.05);
    Pose {
        x: p.x,
        y: p.y,
        heading_deg,
    }
}

#[test]
fn fixture_worlds_load() {
    let three = load("three_room.json");
    assert_eq!(three.objects.len(), 12);
    assert_eq!(three.category_count, 5);
    let minimal = load("minimal.json");
    assert_eq!(minimal.objects.len(), 1);
    for name in ["hallway_home.json", "two_wing.json", "quad_home.json", "corridor.json"] {
        let w = load(name);
        assert!(w.rows() <= 300 && w.cols() <= 300, "{name} too large for the map");
    }
}

#[test]
fn object_on_wall_is_rejected_by_id() {
    let cells = walled_room(20, 20);
    let text = format!(
        r#"{{"cells": {}, "cell_size_m": 0.05, "objects": [{{"id": 42, "category": 0, "footprint": [[0,5]]}}]}}"#,
        serde_json::to_string(&cells).unwrap()
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, text).unwrap();
    let err = load_world(&path).unwrap_err().to_string();
    assert!(err.contains("42"), "{err}");
    assert!(load_world(fixture("does_not_exist.json")).is_err());
}

#[test]
fn center_ray_in_open_corridor_reads_three_meters() {
    // Wall face at x = 3.5 m, agent at x = 0.5 m.
    let mut cells = walled_room(20, 90);
    for row in cells.iter_mut() {
        row[70] = 1;
    }
    let w = world_from_cells(&cells, "[]", "[]");
    let cfg = SimConfig::default();
    let pose = Pose {
        x: 0.5,
        y: 10.5 * 0.05,
        heading_deg: 0.0,
    };
    let obs = Simulator::new(&w, cfg.clone(), 1).observe(&pose, 0);
    let center = &obs.rays[cfg.ray_count / 2];
    assert_eq!(center.offset_deg, 0.0);
    assert!(center.hit && !center.dropped);
    assert!((center.range_m - 3.0).abs() <= 4.0 * cfg.depth_noise_m, "{}", center.range_m);
}

#[test]
fn object_behind_wall_is_not_detected() {
    let mut cells = walled_room(40, 80);
    for row in cells.iter_mut().take(39).skip(1) {
        row[40] = 1;
    }
    let objects = r#"[{"id": 1, "category": 0, "footprint": [[20,50],[20,51],[21,50],[21,51]]},
                      {"id": 2, "category": 0, "footprint": [[20,30],[20,31],[21,30],[21,31]]}]"#;
    let w = world_from_cells(&cells, objects, "[]");
    let cfg = SimConfig {
        miss_prob: 0.0,
        ..SimConfig::default()
    };
    let obs = Simulator::new(&w, cfg, 0).observe(&pose_at(20, 10, 0.0), 0);
    let seen: Vec<_> = obs.detections.iter().map(|d| d.source).collect();
    assert_eq!(seen, vec![DetectionSource::Object(2)]);
}

#[test]
fn same_inputs_give_identical_streams() {
    let w = load("three_room.json");
    let actions = [
        Action::Forward,
        Action::TurnLeft,
        Action::Forward,
        Action::Forward,
        Action::TurnRight,
        Action::Forward,
    ];
    let run = |seed: u64| {
        let sim = Simulator::new(&w, SimConfig::default(), seed);
        let mut pose = pose_at(60, 30, 0.0);
        let mut stream = Vec::new();
        for (t, a) in actions.iter().cycle().take(40).enumerate() {
            stream.push(sim.observe(&pose, t as u32));
            pose = sim.step(&pose, *a, t as u32);
        }
        serde_json::to_string(&stream).unwrap()
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn corridor_person_comes_and_goes() {
    let w = load("corridor.json");
    let sim = Simulator::new(&w, SimConfig::default(), 0);
    let person_cell = Cell::new(50, 80);
    let at10 = advance_dynamics(&w, 10);
    assert_eq!(at10.len(), 1);
    assert!(at10[0].covers(person_cell));
    assert!(advance_dynamics(&w, 50).is_empty());

    // Looking down the corridor gap from the west.
    let pose = pose_at(50, 40, 0.0);
    let ahead = SimConfig::default().ray_count / 2;
    let before = sim.observe(&pose, 10);
    let after = sim.observe(&pose, 50);
    let person_face = 77.0 * 0.05 - pose.x;
    assert!(before.rays[ahead].hit);
    assert!((before.rays[ahead].range_m - person_face).abs() < 0.05);
    assert!(before
        .detections
        .iter()
        .any(|d| matches!(d.source, DetectionSource::Person(_)) && d.category == w.person_category()));
    // At t=50 the ray runs past the person's former cell.
    assert!(after.rays[ahead].range_m > (person_cell.col as f64 + 1.0) * 0.05 - pose.x);
    assert!(after.detections.iter().all(|d| matches!(d.source, DetectionSource::Object(_))));
}

fn free_cells(w: &goat_core::WorldSpec) -> Vec<Cell> {
    w.occupancy().cells().filter(|c| w.is_free(*c)).collect()
}

#[test]
fn misclassification_changes_the_category() {
    let w = load("three_room.json");
    let cells = free_cells(&w);
    let mut checked = 0;
    for (k, c) in cells.iter().enumerate().step_by(97) {
        let pose = pose_at(c.row, c.col, 30.0 * (k % 12) as f64);
        for prob in [0.0, 1.0] {
            let cfg = SimConfig { miss_prob: 0.0, misclass_prob: prob, ..SimConfig::default() };
            for d in &Simulator::new(&w, cfg, 4).observe(&pose, 0).detections {
                let DetectionSource::Object(id) = d.source else { continue };
                let truth = w.object(id).unwrap().category;
                assert!(d.category < w.category_count);
                assert_eq!(d.category == truth, prob == 0.0, "object {id} at {c:?}");
                checked += 1;
            }
        }
    }
    assert!(checked > 20, "{checked}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ranges_never_exceed_the_true_distance(idx in 0usize..1_000_000, turn in 0u32..12, x in 0.0f64..1.0, y in 0.0f64..1.0, seed in 0u64..1000, t in 0u32..80) {
        let w = load("corridor.json");
        let cells = free_cells(&w);
        let c = cells[idx % cells.len()];
        let pose = Pose { x: (c.col as f64 + x) * 0.05, y: (c.row as f64 + y) * 0.05, heading_deg: 30.0 * turn as f64 };
        let cfg = SimConfig::default();
        let obs = Simulator::new(&w, cfg.clone(), seed).observe(&pose, t);
        let persons = advance_dynamics(&w, t);
        for ray in obs.rays.iter().filter(|r| !r.dropped) {
            let truth = march_ray(pose.x, pose.y, pose.heading_deg + ray.offset_deg, cfg.max_range_m, 0.05, |cell| blocked(&w, &persons, cell));
            prop_assert!(ray.range_m <= truth + 4.0 * cfg.depth_noise_m + 1e-3, "range {} truth {}", ray.range_m, truth);
            if ray.hit {
                prop_assert!(ray.range_m >= truth - 4.0 * cfg.depth_noise_m - 1e-3);
            } else {
                prop_assert!(truth >= cfg.max_range_m - 1e-3);
            }
        }
    }

    #[test]
    fn detections_are_visible_footprint_cells(idx in 0usize..1_000_000, turn in 0u32..12, seed in 0u64..1000) {
        let w = load("three_room.json");
        let cells = free_cells(&w);
        let c = cells[idx % cells.len()];
        let pose = pose_at(c.row, c.col, 30.0 * turn as f64);
        let cfg = SimConfig::default();
        let obs = Simulator::new(&w, cfg.clone(), seed).observe(&pose, 0);
        for d in &obs.detections {
            let DetectionSource::Object(id) = d.source else { continue };
            let o = w.object(id).unwrap();
            prop_assert!(!d.ego_points.is_empty());
            let mut clear_cells = 0;
            for p in &d.ego_points {
                let q = pose.body_to_frame(p.forward, p.left);
                let cell = Cell::new((q.y / 0.05).floor() as i32, (q.x / 0.05).floor() as i32);
                prop_assert!(o.footprint.contains(&cell));
                let dist = p.forward.hypot(p.left);
                prop_assert!(dist <= cfg.max_range_m + 1e-9);
                let bearing = p.left.atan2(p.forward).to_degrees();
                prop_assert!(angle_diff_deg(0.0, bearing).abs() <= cfg.fov_deg / 2.0 + 1e-9);
                let hit = march_ray(pose.x, pose.y, pose.heading_deg + bearing, dist, 0.05, |cell| {
                    !matches!(w.occupant(cell), Occupant::Free) && !o.footprint.contains(&cell)
                });
                if hit.is_infinite() {
                    clear_cells += 1;
                }
            }
            prop_assert!(clear_cells >= 1, "object {id} has no unoccluded cell");
            let nearest = d.ego_points.iter().map(|p| p.forward.hypot(p.left)).fold(f64::INFINITY, f64::min);
            prop_assert!((d.distance_m - nearest).abs() < 1e-9);
        }
    }
}

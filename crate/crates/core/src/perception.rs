//! Depth grounding and projection of observations into the map frame.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{walk_ray, Cell, MapFrame, Point};
use crate::instance_memory::ViewRecord;
use crate::sim::{DetectionSource, Observation, SimConfig};

/// Affine map from relative depth estimates to metric depth.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthGrounding {
    pub scale: f64,
    pub offset: f64,
    /// Mean squared residual over the fitted rays, m².
    pub residual_mse: f64,
}

impl DepthGrounding {
    pub fn apply(&self, estimate: f64) -> f64 {
        self.scale * estimate + self.offset
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GroundingError {
    #[error("need at least 2 valid rays, got {0}")]
    TooFewRays(usize),
    #[error("estimates have no spread over the valid rays")]
    Degenerate,
    #[error("sensed, dropout and estimate lengths differ")]
    LengthMismatch,
}

/// Ordinary least squares fit of `sensed ≈ scale * estimate + offset`.
pub fn fit_grounding(estimate: &[f64], sensed: &[f64]) -> Result<DepthGrounding, GroundingError> {
    if estimate.len() != sensed.len() {
        return Err(GroundingError::LengthMismatch);
    }
    let n = estimate.len();
    if n < 2 {
        return Err(GroundingError::TooFewRays(n));
    }
    let nf = n as f64;
    let mx = estimate.iter().sum::<f64>() / nf;
    let md = sensed.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxd) = (0.0, 0.0);
    for (x, d) in estimate.iter().zip(sensed) {
        sxx += (x - mx) * (x - mx);
        sxd += (x - mx) * (d - md);
    }
    if sxx <= 1e-12 * nf * mx.abs().max(1.0).powi(2) {
        return Err(GroundingError::Degenerate);
    }
    let scale = sxd / sxx;
    let offset = md - scale * mx;
    let residual_mse = estimate
        .iter()
        .zip(sensed)
        .map(|(x, d)| (d - scale * x - offset).powi(2))
        .sum::<f64>()
        / nf;
    Ok(DepthGrounding {
        scale,
        offset,
        residual_mse,
    })
}

/// Fits the grounding on rays with a reading and fills the dropped ones.
/// Valid readings are passed through untouched.
pub fn infill_depth(
    sensed: &[f64],
    dropped: &[bool],
    estimate: &[f64],
) -> Result<(Vec<f64>, DepthGrounding), GroundingError> {
    if sensed.len() != dropped.len() || sensed.len() != estimate.len() {
        return Err(GroundingError::LengthMismatch);
    }
    let (xs, ds): (Vec<f64>, Vec<f64>) = estimate
        .iter()
        .zip(sensed)
        .zip(dropped)
        .filter(|(_, &drop)| !drop)
        .map(|((x, d), _)| (*x, *d))
        .unzip();
    let grounding = fit_grounding(&xs, &ds)?;
    let out = sensed
        .iter()
        .zip(dropped)
        .zip(estimate)
        .map(|((&d, &drop), &x)| if drop { grounding.apply(x) } else { d })
        .collect();
    Ok((out, grounding))
}

/// One detection in map coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub cells: BTreeSet<Cell>,
    pub category: u32,
    pub view: ViewRecord,
    pub source: DetectionSource,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProjectedDetections {
    pub items: Vec<Projection>,
    /// Cells that fell outside the map and were dropped.
    pub clipped: usize,
}

fn in_map(c: Cell, side: usize) -> bool {
    c.row >= 0 && c.col >= 0 && (c.row as usize) < side && (c.col as usize) < side
}

/// Moves every detection's visible cells into the map frame. Detections
/// left with no in-bounds cell are dropped.
pub fn project_detections(obs: &Observation, frame: &MapFrame, side: usize) -> ProjectedDetections {
    let mut out = ProjectedDetections::default();
    for det in &obs.detections {
        let mut cells = BTreeSet::new();
        for p in &det.ego_points {
            let world = obs.pose.body_to_frame(p.forward, p.left);
            let c = Cell::containing(frame.world_to_map(world), frame.cell_size);
            if in_map(c, side) {
                cells.insert(c);
            } else {
                out.clipped += 1;
            }
        }
        if cells.is_empty() {
            continue;
        }
        out.items.push(Projection {
            cells,
            category: det.category,
            view: ViewRecord {
                bbox: det.features.bbox.clone(),
                bbox_pad: det.features.bbox_pad.clone(),
                full: det.features.full.clone(),
                distance_m: det.distance_m,
                step: obs.timestep,
            },
            source: det.source,
        });
    }
    out
}

/// Free and occupied cells implied by one depth scan.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RayCells {
    pub free: Vec<Cell>,
    pub hits: Vec<Cell>,
}

/// Traces every ray in the map frame. `depths` holds one grounded range per
/// ray or `None` for a hole. Cells the ray crosses completely (stopping half
/// a cell short of the return) are free; the cell just past the return is an
/// obstacle.
pub fn project_rays(
    obs: &Observation,
    depths: &[Option<f64>],
    frame: &MapFrame,
    side: usize,
    cfg: &SimConfig,
) -> RayCells {
    let cs = frame.cell_size;
    let pose = frame.pose_to_map(&obs.pose);
    let origin = Point::new(pose.x, pose.y);
    let mut out = RayCells::default();
    for (ray, depth) in obs.rays.iter().zip(depths) {
        let Some(range) = *depth else { continue };
        let heading = pose.heading_deg + ray.offset_deg;
        let returned = (ray.hit || ray.dropped) && range < cfg.max_range_m;
        let free_until = if returned {
            (range - 0.5 * cs).max(0.0)
        } else {
            cfg.max_range_m
        };
        // Walk one cell long so the last visited cell reports its true exit.
        walk_ray(origin, heading, free_until + cs, cs, |c, _, t_exit| {
            if !in_map(c, side) || t_exit > free_until + 1e-9 {
                return false;
            }
            out.free.push(c);
            true
        });
        if returned {
            let c = Cell::containing(origin.advance(heading, range + 0.25 * cs), cs);
            if in_map(c, side) {
                out.hits.push(c);
            }
        }
    }
    out.free.sort_unstable();
    out.free.dedup();
    out.hits.sort_unstable();
    out.hits.dedup();
    out
}

/// Grounds the dense estimate against the sensed rays and returns one
/// usable depth per ray. When grounding fails the dropped rays stay holes.
pub fn grounded_depths(obs: &Observation) -> (Vec<Option<f64>>, Option<DepthGrounding>) {
    let sensed: Vec<f64> = obs.rays.iter().map(|r| r.range_m).collect();
    let dropped: Vec<bool> = obs.rays.iter().map(|r| r.dropped).collect();
    match infill_depth(&sensed, &dropped, &obs.dense_estimate) {
        Ok((depths, g)) => (depths.into_iter().map(Some).collect(), Some(g)),
        Err(_) => (
            obs.rays
                .iter()
                .map(|r| (!r.dropped).then_some(r.range_m))
                .collect(),
            None,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_grounding() {
        let d = [1.0, 2.0, 3.5, 4.0];
        let g = fit_grounding(&d, &d).unwrap();
        assert!((g.scale - 1.0).abs() < 1e-12);
        assert!(g.offset.abs() < 1e-12);
        assert!(g.residual_mse < 1e-24);
    }

    #[test]
    fn affine_inverse_is_recovered() {
        let sensed = [0.5, 1.0, 2.0, 4.5];
        let estimate: Vec<f64> = sensed.iter().map(|d| (d - 3.0) / 2.0).collect();
        let g = fit_grounding(&estimate, &sensed).unwrap();
        assert!((g.scale - 2.0).abs() < 1e-12);
        assert!((g.offset - 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_fail() {
        assert_eq!(
            fit_grounding(&[1.0], &[2.0]),
            Err(GroundingError::TooFewRays(1))
        );
        assert_eq!(
            fit_grounding(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(GroundingError::Degenerate)
        );
        assert_eq!(
            infill_depth(&[1.0, 2.0], &[false, true], &[1.0, 2.0]).unwrap_err(),
            GroundingError::TooFewRays(1)
        );
    }

    #[test]
    fn infill_keeps_valid_and_fills_dropped() {
        let sensed = [1.0, 0.0, 3.0, 5.0];
        let dropped = [false, true, false, false];
        let estimate = [0.0, 0.5, 1.0, 2.0];
        let (out, g) = infill_depth(&sensed, &dropped, &estimate).unwrap();
        assert_eq!(out[0], 1.0);
        assert_eq!(out[2], 3.0);
        assert_eq!(out[3], 5.0);
        assert!((g.scale - 2.0).abs() < 1e-12 && (g.offset - 1.0).abs() < 1e-12);
        assert!((out[1] - 2.0).abs() < 1e-12);
    }
}

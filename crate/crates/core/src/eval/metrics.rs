use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::goal_matching::Modality;

/// A goal counts as reached when the agent stops closer than this.
pub const SUCCESS_DISTANCE_M: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalResult {
    pub episode: usize,
    pub goal_index: usize,
    pub modality: Modality,
    pub success: bool,
    pub steps: u32,
    pub path_m: f64,
    pub geodesic_m: f64,
    pub spl: f64,
}

/// `success × geodesic / max(path, geodesic)`; a successful zero-length
/// goal scores 1.
pub fn spl(success: bool, geodesic_m: f64, path_m: f64) -> f64 {
    if !success {
        return 0.0;
    }
    let denom = path_m.max(geodesic_m);
    if denom <= 0.0 {
        1.0
    } else {
        geodesic_m / denom
    }
}

/// Mean with a two-standard-error band.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub err: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat { mean: 0.0, err: 0.0, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let err = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            2.0 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, err, n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub sr: Stat,
    pub spl: Stat,
}

impl Summary {
    fn of<'a>(results: impl Iterator<Item = &'a GoalResult> + Clone) -> Summary {
        let sr: Vec<f64> = results.clone().map(|r| f64::from(u8::from(r.success))).collect();
        let spl: Vec<f64> = results.map(|r| r.spl).collect();
        Summary {
            sr: Stat::of(&sr),
            spl: Stat::of(&spl),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    /// 1-based goal position within the episode.
    pub goal_index: usize,
    pub sr: Stat,
    pub spl: Stat,
}

/// Published real-world figure, for context only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub method: String,
    pub sr_percent: f64,
    pub spl: f64,
    pub note: String,
}

impl Default for ReferenceRow {
    fn default() -> Self {
        ReferenceRow {
            method: "GOAT".into(),
            sr_percent: 83.0,
            spl: 0.642,
            note: "real-home average reported for the full system; not a target at this scale".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub episodes: usize,
    pub goals: usize,
    pub overall: Summary,
    pub per_modality: BTreeMap<Modality, Summary>,
    pub per_goal_index: Vec<IndexSummary>,
    pub reference: ReferenceRow,
}

/// Success rate and SPL per modality and per goal index. Error bars are two
/// standard errors over goals.
pub fn aggregate(results: &[GoalResult]) -> Report {
    let episodes = results
        .iter()
        .map(|r| r.episode)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let mut per_modality = BTreeMap::new();
    for m in Modality::ALL {
        if results.iter().any(|r| r.modality == m) {
            per_modality.insert(m, Summary::of(results.iter().filter(|r| r.modality == m)));
        }
    }
    let max_index = results.iter().map(|r| r.goal_index).max().unwrap_or(0);
    let per_goal_index = (1..=max_index)
        .filter(|i| results.iter().any(|r| r.goal_index == *i))
        .map(|i| {
            let s = Summary::of(results.iter().filter(|r| r.goal_index == i));
            IndexSummary {
                goal_index: i,
                sr: s.sr,
                spl: s.spl,
            }
        })
        .collect();
    Report {
        episodes,
        goals: results.len(),
        overall: Summary::of(results.iter()),
        per_modality,
        per_goal_index,
        reference: ReferenceRow::default(),
    }
}

pub const RESULTS_HEADER: [&str; 8] = [
    "episode",
    "goal_index",
    "modality",
    "success",
    "steps",
    "path_m",
    "geodesic_m",
    "spl",
];

pub fn write_results_csv(results: &[GoalResult], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RESULTS_HEADER)?;
    for r in results {
        out.write_record([
            r.episode.to_string(),
            r.goal_index.to_string(),
            r.modality.name().to_string(),
            u8::from(r.success).to_string(),
            r.steps.to_string(),
            format!("{}", r.path_m),
            format!("{}", r.geodesic_m),
            format!("{}", r.spl),
        ])?;
    }
    out.flush().map_err(|e| Error::io("results csv", e))?;
    Ok(())
}

pub fn read_results_csv(r: impl Read) -> Result<Vec<GoalResult>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let bad = |what: &str| Error::InvalidWorld(format!("results csv: bad {what} in {rec:?}"));
        let modality = match field(2) {
            "category" => Modality::Category,
            "image" => Modality::Image,
            "language" => Modality::Language,
            _ => return Err(bad("modality")),
        };
        out.push(GoalResult {
            episode: field(0).parse().map_err(|_| bad("episode"))?,
            goal_index: field(1).parse().map_err(|_| bad("goal_index"))?,
            modality,
            success: field(3) == "1",
            steps: field(4).parse().map_err(|_| bad("steps"))?,
            path_m: field(5).parse().map_err(|_| bad("path_m"))?,
            geodesic_m: field(6).parse().map_err(|_| bad("geodesic_m"))?,
            spl: field(7).parse().map_err(|_| bad("spl"))?,
        });
    }
    Ok(out)
}

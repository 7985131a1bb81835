//! Goal localization against the instance memory, and the offline
//! benchmark over the matching design grid.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Feature;
use crate::instance_memory::{InstanceMemory, ViewRecord};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Category,
    Image,
    Language,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Category, Modality::Image, Modality::Language];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Category => "category",
            Modality::Image => "image",
            Modality::Language => "language",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub modality: Modality,
    /// Category as extracted from the goal; may be wrong for image and
    /// language goals.
    pub category: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_feature: Option<Feature>,
    /// Ground-truth target object. Evaluation only; never read by the agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_id: Option<u32>,
}

impl GoalSpec {
    pub fn category(category: u32) -> Self {
        GoalSpec {
            modality: Modality::Category,
            category,
            goal_feature: None,
            goal_id: None,
        }
    }

    pub fn with_feature(modality: Modality, category: u32, feature: Feature) -> Self {
        GoalSpec {
            modality,
            category,
            goal_feature: Some(feature),
            goal_id: None,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cosine,
    KeypointProxy,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Context {
    Bbox,
    BboxPad,
    Full,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Max,
    Median,
    Avg,
    AvgTopK(usize),
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Aggregation::Max => f.write_str("max"),
            Aggregation::Median => f.write_str("median"),
            Aggregation::Avg => f.write_str("avg"),
            Aggregation::AvgTopK(k) => write!(f, "avg_top{k}"),
        }
    }
}

/// Default exploration threshold for cosine matching.
pub const COSINE_THRESHOLD: f64 = 0.75;
/// Exploration threshold for the keypoint proxy, calibrated on the fixture
/// benchmark.
pub const KEYPOINT_THRESHOLD: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub method: Method,
    pub threshold: Option<f64>,
    pub subsample_by_category: bool,
    pub context: Context,
    pub aggregation: Aggregation,
}

impl MatchConfig {
    /// Online settings for image goals.
    pub fn image_default() -> Self {
        MatchConfig {
            method: Method::KeypointProxy,
            threshold: Some(KEYPOINT_THRESHOLD),
            subsample_by_category: true,
            context: Context::BboxPad,
            aggregation: Aggregation::Max,
        }
    }

    /// Online settings for language goals.
    pub fn language_default() -> Self {
        MatchConfig {
            method: Method::Cosine,
            threshold: Some(COSINE_THRESHOLD),
            subsample_by_category: true,
            context: Context::BboxPad,
            aggregation: Aggregation::Max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Aggregation::AvgTopK(0) = self.aggregation {
            return Err(Error::InvalidMatchConfig("avg_top_k needs k >= 1".into()));
        }
        if let Some(t) = self.threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidMatchConfig(format!("threshold {t} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Short label, e.g. `keypoint_proxy/thr/cat/bbox_pad/max`.
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}/{}/{}",
            match self.method {
                Method::Cosine => "cosine",
                Method::KeypointProxy => "keypoint_proxy",
            },
            if self.threshold.is_some() { "thr" } else { "nothr" },
            if self.subsample_by_category { "cat" } else { "all" },
            match self.context {
                Context::Bbox => "bbox",
                Context::BboxPad => "bbox_pad",
                Context::Full => "full",
            },
            self.aggregation
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub instance: Option<u32>,
    /// Aggregated score of the winner (geodesic meters for category goals).
    pub score: f64,
    pub per_instance_scores: BTreeMap<u32, f64>,
}

pub fn view_feature(view: &ViewRecord, context: Context) -> &Feature {
    match context {
        Context::Bbox => &view.bbox,
        Context::BboxPad => &view.bbox_pad,
        Context::Full => &view.full,
    }
}

/// Similarity in `[0, 1]` between a feature goal and one stored view.
pub fn score_view(goal: &GoalSpec, view: &ViewRecord, cfg: &MatchConfig) -> Result<f64> {
    let g = goal.goal_feature.as_ref().ok_or(Error::CategoryGoalScored)?;
    Ok(score_feature(g, view_feature(view, cfg.context), view.distance_m, cfg.method))
}

pub fn score_feature(goal: &Feature, view: &Feature, distance_m: f64, method: Method) -> f64 {
    let cos = goal.cosine(view).clamp(0.0, 1.0);
    match method {
        Method::Cosine => cos,
        Method::KeypointProxy => {
            let visibility = if distance_m > 1.0 { 1.0 / distance_m } else { 1.0 };
            cos * visibility
        }
    }
}

pub fn aggregate(scores: &[f64], agg: Aggregation) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Ok(match agg {
        Aggregation::Max => sorted[0],
        Aggregation::Median => {
            if n % 2 == 1 {
                sorted[n / 2]
            } else {
                0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
            }
        }
        Aggregation::Avg => mean(&sorted),
        Aggregation::AvgTopK(k) => {
            if k == 0 {
                return Err(Error::InvalidMatchConfig("avg_top_k needs k >= 1".into()));
            }
            mean(&sorted[..k.min(n)])
        }
    })
}

/// Localizes `goal` in `memory`. Category goals take the candidate with the
/// smallest `geodesic(id)`; feature goals the highest aggregated score, which
/// must reach the threshold unless the environment is fully explored. Ties
/// go to the lower id.
pub fn localize_goal(
    goal: &GoalSpec,
    memory: &InstanceMemory,
    cfg: &MatchConfig,
    fully_explored: bool,
    geodesic: &dyn Fn(u32) -> f64,
) -> Result<MatchResult> {
    localize_goal_excluding(goal, memory, cfg, fully_explored, geodesic, &BTreeSet::new())
}

/// [`localize_goal`] with some instances removed from the candidate set.
pub fn localize_goal_excluding(
    goal: &GoalSpec,
    memory: &InstanceMemory,
    cfg: &MatchConfig,
    fully_explored: bool,
    geodesic: &dyn Fn(u32) -> f64,
    exclude: &BTreeSet<u32>,
) -> Result<MatchResult> {
    let none = |scores| MatchResult {
        instance: None,
        score: 0.0,
        per_instance_scores: scores,
    };
    let Some(feature) = goal.goal_feature.as_ref().filter(|_| goal.modality != Modality::Category) else {
        let mut scores = BTreeMap::new();
        let mut best: Option<(u32, f64)> = None;
        for id in memory.instances_by_category(goal.category) {
            if exclude.contains(&id) {
                continue;
            }
            let d = geodesic(id);
            scores.insert(id, d);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((id, d));
            }
        }
        return Ok(match best {
            Some((id, d)) => MatchResult {
                instance: Some(id),
                score: d,
                per_instance_scores: scores,
            },
            None => none(scores),
        });
    };
    cfg.validate()?;
    let mut scores = BTreeMap::new();
    let mut best: Option<(u32, f64)> = None;
    for inst in memory.instances() {
        if exclude.contains(&inst.id) || (cfg.subsample_by_category && inst.category != goal.category) {
            continue;
        }
        let per_view: Vec<f64> = inst
            .views
            .iter()
            .map(|v| score_feature(feature, view_feature(v, cfg.context), v.distance_m, cfg.method))
            .collect();
        let s = aggregate(&per_view, cfg.aggregation)?;
        scores.insert(inst.id, s);
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((inst.id, s));
        }
    }
    match best {
        Some((id, s)) if fully_explored || cfg.threshold.is_none_or(|t| s >= t) => Ok(MatchResult {
            instance: Some(id),
            score: s,
            per_instance_scores: scores,
        }),
        _ => Ok(none(scores)),
    }
}

/// One benchmark goal: which dump it runs against and the instance that
/// counts as correct (`None` when the target was never detected).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub dump: String,
    pub goal: GoalSpec,
    pub truth_instance: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub modality: Modality,
    pub method: Method,
    pub threshold: Option<f64>,
    pub subsample_by_category: bool,
    pub context: Context,
    pub aggregation: Aggregation,
    pub goals: usize,
    pub successes: usize,
    pub success_rate: f64,
}

/// Every (goal modality, method) pairing the benchmark covers: language
/// goals only have the cosine matcher.
pub const BENCHMARK_PAIRS: [(Modality, Method); 3] = [
    (Modality::Image, Method::KeypointProxy),
    (Modality::Image, Method::Cosine),
    (Modality::Language, Method::Cosine),
];

pub fn default_threshold(method: Method) -> f64 {
    match method {
        Method::Cosine => COSINE_THRESHOLD,
        Method::KeypointProxy => KEYPOINT_THRESHOLD,
    }
}

/// The full grid: per pairing, threshold on/off × subsampling × context ×
/// aggregation.
pub fn config_grid() -> Vec<(Modality, MatchConfig)> {
    let mut out = Vec::new();
    for (modality, method) in BENCHMARK_PAIRS {
        for threshold in [Some(default_threshold(method)), None] {
            for subsample_by_category in [true, false] {
                for context in [Context::Bbox, Context::BboxPad, Context::Full] {
                    for aggregation in [
                        Aggregation::Max,
                        Aggregation::Median,
                        Aggregation::Avg,
                        Aggregation::AvgTopK(2),
                    ] {
                        out.push((
                            modality,
                            MatchConfig {
                                method,
                                threshold,
                                subsample_by_category,
                                context,
                                aggregation,
                            },
                        ));
                    }
                }
            }
        }
    }
    out
}

/// Success rate of every grid entry over the annotations of its modality.
/// A goal succeeds when the localized instance equals the annotated truth;
/// localization runs in the exploration phase so thresholds apply.
pub fn run_matching_benchmark(
    dumps: &BTreeMap<String, InstanceMemory>,
    annotations: &[Annotation],
    grid: &[(Modality, MatchConfig)],
) -> Result<Vec<BenchmarkRow>> {
    for (index, a) in annotations.iter().enumerate() {
        let mem = dumps.get(&a.dump).ok_or_else(|| Error::BadAnnotation {
            index,
            what: format!("unknown dump {:?}", a.dump),
        })?;
        if let Some(t) = a.truth_instance {
            if mem.get(t).is_none() {
                return Err(Error::BadAnnotation {
                    index,
                    what: format!("unknown instance {t} in dump {:?}", a.dump),
                });
            }
        }
        if a.goal.goal_feature.is_none() {
            return Err(Error::BadAnnotation {
                index,
                what: "benchmark goals need a feature".into(),
            });
        }
    }
    let no_geodesic = |_: u32| 0.0;
    let mut rows = Vec::with_capacity(grid.len());
    for (modality, cfg) in grid {
        cfg.validate()?;
        let (mut goals, mut successes) = (0, 0);
        for a in annotations.iter().filter(|a| a.goal.modality == *modality) {
            goals += 1;
            let mem = &dumps[&a.dump];
            let r = localize_goal(&a.goal, mem, cfg, false, &no_geodesic)?;
            if r.instance.is_some() && r.instance == a.truth_instance {
                successes += 1;
            }
        }
        rows.push(BenchmarkRow {
            modality: *modality,
            method: cfg.method,
            threshold: cfg.threshold,
            subsample_by_category: cfg.subsample_by_category,
            context: cfg.context,
            aggregation: cfg.aggregation,
            goals,
            successes,
            success_rate: if goals == 0 { 0.0 } else { successes as f64 / goals as f64 },
        });
    }
    Ok(rows)
}

/// Writes benchmark rows as CSV.
pub fn write_benchmark_csv(rows: &[BenchmarkRow], w: impl std::io::Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "modality",
        "method",
        "threshold",
        "subsample",
        "context",
        "aggregation",
        "goals",
        "successes",
        "success_rate",
    ])?;
    for r in rows {
        let cfg = MatchConfig {
            method: r.method,
            threshold: r.threshold,
            subsample_by_category: r.subsample_by_category,
            context: r.context,
            aggregation: r.aggregation,
        };
        let label = cfg.label();
        let parts: Vec<&str> = label.split('/').collect();
        out.write_record([
            r.modality.name(),
            parts[0],
            &r.threshold.map_or("none".to_string(), |t| format!("{t}")),
            parts[2],
            parts[3],
            parts[4],
            &r.goals.to_string(),
            &r.successes.to_string(),
            &format!("{:.4}", r.success_rate),
        ])?;
    }
    out.flush().map_err(|e| Error::io("benchmark csv", e))?;
    Ok(())
}

//! Episode generation, method runs and metrics.

pub mod episode;
pub mod geodesic;
pub mod metrics;
pub mod runner;

pub use episode::{generate_episode, EpisodeConfig, EpisodeSpec};
pub use metrics::{aggregate, read_results_csv, spl, write_results_csv, GoalResult, Report, Stat};
pub use runner::{run_episode, run_specs, run_suite, suite_specs, EpisodeOutcome, RunConfig, TrajectoryStep};

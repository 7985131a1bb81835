use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use goat_core::eval::{
    aggregate, read_results_csv, run_specs, suite_specs, write_results_csv, EpisodeSpec, RunConfig,
};
use goat_core::goal_matching::{config_grid, run_matching_benchmark, write_benchmark_csv, Annotation};
use goat_core::instance_memory::{InstanceMemory, MemoryDump};
use goat_core::sim::load_world_with;
use goat_core::Variant;

#[derive(Parser)]
#[command(name = "goat", version, about = "Lifelong multimodal navigation on a gridworld")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an episode suite with one method.
    Run {
        /// World file; repeat to cycle episodes across worlds.
        #[arg(long, required = true)]
        world: Vec<PathBuf>,
        #[arg(long, default_value = "goat")]
        method: Variant,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run these episode specs (JSON list) instead of sampling.
        #[arg(long)]
        specs: Option<PathBuf>,
        /// Run configuration JSON; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Offline matching benchmark over memory dumps.
    AblateMatching {
        #[arg(long)]
        dumps: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate a results directory into a report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(
    world_paths: &[PathBuf],
    method: Variant,
    episodes: usize,
    seed: u64,
    specs: Option<&Path>,
    config: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg: RunConfig = match config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    let worlds = world_paths
        .iter()
        .map(|p| load_world_with(p, &cfg.sim.features).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let specs: Vec<EpisodeSpec> = match specs {
        Some(p) => read_json(p)?,
        None => suite_specs(&worlds, episodes, seed, &cfg.episode)?,
    };
    log::info!("running {} episodes with {}", specs.len(), method.name());
    let outcomes = run_specs(&worlds, &specs, method, &cfg)?;

    for sub in ["trajectories", "dumps"] {
        fs::create_dir_all(out.join(sub)).with_context(|| format!("creating {}", out.display()))?;
    }
    let mut results = Vec::new();
    let mut annotations: Vec<Annotation> = Vec::new();
    for o in &outcomes {
        let name = format!("episode_{:04}", o.episode);
        write_json(&out.join("trajectories").join(format!("{name}.json")), &o.trajectory)?;
        o.dump.save(out.join("dumps").join(format!("{name}.json")))?;
        results.extend(o.results.iter().cloned());
        annotations.extend(o.annotations.iter().cloned());
    }
    let csv_path = out.join("results.csv");
    let file = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    write_results_csv(&results, file)?;
    write_json(&out.join("results.json"), &results)?;
    write_json(&out.join("specs.json"), &specs)?;
    write_json(&out.join("annotations.json"), &annotations)?;

    let report = aggregate(&results);
    println!(
        "{}: {} goals, SR {:.3} ± {:.3}, SPL {:.3} ± {:.3}",
        method.name(),
        report.goals,
        report.overall.sr.mean,
        report.overall.sr.err,
        report.overall.spl.mean,
        report.overall.spl.err
    );
    Ok(())
}

fn ablate(dumps_dir: &Path, annotations: &Path, out: &Path) -> Result<()> {
    let mut dumps = BTreeMap::new();
    let entries = fs::read_dir(dumps_dir).with_context(|| format!("reading {}", dumps_dir.display()))?;
    for e in entries {
        let path = e?.path();
        if path.extension().and_then(|s| s.to_str()) != Some("json") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let mem = InstanceMemory::from_dump(MemoryDump::load(&path)?)?;
        dumps.insert(stem.to_string(), mem);
    }
    if dumps.is_empty() {
        bail!("no memory dumps in {}", dumps_dir.display());
    }
    let annotations: Vec<Annotation> = read_json(annotations)?;
    let rows = run_matching_benchmark(&dumps, &annotations, &config_grid())?;
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_benchmark_csv(&rows, file)?;
    println!("{} configurations over {} goals", rows.len(), annotations.len());
    Ok(())
}

fn report(input: &Path, out: &Path) -> Result<()> {
    let path = input.join("results.csv");
    let file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let results = read_results_csv(file)?;
    if results.is_empty() {
        bail!("{} has no results", path.display());
    }
    let report = aggregate(&results);
    write_json(out, &report)?;
    for s in &report.per_goal_index {
        println!("goal {:2}: SR {:.3} ± {:.3}  SPL {:.3} ± {:.3}", s.goal_index, s.sr.mean, s.sr.err, s.spl.mean, s.spl.err);
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GOAT_LOG", "warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            world,
            method,
            episodes,
            seed,
            specs,
            config,
            out,
        } => run(&world, method, episodes, seed, specs.as_deref(), config.as_deref(), &out),
        Command::AblateMatching { dumps, annotations, out } => ablate(&dumps, &annotations, &out),
        Command::Report { input, out } => report(&input, &out),
    }
}

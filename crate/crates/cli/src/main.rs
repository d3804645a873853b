//! `arc-lab`: runs pipeline stages from a JSON experiment config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arc_lab::analysis::ColorBy;
use arc_lab::harness::{run, run_sweep, Cache, ExperimentConfig, RunOptions, RunReport, Stage};
use arc_lab::representations::RepKind;
use arc_lab::Error;
use clap::{Args, Parser, Subcommand};

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "arc-lab", version, about = "Actionable representations on grid worlds")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment config (JSON). Built-in wall-world defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: the config's output_dir, else out/<name>].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Artifact cache directory.
    #[arg(long, global = true, env = "ARC_LAB_CACHE", default_value = ".arc-lab-cache")]
    cache: PathBuf,
    /// Recompute everything and store nothing.
    #[arg(long, global = true)]
    no_cache: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the soft goal-conditioned policies and report Bellman residuals.
    Gcp {
        /// Overrides gcp.alpha.
        #[arg(long, allow_negative_numbers = true)]
        alpha: Option<f64>,
    },
    /// Collect the trajectory dataset.
    Dataset,
    /// Compute the actionable distance matrix.
    Dact,
    /// Train the configured representations.
    TrainRep {
        /// Only train these kinds (repeatable).
        #[arg(long = "kind", value_parser = parse_kind)]
        kinds: Vec<RepKind>,
    },
    /// k-means over each embedding.
    Cluster {
        /// Overrides analysis.clusters (repeatable).
        #[arg(long = "k")]
        k: Vec<usize>,
    },
    /// Scatter plots, MDS of the distance matrix, perturbation spread.
    Analyze {
        #[arg(long, value_parser = parse_color)]
        color_by: Option<ColorBy>,
    },
    /// Reward shaping on the large open grid.
    Shaping {
        /// Overrides shaping.alpha_scale.
        #[arg(long, allow_negative_numbers = true)]
        alpha_scale: Option<f64>,
    },
    /// Linear Q-learning on embedding features (reach-avoid).
    Features,
    /// Hierarchical control over clusters or latents.
    Hrl,
    /// Run every cell of the config's sweep grid.
    Sweep,
    /// Run every configured stage and print the metrics table.
    Report,
}

fn parse_kind(s: &str) -> Result<RepKind, String> {
    RepKind::parse(s).map_err(|e| e.to_string())
}

fn parse_color(s: &str) -> Result<ColorBy, String> {
    ColorBy::parse(s).map_err(|e| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Stage { source, .. } => exit_code(source),
        _ => EXIT_RUNTIME,
    }
}

fn config_error(msg: String) -> Error {
    Error::Config(msg)
}

fn load_config(g: &Global) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| match e {
            Error::Io { .. } => config_error(e.to_string()),
            e => e,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ExperimentConfig, command: &Command) -> Result<Vec<Stage>, Error> {
    let stage = match command {
        Command::Gcp { alpha } => {
            if let Some(a) = alpha {
                cfg.gcp.alpha = *a;
            }
            Stage::Gcp
        }
        Command::Dataset => Stage::Dataset,
        Command::Dact => Stage::Dact,
        Command::TrainRep { kinds } => {
            if !kinds.is_empty() {
                if let Some(k) = kinds.iter().find(|k| !cfg.representations.iter().any(|r| r.kind == **k)) {
                    return Err(config_error(format!("representation `{}` is not in the config", k.name())));
                }
                cfg.representations.retain(|r| kinds.contains(&r.kind));
            }
            Stage::Representations
        }
        Command::Cluster { k } => {
            if !k.is_empty() {
                cfg.analysis.clusters = k.clone();
            }
            Stage::Cluster
        }
        Command::Analyze { color_by } => {
            if color_by.is_some() {
                cfg.analysis.color_by = *color_by;
            }
            Stage::Analyze
        }
        Command::Shaping { alpha_scale } => {
            let shaping = cfg.shaping.get_or_insert_with(Default::default);
            if let Some(a) = alpha_scale {
                shaping.alpha_scale = *a;
            }
            Stage::Shaping
        }
        Command::Features => {
            cfg.features.get_or_insert_with(Default::default);
            Stage::Features
        }
        Command::Hrl => {
            cfg.hrl.get_or_insert_with(Default::default);
            Stage::Hrl
        }
        Command::Sweep | Command::Report => return Ok(Vec::new()),
    };
    cfg.validate()?;
    Ok(vec![stage])
}

fn out_dir(g: &Global, cfg: &ExperimentConfig) -> PathBuf {
    g.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| Path::new("out").join(&cfg.name))
}

fn print_report(report: &RunReport, out: &Path) {
    for st in &report.stages {
        let how = if st.cache_hit { "cached" } else { "computed" };
        println!("{:<16} {how:<8} {:>8.2}s", st.stage.name(), st.seconds);
        for (k, v) in &st.metrics {
            println!("    {k:<32} {v}");
        }
    }
    println!("outputs in {}", out.display());
}

fn execute(cli: Cli) -> Result<(), Error> {
    let mut cfg = load_config(&cli.global)?;
    let targets = apply_overrides(&mut cfg, &cli.command)?;
    let opts = RunOptions {
        out_dir: out_dir(&cli.global, &cfg),
        cache: if cli.global.no_cache { Cache::disabled() } else { Cache::new(&cli.global.cache) },
    };
    match cli.command {
        Command::Sweep => {
            if cfg.sweep.is_empty() {
                return Err(config_error("the config has no sweep axes".into()));
            }
            let results = run_sweep(&cfg, &opts)?;
            for (cell, report) in &results {
                let hits = report.stages.iter().filter(|s| s.cache_hit).count();
                println!("{:<40} {} stages, {hits} cached, {:.2}s", cell.name, report.stages.len(), report.wall_clock_secs);
            }
            println!("sweep table in {}", opts.out_dir.join("sweep.csv").display());
        }
        _ => {
            let report = run(&cfg, &opts, &targets)?;
            print_report(&report, &opts.out_dir);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("arc-lab: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use selftrain_core::orchestrator::{
    cmd_augment, cmd_build_db, cmd_eval, cmd_filter, cmd_gen_world, cmd_report, cmd_seed_generate, cmd_self_train,
    resolve_config, RunOptions, SelfTrainConfig,
};
use selftrain_core::{Error, Result};

/// Self-training label pipeline for LiDAR object detection.
#[derive(Debug, Parser)]
#[command(name = "selftrain", version)]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override a configuration field, e.g. `--set filter.rho=0.3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Master seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,

    /// Skip rounds that already completed.
    #[arg(long, global = true)]
    resume: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic multi-traversal world to the data root.
    GenWorld,
    /// Compute PP sidecars and seed labels; create round 0.
    SeedGenerate,
    /// Run self-training rounds 1..=max_rounds.
    SelfTrain,
    /// Apply one filtering step to a detections directory.
    Filter {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a ground-truth database from a label directory.
    BuildDb {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ground-truth sampling and global augmentation of labeled scenes.
    Augment {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Round number used to derive the random streams.
        #[arg(long, default_value_t = 0)]
        round: usize,
    },
    /// Range-binned AP of detections against ground truth, as CSV.
    Eval {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-round summary CSV.
    Report {
        /// Rounds directory (default: `<data_root>/rounds`).
        #[arg(long)]
        rounds: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let cfg: SelfTrainConfig = resolve_config(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    let force = cli.force;
    match cli.command {
        Command::GenWorld => {
            let root = cmd_gen_world(&cfg, force)?;
            println!("wrote {} samples to {}", cfg.world.n_samples, root.display());
        }
        Command::SeedGenerate => {
            let s = cmd_seed_generate(&cfg, force)?;
            println!(
                "{} samples, {} seed labels, {} database entries ({} skipped)",
                s.samples, s.seed_labels, s.db.entries, s.db.skipped
            );
        }
        Command::SelfTrain => {
            let manifests = cmd_self_train(&cfg, RunOptions { force, resume: cli.resume })?;
            for m in manifests {
                let t = m.threshold.value().map_or("none".to_string(), |t| format!("{t:.4}"));
                let c = m.counts;
                print!(
                    "round {}: {} detections, {} after PP, t={t}, {} pseudo-labels, {} database entries",
                    m.round, c.detections, c.after_pp, c.pseudo_labels, m.db_entries
                );
                if let Some(a) = &m.audit {
                    print!(
                        "; pseudo-label P/R {:.3}/{:.3}, database P {:.3}",
                        a.pseudo_labels.precision, a.pseudo_labels.recall, a.database.precision
                    );
                }
                println!();
            }
        }
        Command::Filter { detections, out } => {
            let s = cmd_filter(&cfg, &detections, &out, force)?;
            let t = s.threshold.value().map_or("none".to_string(), |t| format!("{t:.4}"));
            println!(
                "t={t}: {} detections, {} after PP, {} pseudo-labels, {} augmentation labels",
                s.counts.detections, s.counts.after_pp, s.counts.pseudo_labels, s.counts.augmentation_labels
            );
        }
        Command::BuildDb { labels, out } => {
            let s = cmd_build_db(&cfg, &labels, &out, force)?;
            println!("{} entries, {} skipped", s.entries, s.skipped);
        }
        Command::Augment {
            labels,
            db,
            out,
            round,
        } => {
            let s = cmd_augment(&cfg, &labels, &db, &out, round, force)?;
            println!("{} samples, {} inserted, {} labels", s.samples, s.inserted, s.labels);
        }
        Command::Eval { dets, gts, out } => {
            let report = cmd_eval(&dets, &gts, &cfg.eval)?;
            emit(&report.to_csv(), out.as_ref())?;
            eprintln!("mean predicted objects per sample: {:.4}", report.mean_predicted_objects);
        }
        Command::Report { rounds, out } => {
            let rounds = rounds.unwrap_or_else(|| cfg.data_root.join("rounds"));
            emit(&cmd_report(&rounds)?, out.as_ref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

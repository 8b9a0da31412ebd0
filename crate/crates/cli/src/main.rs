use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use noisomics::commands::{self, InvalidArgument};
use noisomics::Config;
use noisomics_core::model::TrainingMode;

#[derive(Parser)]
#[command(name = "noisomics", version, about = "Synthesize, learn and quantify image noise")]
struct Cli {
    /// TOML configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for synthesis and inference (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write corrupted images and a manifest.
    Synthesize {
        #[arg(long)]
        out: PathBuf,
        /// Number of corrupted samples.
        #[arg(long)]
        count: Option<usize>,
        /// `procedural` or a directory of clean images.
        #[arg(long)]
        source: Option<String>,
    },
    /// Train a checkpoint.
    Train {
        manifest: PathBuf,
        #[arg(long)]
        mode: String,
        #[arg(long)]
        out: PathBuf,
        /// Starting checkpoint (required for finetune).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict strengths per image from random windows.
    Estimate {
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        windows: Option<usize>,
        /// Window side in pixels (0 = model input size).
        #[arg(long)]
        window_size: Option<usize>,
    },
    /// Build analysis reports from predictions.
    Analyze {
        predictions: PathBuf,
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of metrics,classification,correlation,shapley,depth.
        #[arg(long, value_delimiter = ',')]
        analyses: Option<Vec<String>>,
    },
    /// Measure synthesis, inference and training throughput.
    Bench {
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    match cli.command {
        Command::Synthesize { out, count, source } => {
            if let Some(c) = count {
                cfg.synthesize.count = c;
            }
            if let Some(s) = source {
                cfg.synthesize.source = s;
            }
            let r = commands::synthesize::run(&cfg, &out)?;
            for e in &r.errors {
                eprintln!("error: {}", e);
            }
            println!("{}", r.manifest_path.display());
        }
        Command::Train { manifest, mode, out, init, epochs } => {
            let mode: TrainingMode = mode.parse().map_err(|e| InvalidArgument(format!("{}", e)))?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let r = commands::train::run(&cfg, &manifest, mode, init.as_deref(), &out)?;
            println!("{}  {}", r.sha256, r.checkpoint_path.display());
        }
        Command::Estimate { manifest, checkpoint, out, windows, window_size } => {
            if let Some(w) = windows {
                cfg.estimate.windows = w;
            }
            if let Some(w) = window_size {
                cfg.estimate.window_size = w;
            }
            let r = commands::estimate::run(&cfg, &manifest, &checkpoint, &out)?;
            println!("{}", r.path.display());
        }
        Command::Analyze { predictions, manifest, out, analyses } => {
            if let Some(a) = analyses {
                cfg.analyze.analyses = a;
            }
            let r = commands::analyze::run(&cfg, &predictions, &manifest, &out)?;
            let skipped = r.report.rows.iter().filter(|r| r.note.starts_with("skipped")).count();
            println!("{} rows ({} skipped)", r.report.rows.len(), skipped);
        }
        Command::Bench { out } => {
            let r = commands::bench::run(&cfg, &out)?;
            for row in &r.rows {
                println!("{:<26} {:<16} {:.4}", row.metric, row.subset, row.value.unwrap_or(f64::NAN));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            if e.downcast_ref::<InvalidArgument>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

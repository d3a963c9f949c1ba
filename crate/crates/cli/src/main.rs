//! `airtree`: command-line front end for the phenotyping pipeline. Every
//! subcommand works on one work directory (`--out`) and one JSON config.

use std::path::PathBuf;
use std::process::ExitCode;

use airtree::pipeline::{self, CommandReport, PipelineConfig, PipelineError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "airtree", version, about = "Airway-tree autoencoder phenotyping pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; all random streams derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Work directory holding all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override, e.g. `--set train.config.max_epochs=30`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic labeled cohort.
    Synth {
        #[arg(long)]
        n_per_class: Option<usize>,
    },
    /// Align volumes and write MIP stacks for every variant.
    Preprocess,
    /// Cross-validated autoencoder training.
    Train,
    /// Fine-tune the best fold model on trachea-masked stacks.
    Finetune,
    /// Write bottleneck features for every subject.
    Encode,
    /// PCA, k selection, kNN graph and Louvain clustering.
    Cluster {
        /// Fix k instead of selecting it from the plateau.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Reconstruction metrics across folds.
    Evaluate {
        /// Score ground truth against itself (pipeline check).
        #[arg(long)]
        identity_model: bool,
    },
    /// Clustering reproducibility against subsets and variants.
    Reproduce,
    /// Print the effective config as JSON.
    Config,
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    let mut overrides = cli.overrides.clone();
    match &cli.command {
        Command::Synth { n_per_class: Some(n) } => overrides.push(format!("cohort.n_per_class={n}")),
        Command::Cluster { k: Some(k) } => overrides.push(format!("cluster.k={k}")),
        Command::Evaluate { identity_model: true } => overrides.push("evaluate.identity_model=true".into()),
        _ => {}
    }
    cfg = cfg.with_overrides(&overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &cli.out {
        cfg.work_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Option<CommandReport>, PipelineError> {
    let cfg = effective_config(cli)?;
    pipeline::configure_threads(cfg.jobs);
    let report = match cli.command {
        Command::Synth { .. } => pipeline::synth(&cfg)?,
        Command::Preprocess => pipeline::preprocess(&cfg)?,
        Command::Train => pipeline::train(&cfg)?,
        Command::Finetune => pipeline::finetune(&cfg)?,
        Command::Encode => pipeline::encode(&cfg)?,
        Command::Cluster { .. } => pipeline::cluster(&cfg)?,
        Command::Evaluate { .. } => pipeline::evaluate(&cfg)?,
        Command::Reproduce => pipeline::reproduce(&cfg)?,
        Command::Config => {
            println!("{}", cfg.to_json_pretty());
            println!("config hash: {}", cfg.hash());
            return Ok(None);
        }
    };
    Ok(Some(report))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(report)) => {
            eprintln!("{}", report.summary());
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

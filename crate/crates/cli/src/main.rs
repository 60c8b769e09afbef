use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use handid::config::{BackboneKind, ExperimentConfig, Overrides};
use handid::datasets::Subset;
use handid::pipeline::{cmd_evaluate, cmd_prepare, cmd_train, cmd_visualize, TrainOptions};
use log::error;

#[derive(Parser)]
#[command(name = "handid", version, about = "Hand-based person identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan the dataset and write partition and split manifests.
    Prepare {
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune the backbone on the training partition.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the last checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint over the Monte Carlo splits.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to score (defaults to the run's last).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render ranked retrieval grids for sampled queries.
    Visualize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        n_queries: usize,
        #[arg(long, default_value_t = 10)]
        top_n: usize,
        /// Monte Carlo split to draw queries from.
        #[arg(long, default_value_t = 0)]
        split: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    subset: Option<Subset>,
    #[arg(long)]
    backbone: Option<BackboneKind>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    partition_seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long, alias = "seed")]
    training_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Replace a run directory written under a different config.
    #[arg(long)]
    overwrite: bool,
}

impl Common {
    fn load(&self) -> handid::Result<ExperimentConfig> {
        let overrides = Overrides {
            subset: self.subset,
            backbone: self.backbone,
            output_dir: self.output_dir.clone(),
            partition_seed: self.partition_seed,
            split_seed: self.split_seed,
            training_seed: self.training_seed,
            epochs: self.epochs,
        };
        Ok(ExperimentConfig::load(&self.config)?.resolve(&overrides))
    }
}

fn run(cli: Cli) -> handid::Result<()> {
    match cli.command {
        Command::Prepare { common } => {
            let summary = cmd_prepare(&common.load()?, common.overwrite)?;
            print!("{}", summary.render());
        }
        Command::Train { common, resume } => {
            let cfg = common.load()?;
            let report = cmd_train(&cfg, TrainOptions { overwrite: common.overwrite, resume })?;
            if let Some(last) = report.history.last() {
                println!(
                    "epoch {} loss {:.4} (id {:.4}, supcon {:.4})",
                    last.epoch + 1,
                    last.total_loss,
                    last.id_loss,
                    last.supcon_loss
                );
            }
            if let Some(best) = report.best_val_rank1 {
                println!("best validation rank-1 {:.2}%", best * 100.0);
            }
            println!("checkpoints in {}", cfg.output_dir.join("checkpoints").display());
        }
        Command::Evaluate { common, checkpoint } => {
            let out = cmd_evaluate(&common.load()?, checkpoint.as_deref(), common.overwrite)?;
            print!("{}", out.report);
            println!("written to {}", out.report_path.display());
        }
        Command::Visualize { common, checkpoint, n_queries, top_n, split } => {
            let out = cmd_visualize(&common.load()?, checkpoint.as_deref(), n_queries, top_n, split, common.overwrite)?;
            println!("{} queries x {} results written to {}", out.queries.len(), out.shown, out.path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use hcrn::bench::{run_bench, BenchConfig};
use hcrn::config::RunConfig;
use hcrn::synth::{self, DatasetSpec};
use hcrn::trainer;

#[derive(Parser)]
#[command(
    name = "hcrn",
    about = "Hierarchical conditional relation networks for video QA at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset directory's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Run config; defaults to config.txt next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate a synthetic dataset directory from a spec file.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the cost-model benchmark and print the comparison table.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Train { config, seed, out } => {
            let mut run = RunConfig::from_file(&config)
                .with_context(|| format!("reading run config {}", config.display()))?;
            if let Some(s) = seed {
                run.seed = s;
            }
            if let Some(dir) = out {
                run.out_dir = dir.to_string_lossy().into_owned();
            }
            let outcome = trainer::run_training(&run)?;
            if let Some((metric, value)) = outcome.test_metric {
                println!(
                    "best epoch {} (val {:.4}); test {metric} = {value:.4}",
                    outcome.best_epoch, outcome.best_val
                );
            }
            println!("artifacts in {}", run.out_dir);
        }
        Command::Eval {
            checkpoint,
            dataset,
            config,
        } => {
            let (metric, value) =
                trainer::run_evaluation(&checkpoint, &dataset, config.as_deref())?;
            println!("test {metric} = {value:.6}");
        }
        Command::GenData { spec, out } => {
            let text = std::fs::read_to_string(&spec)
                .with_context(|| format!("reading dataset spec {}", spec.display()))?;
            let spec = DatasetSpec::parse(&text)?;
            let dataset = synth::generate(&spec)?;
            synth::save_dataset(&out, &dataset)?;
            let oracle = synth::oracle_solvability(&dataset, &dataset.test);
            println!(
                "wrote {} train / {} val / {} test samples to {} (oracle solvability {:.3})",
                dataset.train.len(),
                dataset.val.len(),
                dataset.test.len(),
                out.display(),
                oracle
            );
        }
        Command::Bench { config } => {
            let bench = BenchConfig::from_file(&config)?;
            print!("{}", run_bench(&bench)?);
        }
    }
    Ok(())
}

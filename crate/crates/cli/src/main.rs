//! `compdef` — evaluate lossy compression as a preprocessing defense
//! against gradient-based adversarial attacks.
//!
//! Exit codes: 0 success, 1 configuration error, 2 completed with
//! partial grid-cell failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use compressdef_cli::config::ExperimentConfig;
use compressdef_cli::runner;

#[derive(Parser)]
#[command(name = "compdef", version, about = "Lossy compression as an adversarial defense")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration file (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override the config file's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config file's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, compressdef_core::CoreError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured models and learned codecs.
    Train(ConfigArgs),
    /// Attack the first model without a defense and report accuracy.
    Attack(ConfigArgs),
    /// Run the full model x defense x attack x budget grid.
    Evaluate(ConfigArgs),
    /// Measure JPEG bits per pixel over the quality grid.
    Bpp(ConfigArgs),
    /// Measure per-image defended-classification latency.
    Overhead(ConfigArgs),
    /// Render figures from a previously written report.json.
    Plot(ConfigArgs),
    /// Full pipeline: train, evaluate, bpp, overhead, plot.
    All(ConfigArgs),
    /// Write a sample dataset (IDX glyphs + PNG photos) to disk.
    GenData {
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
        /// Training samples.
        #[arg(long, default_value_t = 900)]
        train: usize,
        /// Held-out samples.
        #[arg(long, default_value_t = 200)]
        test: usize,
        /// Photo count.
        #[arg(long, default_value_t = 64)]
        photos: usize,
        /// Corpus seed.
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut log = |line: &str| println!("{line}");
    let outcome: Result<usize, compressdef_core::CoreError> = match &cli.command {
        Command::Train(a) => a.load().and_then(|c| runner::run_train(&c, &mut log)).map(|_| 0),
        Command::Attack(a) => a.load().and_then(|c| runner::run_attack_cmd(&c, &mut log)).map(|_| 0),
        Command::Evaluate(a) => a
            .load()
            .and_then(|c| runner::run_evaluate(&c, &mut log))
            .map(|r| r.failed_cells()),
        Command::Bpp(a) => a.load().and_then(|c| runner::run_bpp(&c, &mut log)).map(|_| 0),
        Command::Overhead(a) => a.load().and_then(|c| runner::run_overhead(&c, &mut log)).map(|_| 0),
        Command::Plot(a) => a.load().and_then(|c| runner::run_plot(&c, &mut log)).map(|_| 0),
        Command::All(a) => a.load().and_then(|c| runner::run_all(&c, &mut log)),
        Command::GenData {
            out,
            train,
            test,
            photos,
            seed,
        } => runner::run_gen_data(out, *train, *test, *photos, *seed, &mut log).map(|_| 0),
    };
    match outcome {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("completed with {failed} failed grid cells");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

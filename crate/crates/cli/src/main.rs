use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use denoise_cli::commands::{self, EnhanceInput, Enhancer};
use denoise_cli::config::ExperimentConfig;
use denoise_cli::{configure_threads, exit_code};
use denoise_core::mixer::Split;
use denoise_core::pipeline::{InputMode, LossMode};
use denoise_core::Result;

#[derive(Parser)]
#[command(name = "denoise", version, about = "DNN speech enhancement experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Input features: bd, bsd or bed.
    #[arg(long)]
    mode: Option<InputMode>,
    /// Training loss: mse, ath or masking.
    #[arg(long)]
    loss: Option<LossMode>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Logmmse,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the synthetic clean and noise corpora.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Draws a mixture manifest and renders the noisy WAVs.
    Mix {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "train")]
        split: Split,
        /// Number of mixtures; defaults to the config's corpus size.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Trains a model on the train manifest, validated on the validation one.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Enhances a split's mixtures or a single WAV file.
    Enhance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        baseline: Option<Baseline>,
        #[arg(long, default_value = "test", conflicts_with = "input")]
        split: Split,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Scores enhanced outputs against the clean references.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Systems to score, by label (e.g. bd, bed-masking, logmmse).
        #[arg(long, value_delimiter = ',', required = true)]
        systems: Vec<String>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(m) = common.mode {
        cfg.feature.mode = m;
    }
    if let Some(l) = common.loss {
        cfg.train.loss = l;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth { common } => commands::cmd_synth(&load(&common)?),
        Command::Mix { common, split, count } => {
            let out = commands::cmd_mix(&load(&common)?, split, count)?;
            println!("{} mixtures, manifest {}", out.files.len(), out.manifest.display());
            Ok(())
        }
        Command::Train { common } => {
            let out = commands::cmd_train(&load(&common)?, |r| {
                eprintln!("epoch {:>3}  train {:.5}  val {:.5}  lr {:.4}", r.epoch, r.train_loss, r.val_loss, r.lr)
            })?;
            println!("{}: best epoch {} (val {:.5}), {}", out.label, out.history.best_epoch, out.history.best_val_loss, out.model.display());
            Ok(())
        }
        Command::Enhance { common, baseline, split, input, out_dir } => {
            let cfg = load(&common)?;
            let enhancer = if baseline.is_some() { Enhancer::LogMmse } else { Enhancer::Model };
            let source = input.map(EnhanceInput::File).unwrap_or(EnhanceInput::Manifest(split));
            let files = commands::cmd_enhance(&cfg, &enhancer, &source, out_dir.as_deref())?;
            println!("{} files enhanced with {}", files.len(), enhancer.label(&cfg));
            Ok(())
        }
        Command::Evaluate { common, split, systems } => {
            let cfg = load(&common)?;
            let report = commands::cmd_evaluate(&cfg, split, &systems)?;
            print!("{}", report.aggregate_csv());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

//! `neurodecode`: config-driven entry point for the voxels-to-image
//! pipeline. One subcommand per stage; exit 0 on success, 1 on usage
//! errors, 2 on runtime failures.

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "neurodecode",
    version,
    about = "Reconstructs images from (simulated) voxel activity: synthetic data, \
             encoder features, ridge decoding, coarse reconstruction, GAN refinement"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; built-in defaults apply when omitted
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Directory receiving every artifact of this run
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Override the global seed (stage seeds derive from it)
    #[arg(long)]
    seed: Option<u64>,

    /// Pin fully deterministic single-threaded numerics
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate the synthetic dataset (images, features, voxels, manifest)
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train the category encoder and export its features into the manifest
    TrainEncoder {
        #[command(flatten)]
        common: Common,
        /// Override the number of training steps
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the learning rate
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Fit the ridge decoder and the voxel category classifier
    FitDecoder {
        #[command(flatten)]
        common: Common,
        /// Override the ridge penalty
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Train the coarse reconstruction network
    TrainRecon {
        #[command(flatten)]
        common: Common,
        /// Override the number of epochs
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the initial learning rate
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Train the per-category refinement GANs
    TrainGan {
        #[command(flatten)]
        common: Common,
        /// Override the number of epochs
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the learning rate
        #[arg(long)]
        lr: Option<f64>,
        /// Train only this category id
        #[arg(long)]
        category: Option<usize>,
    },
    /// Decode the test split's voxels into refined images
    Reconstruct {
        #[command(flatten)]
        common: Common,
    },
    /// Emit the decoding table, reconstruction metrics, and comparison grid
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
}

fn apply_common(cfg: &mut RunConfig, common: &Common) {
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.deterministic {
        cfg.deterministic = true;
    }
}

fn run(cli: Cli) -> neurodecode::Result<()> {
    match cli.cmd {
        Cmd::Synth { common } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            apply_common(&mut cfg, &common);
            cfg.write_echo(&common.out)?;
            stages::run_synth(&cfg, &common.out)
        }
        Cmd::TrainEncoder { common, epochs, lr } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            apply_common(&mut cfg, &common);
            if let Some(e) = epochs {
                cfg.encoder.steps = e;
            }
            if let Some(lr) = lr {
                cfg.encoder.lr = lr;
            }
            cfg.write_echo(&common.out)?;
            stages::run_train_encoder(&cfg, &common.out)
        }
        Cmd::FitDecoder { common, alpha } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            apply_common(&mut cfg, &common);
            if let Some(a) = alpha {
                cfg.decoder.alpha = a;
            }
            cfg.write_echo(&common.out)?;
            stages::run_fit_decoder(&cfg, &common.out)
        }
        Cmd::TrainRecon { common, epochs, lr } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            apply_common(&mut cfg, &common);
            if let Some(e) = epochs {
                cfg.recon.epochs = e;
            }
            if let Some(lr) = lr {
                cfg.recon.lr0 = lr;
            }
            cfg.write_echo(&common.out)?;
            stages::run_train_recon(&cfg, &common.out)
        }
        Cmd::TrainGan {
            common,
            epochs,
            lr,
            category,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            apply_common(&mut cfg, &common);
            if let Some(e) = epochs {
                cfg.gan.epochs = e;
            }
            if let Some(lr) = lr {
                cfg.gan.lr = lr;
            }
            if category.is_some() {
                cfg.gan.category = category;
            }
            cfg.write_echo(&common.out)?;
            stages::run_train_gan(&cfg, &common.out)
        }
        Cmd::Reconstruct { common } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            apply_common(&mut cfg, &common);
            cfg.write_echo(&common.out)?;
            stages::run_reconstruct(&cfg, &common.out)
        }
        Cmd::Evaluate { common } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            apply_common(&mut cfg, &common);
            cfg.write_echo(&common.out)?;
            stages::run_evaluate(&cfg, &common.out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("NEURODECODE_LOG", "warn"),
    )
    .format_timestamp(None)
    .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

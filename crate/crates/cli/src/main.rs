mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{key_listing, RunConfig};
use crate::exit::{fail, CmdResult, Code, Coded};

/// Per-class DCGAN augmentation pipeline: train GANs, generate synthetic
/// images, score them with SSIM, train a VGG-style classifier on them and
/// evaluate it on real images.
#[derive(Parser)]
#[command(name = "ganaug", version, after_help = key_listing())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Random seed (same as `--set seed=N`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the GAN of one class.
    #[command(after_help = key_listing())]
    TrainGan {
        /// Class directory name under --data.
        #[arg(long = "class")]
        class: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sample images from a generator checkpoint.
    #[command(after_help = key_listing())]
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of images.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Write PNG instead of PPM.
        #[arg(long)]
        png: bool,
        #[command(flatten)]
        common: Common,
    },
    /// SSIM of generated images against the real images of their class.
    #[command(after_help = key_listing())]
    Ssim {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        /// Report CSV path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the classifier on a class-per-directory image tree.
    #[command(after_help = key_listing())]
    TrainClf {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a classifier checkpoint on a class-per-directory image tree.
    #[command(after_help = key_listing())]
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn resolve(command: &str, common: &Common, extra: &[(&str, String)]) -> CmdResult<RunConfig> {
    let mut sets = common.sets.clone();
    if let Some(seed) = common.seed {
        sets.push(format!("seed={seed}"));
    }
    sets.extend(extra.iter().map(|(k, v)| format!("{k}={v}")));
    RunConfig::load(commands::keys_for(command), common.config.as_deref(), &sets).code(Code::Config)
}

fn init_threads() -> CmdResult {
    let Ok(raw) = std::env::var("GANAUG_THREADS") else { return Ok(()) };
    let n: usize = raw.trim().parse().map_err(|_| fail(Code::Config, format!("GANAUG_THREADS must be a count, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().code(Code::Config)
}

fn run(cli: Cli) -> CmdResult {
    init_threads()?;
    match cli.command {
        Command::TrainGan { class, data, out, common } => commands::train_gan(&class, &data, &out, resolve("train-gan", &common, &[])?),
        Command::Generate { checkpoint, n, out, png, common } => {
            let mut extra = Vec::new();
            if let Some(n) = n {
                extra.push(("n", n.to_string()));
            }
            if png {
                extra.push(("format", "png".to_string()));
            }
            commands::generate(&checkpoint, &out, resolve("generate", &common, &extra)?)
        }
        Command::Ssim { real, generated, out, common } => commands::ssim(&real, &generated, &out, resolve("ssim", &common, &[])?),
        Command::TrainClf { data, out, common } => commands::train_clf(&data, &out, resolve("train-clf", &common, &[])?),
        Command::Evaluate { model, data, out, common } => commands::evaluate(&model, &data, &out, resolve("evaluate", &common, &[])?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code as u8)
        }
    }
}

//! `lfv`: dataset generation, training, synthesis, evaluation and
//! light-field applications behind one command line.
//!
//! Every command takes `--config <path> --seed <n> --out <dir>`, writes its
//! results under `--out`, and finishes by writing `manifest.json` there.

pub mod commands;
pub mod error;
pub mod eval;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use lfv_core::io::PixelFormat;
use lfv_scenegen::{SceneTemplate, Split};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use crate::error::{CliError, Result};
pub use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "lfv", version, about = "Light-field video synthesis toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML or JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a procedural light-field video dataset.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Overrides `count` from the config.
        #[arg(long)]
        count: Option<usize>,
        /// Overrides `split` from the config.
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
    },
    /// Train a network on a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// Save a checkpoint every this many iterations (0: only at the end).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
    },
    /// Synthesize a light-field video from the center views of a container.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Checkpoint base path (without `.bin`/`.json`).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input container; only its center views are used.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_format, default_value = "pfm")]
        format: PixelFormat,
    },
    /// Score a predicted container against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Row label in the summary tables.
        #[arg(long)]
        label: Option<String>,
    },
    /// Refocus every frame at one disparity.
    Refocus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        disparity: f32,
    },
    /// Extract a row EPI from every frame.
    Epi {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        row: usize,
        /// Vertical view index of the EPI.
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        v: i32,
    },
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split {s:?}; expected train or test")),
    }
}

fn parse_format(s: &str) -> std::result::Result<PixelFormat, String> {
    match s {
        "pfm" => Ok(PixelFormat::Pfm),
        "png" => Ok(PixelFormat::Png),
        _ => Err(format!("unknown format {s:?}; expected pfm or png")),
    }
}

/// Configuration of `lfv gen`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub count: usize,
    pub split: Split,
    pub format: PixelFormat,
    pub template: SceneTemplate,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            count: 16,
            split: Split::Train,
            format: PixelFormat::Pfm,
            template: SceneTemplate::default(),
        }
    }
}

/// Parses a `.toml` or `.json` file; `None` gives the defaults.
pub fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<C> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => {
            toml::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
        }
        Some("json") => serde_json::from_str(&text)
            .map_err(|e| CliError::invalid(format!("{}: {e}", path.display()))),
        _ => Err(CliError::invalid(format!(
            "{}: expected a .toml or .json file",
            path.display()
        ))),
    }
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))
}

/// Runs one command and writes its manifest.
pub fn run(cli: Cli) -> Result<RunManifest> {
    let start = Instant::now();
    let (name, common, inputs, outputs) = match cli.command {
        Command::Gen {
            common,
            count,
            split,
        } => {
            create_out(&common.out)?;
            let outputs = commands::gen(&common, count, split)?;
            ("gen", common, vec![], outputs)
        }
        Command::Train {
            common,
            data,
            checkpoint_every,
        } => {
            create_out(&common.out)?;
            let outputs = commands::train(&common, &data, checkpoint_every)?;
            ("train", common, vec![data], outputs)
        }
        Command::Synth {
            common,
            checkpoint,
            input,
            format,
        } => {
            create_out(&common.out)?;
            let outputs = commands::synth(&common, &checkpoint, &input, format)?;
            ("synth", common, vec![checkpoint, input], outputs)
        }
        Command::Eval {
            common,
            pred,
            gt,
            label,
        } => {
            create_out(&common.out)?;
            let outputs = commands::eval(&common, &pred, &gt, label)?;
            ("eval", common, vec![pred, gt], outputs)
        }
        Command::Refocus {
            common,
            input,
            disparity,
        } => {
            create_out(&common.out)?;
            let outputs = commands::refocus(&common, &input, disparity)?;
            ("refocus", common, vec![input], outputs)
        }
        Command::Epi {
            common,
            input,
            row,
            v,
        } => {
            create_out(&common.out)?;
            let outputs = commands::epi(&common, &input, row, v)?;
            ("epi", common, vec![input], outputs)
        }
    };
    let manifest = RunManifest {
        command: name.into(),
        config: common.config.clone(),
        seed: common.seed,
        inputs,
        outputs,
        version: env!("CARGO_PKG_VERSION").into(),
        duration_secs: start.elapsed().as_secs_f64(),
    };
    manifest.write(&common.out)?;
    Ok(manifest)
}

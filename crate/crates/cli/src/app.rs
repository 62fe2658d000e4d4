//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_eval, cmd_noise, cmd_segment, cmd_synth, cmd_track, CliError};
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "mbtrack", version, about = "Multi-body feature tracking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Debug, Args, Default)]
pub struct Common {
    /// Config file with `key = value` lines
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// klt, l1klt or multibody
    #[arg(long, global = true)]
    pub method: Option<String>,
    /// Odd patch side length in pixels (7 or 13)
    #[arg(long, global = true)]
    pub patch: Option<String>,
    /// Pyramid levels
    #[arg(long, global = true)]
    pub levels: Option<String>,
    #[arg(long, global = true)]
    pub gamma: Option<String>,
    #[arg(long, global = true)]
    pub lambda: Option<String>,
    /// Gaussian noise variance (intensities in [0, 1])
    #[arg(long, global = true)]
    pub sigma2: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Tracking-error tolerance in pixels
    #[arg(long, global = true)]
    pub eps: Option<String>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track the initial features of a sequence directory
    Track {
        input: Option<PathBuf>,
        /// Initial features CSV (default: <input>/features.csv)
        #[arg(long)]
        features: Option<PathBuf>,
        /// Also write overlay PNGs
        #[arg(long)]
        overlays: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Count tracking errors against ground truth
    Eval {
        tracks: Vec<PathBuf>,
        /// Ground-truth tracks CSV
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Track with the multi-body method and cluster each frame pair
    Segment {
        input: Option<PathBuf>,
        /// Number of motions
        #[arg(long)]
        k: Option<String>,
        /// Also score the two-step baseline
        #[arg(long)]
        baseline: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Render a synthetic sequence
    Synth {
        /// two-body, checkerboard, single-body, pure-translation or static
        #[arg(long)]
        preset: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Add Gaussian noise to a sequence directory
    Noise {
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn apply(cfg: &mut RunConfig, key: &str, value: &Option<String>) -> Result<(), CliError> {
    if let Some(v) = value {
        cfg.set(key, v)
            .map_err(|msg| CliError::Usage(format!("--{}: {msg}", key.replace('_', "-"))))?;
    }
    Ok(())
}

/// Defaults, then the config file, then flags.
fn effective(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|source| {
            CliError::Io(mbtrack::io::IoError::Io {
                path: path.display().to_string(),
                source,
            })
        })?;
        cfg.merge_text(&text)?;
    }
    apply(&mut cfg, "method", &common.method)?;
    apply(&mut cfg, "patch", &common.patch)?;
    apply(&mut cfg, "levels", &common.levels)?;
    apply(&mut cfg, "gamma", &common.gamma)?;
    apply(&mut cfg, "lambda", &common.lambda)?;
    apply(&mut cfg, "sigma2", &common.sigma2)?;
    apply(&mut cfg, "seed", &common.seed)?;
    apply(&mut cfg, "eps", &common.eps)?;
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

/// Runs a parsed command and returns what should go to stdout.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Track {
            input,
            features,
            overlays,
            common,
        } => {
            let mut cfg = effective(&common)?;
            cfg.input = input.or(cfg.input);
            cfg.features = features.or(cfg.features);
            cfg.overlays |= overlays;
            cmd_track(&cfg)
        }
        Command::Eval {
            tracks,
            truth,
            common,
        } => {
            let mut cfg = effective(&common)?;
            cfg.truth = truth.or(cfg.truth);
            Ok(cmd_eval(&cfg, &tracks)?.0)
        }
        Command::Segment {
            input,
            k,
            baseline,
            common,
        } => {
            let mut cfg = effective(&common)?;
            cfg.input = input.or(cfg.input);
            apply(&mut cfg, "k", &k)?;
            cfg.baseline |= baseline;
            Ok(cmd_segment(&cfg)?.0)
        }
        Command::Synth { preset, common } => {
            let mut cfg = effective(&common)?;
            apply(&mut cfg, "preset", &preset)?;
            cmd_synth(&cfg)
        }
        Command::Noise { input, common } => {
            let mut cfg = effective(&common)?;
            cfg.input = input.or(cfg.input);
            cmd_noise(&cfg)
        }
    }
}

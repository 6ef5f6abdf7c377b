//! Command-line front end: corpus manifest in, scales, filterbanks,
//! features, GMMs, scores and DET points out.

pub mod commands;
pub mod config;
pub mod lock;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Parser, Subcommand};

use config::{CostPreset, RunConfig, ScaleArg, ShapeArg};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<warpfilt::Error> for CliError {
    fn from(e: warpfilt::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "warpfilt", version, about = "Data-driven filterbanks for speaker verification")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Replace existing outputs.
    #[arg(
        long,
        global = true,
        action = ArgAction::Set,
        num_args = 0..=1,
        default_value_t = false,
        default_missing_value = "true",
        value_name = "BOOL"
    )]
    pub overwrite: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a frequency warping scale from the speech in a corpus.
    LearnScale {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        scale: Option<ScaleArg>,
        #[arg(long, value_name = "F")]
        subsample_fraction: Option<f64>,
    },
    /// Place filters on a scale and learn their shapes.
    LearnFilterbank {
        /// Needed for every shape except `tri`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        scale_doc: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        shape: Option<ShapeArg>,
    },
    /// Write one cepstral feature file per utterance.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        filterbank: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Per-filter F-ratios of speech-frame log-energies, one column per filterbank.
    Fratio {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "filterbank", required = true)]
        filterbanks: Vec<PathBuf>,
        /// Also write the report as TSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a diagonal-covariance UBM on the speech frames of a corpus.
    TrainUbm {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of feature files from `extract`.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        components: Option<usize>,
    },
    /// MAP-adapt one model per speaker in the manifest.
    Enroll {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a trial list.
    Score {
        #[arg(long)]
        trials: PathBuf,
        /// Directory of speaker models from `enroll`.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// EER and minDCF of a score file, optionally fused with another.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_name = "PATH")]
        fuse_with: Option<PathBuf>,
        #[arg(long, value_enum)]
        cost_preset: Option<CostPreset>,
        /// DET points as TSV, probit-warped columns included.
        #[arg(long)]
        det_out: Option<PathBuf>,
    },
}

/// Options shared by every command after config and flags are merged.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub overwrite: bool,
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::LearnScale {
            scale,
            subsample_fraction,
            ..
        } => {
            if let Some(s) = scale {
                cfg.scale = *s;
            }
            if let Some(f) = subsample_fraction {
                cfg.subsample_fraction = *f;
            }
        }
        Command::LearnFilterbank { shape: Some(s), .. } => cfg.shape = *s,
        Command::TrainUbm {
            components: Some(c), ..
        } => cfg.ubm.n_components = *c,
        Command::Evaluate {
            cost_preset: Some(p), ..
        } => cfg.cost_preset = *p,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Context {
        cfg: resolve(&cli)?,
        overwrite: cli.overwrite,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Data(format!("cannot start worker threads: {e}")))?;
    pool.install(|| dispatch(&ctx, cli.command))
}

fn dispatch(ctx: &Context, command: Command) -> Result<(), CliError> {
    use commands::*;
    match command {
        Command::LearnScale { manifest, out, .. } => learn_scale(ctx, &manifest, &out),
        Command::LearnFilterbank {
            manifest,
            scale_doc,
            out,
            ..
        } => learn_filterbank(ctx, manifest.as_deref(), &scale_doc, &out),
        Command::Extract {
            manifest,
            filterbank,
            out_dir,
        } => extract(ctx, &manifest, &filterbank, &out_dir),
        Command::Fratio {
            manifest,
            filterbanks,
            out,
        } => fratio(ctx, &manifest, &filterbanks, out.as_deref()),
        Command::TrainUbm {
            manifest,
            features,
            out,
            ..
        } => train_ubm(ctx, &manifest, &features, &out),
        Command::Enroll {
            manifest,
            features,
            ubm,
            out_dir,
        } => enroll(ctx, &manifest, &features, &ubm, &out_dir),
        Command::Score {
            trials,
            models,
            features,
            ubm,
            out,
        } => score(ctx, &trials, &models, &features, &ubm, &out),
        Command::Evaluate {
            scores,
            fuse_with,
            det_out,
            ..
        } => evaluate(ctx, &scores, fuse_with.as_deref(), det_out.as_deref()),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("warpfilt: error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("warpfilt").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let c = dir.path().join("run.toml");
        std::fs::write(&c, "seed = 3\nscale = \"mel\"\nsubsample_fraction = 0.5\n").unwrap();
        let cfg_arg = c.to_str().unwrap();
        let cli = parse(&["--config", cfg_arg, "learn-scale", "--manifest", "m", "--out", "o"]);
        let cfg = resolve(&cli).unwrap();
        assert_eq!((cfg.seed, cfg.scale, cfg.subsample_fraction), (3, ScaleArg::Mel, 0.5));
        let cli = parse(&[
            "learn-scale", "--manifest", "m", "--out", "o", "--config", cfg_arg, "--seed", "9",
            "--scale", "speech", "--subsample-fraction", "0.25",
        ]);
        let cfg = resolve(&cli).unwrap();
        assert_eq!((cfg.seed, cfg.scale, cfg.subsample_fraction), (9, ScaleArg::Speech, 0.25));
    }

    #[test]
    fn overwrite_accepts_explicit_value() {
        assert!(!parse(&["evaluate", "--scores", "s"]).overwrite);
        assert!(parse(&["evaluate", "--scores", "s", "--overwrite"]).overwrite);
        assert!(!parse(&["--overwrite=false", "evaluate", "--scores", "s"]).overwrite);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        assert_eq!(main_with_args(["warpfilt", "evaluate"]), 1);
        assert_eq!(main_with_args(["warpfilt", "learn-filterbank", "--shape", "gauss"]), 1);
        assert_eq!(main_with_args(["warpfilt", "--help"]), 0);
        let cli = parse(&["learn-scale", "--manifest", "m", "--out", "o", "--subsample-fraction", "0"]);
        assert!(matches!(resolve(&cli), Err(CliError::Usage(_))));
    }
}

//! Command-line pipeline driver. Each subcommand runs one stage; stages
//! communicate only through artifacts under the output directory, so any
//! stage can be re-run or skipped when its outputs are already cached.

mod artifacts;
mod config;
mod error;
mod stages;
mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use routines_core::predictor::FeatureSet;

use crate::artifacts::Layout;
use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::stages::evaluate::Overrides;
use crate::stages::report::PlotFormat;
use crate::stages::Ctx;

/// Environment variable consulted for the output directory when neither
/// `--out` nor the config names one.
pub const OUT_ENV: &str = "ROUTINES_OUT";

#[derive(Parser)]
#[command(
    name = "routines",
    version,
    about = "Behavioral-routine clustering and relapse prediction pipeline"
)]
struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; overrides `[run] seed` from the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker thread cap. Changes runtime only, never results.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Output directory; overrides the config and ROUTINES_OUT.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Feature set for `evaluate`:
    /// all|baseline|clustering|gmm|pam|gmm+baseline|pam+baseline.
    #[arg(long, global = true, value_name = "SET")]
    feature_set: Option<String>,

    /// Disable subset personalization for `evaluate`.
    #[arg(long, global = true)]
    no_personalization: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort archive under the output directory.
    Synth,
    /// Read a cohort archive into the normalized dataset artifact.
    Ingest,
    /// Fit the PCA embedding and select a Gaussian mixture.
    FitGmm,
    /// Select a k-medoids clustering of the daily templates.
    FitPam,
    /// Score every patient-day with both fitted models.
    Score,
    /// Cluster summaries, hourly profiles, and near-relapse effect sizes.
    Analyze,
    /// Leave-one-patient-out relapse prediction with a random baseline.
    Evaluate,
    /// Aggregate everything into report tables, plots, and a manifest.
    Report {
        /// Plot output: `csv` (tables only) or `svg` (tables + plots).
        #[arg(long, default_value = "svg", value_name = "FORMAT")]
        plots: String,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("{}", err.record());
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    config.validate()?;

    let seed = cli.seed.or(config.run.seed).ok_or_else(|| CliError::Config {
        key: "run.seed".into(),
        message: "a master seed is mandatory; set `[run] seed` or pass --seed".into(),
    })?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.run.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .ok_or_else(|| CliError::Config {
            key: "run.out_dir".into(),
            message: format!("no output directory; set `[run] out_dir`, pass --out, or set {OUT_ENV}"),
        })?;
    if let Some(n) = cli.threads.or(config.run.threads) {
        init_threads(n)?;
    }

    let overrides = Overrides {
        feature_set: cli
            .feature_set
            .as_deref()
            .map(|s| {
                FeatureSet::parse(s).ok_or_else(|| CliError::Config {
                    key: "--feature-set".into(),
                    message: format!("unknown feature set {s:?}"),
                })
            })
            .transpose()?,
        no_personalization: cli.no_personalization,
    };

    let ctx = Ctx { config, layout: Layout::new(&out), seed };
    match cli.command {
        Command::Synth => stages::synth::run(&ctx),
        Command::Ingest => stages::ingest::run(&ctx),
        Command::FitGmm => stages::fit_gmm::run(&ctx),
        Command::FitPam => stages::fit_pam::run(&ctx),
        Command::Score => stages::score::run(&ctx),
        Command::Analyze => stages::analyze::run(&ctx),
        Command::Evaluate => stages::evaluate::run(&ctx, overrides),
        Command::Report { plots } => stages::report::run(&ctx, PlotFormat::parse(&plots)?),
    }
}

#[cfg(feature = "parallel")]
fn init_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Message(format!("thread pool setup failed: {e}")))
}

#[cfg(not(feature = "parallel"))]
fn init_threads(_n: usize) -> Result<()> {
    log::warn!("--threads has no effect without the `parallel` feature");
    Ok(())
}

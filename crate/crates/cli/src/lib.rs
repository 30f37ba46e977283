//! Batch front end: segment scans, measure choroid thickness and area,
//! compare measurement series, generate phantom corpora and augment images.

pub mod commands;
pub mod config;
pub mod inputs;
pub mod report;
pub mod svg;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::{BackendKind, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "choroid", version, about = "OCT choroid segmentation and measurement")]
pub struct Cli {
    /// JSON run configuration; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment every image in a directory.
    Segment(SegmentArgs),
    /// Measure thickness and area from probability maps or masks.
    Measure(MeasureArgs),
    /// Agreement statistics and plots for two measurement CSVs.
    Compare(CompareArgs),
    /// Write a synthetic corpus with analytic ground truth.
    Phantom(PhantomArgs),
    /// Apply seeded augmentations to every image in a directory.
    Augment(AugmentArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScanArgs {
    /// Fovea column applied to every image.
    #[arg(long)]
    pub fovea_col: Option<usize>,
    /// CSV with columns `file,fovea_col`; overrides --fovea-col per image.
    #[arg(long, value_name = "FILE")]
    pub fovea_csv: Option<PathBuf>,
    /// Lateral pixel spacing (μm).
    #[arg(long)]
    pub lateral_um: Option<f64>,
    /// Axial pixel spacing (μm).
    #[arg(long)]
    pub axial_um: Option<f64>,
    /// Binarization threshold.
    #[arg(long)]
    pub threshold: Option<f32>,
    /// Images processed concurrently.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    /// Directory of PNG/PGM B-scans with optional `<stem>.json` sidecars.
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Network graph JSON (cnn backend).
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// Weights blob (cnn backend).
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Map path template containing `{stem}`; relative to the input directory.
    #[arg(long, value_name = "PATTERN")]
    pub maps: Option<String>,
    /// Also measure each segmentation.
    #[arg(long)]
    pub measure: bool,
    #[command(flatten)]
    pub scan: ScanArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MeasureArgs {
    /// Directory of maps (`.pmap` or 16-bit PNG) or masks.
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Only files ending with this suffix are measured.
    #[arg(long, default_value = ".pmap")]
    pub suffix: String,
    /// Where `<stem>.json` sidecars live (default: the input directory).
    #[arg(long, value_name = "DIR")]
    pub meta_dir: Option<PathBuf>,
    #[command(flatten)]
    pub scan: ScanArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Measurements CSV of the method under test.
    pub a: PathBuf,
    /// Measurements CSV of the reference method.
    pub b: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Explicit pairing: CSV with columns `a,b` naming files of each series.
    #[arg(long, value_name = "FILE")]
    pub pairs: Option<PathBuf>,
    /// Map template for series A (`{stem}`); enables Dice and AUC.
    #[arg(long, value_name = "PATTERN", requires = "maps_b")]
    pub maps_a: Option<String>,
    /// Map template for series B, treated as ground truth.
    #[arg(long, value_name = "PATTERN", requires = "maps_a")]
    pub maps_b: Option<String>,
    #[arg(long)]
    pub threshold: Option<f32>,
    /// Skip SVG output.
    #[arg(long)]
    pub no_plots: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of phantoms.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat band of this thickness (μm) instead of random curved bands.
    #[arg(long, value_name = "UM", conflicts_with = "spec")]
    pub flat: Option<f64>,
    /// Phantom spec JSON used as a template; each phantom gets its own seed.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct AugmentArgs {
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
}

impl ScanArgs {
    fn apply(&self, c: &mut RunConfig) {
        c.fovea_col = self.fovea_col;
        c.fovea_csv = self.fovea_csv.clone();
        c.lateral_um = self.lateral_um;
        c.axial_um = self.axial_um;
        c.threshold = self.threshold;
        c.workers = self.workers;
    }
}

impl Command {
    /// Flags as a config layer.
    pub fn flags(&self) -> RunConfig {
        let mut c = RunConfig::default();
        match self {
            Command::Segment(a) => {
                a.scan.apply(&mut c);
                c.input = a.input.clone();
                c.out = a.out.clone();
                c.backend = a.backend;
                c.spec = a.spec.clone();
                c.weights = a.weights.clone();
                c.maps = a.maps.clone();
            }
            Command::Measure(a) => {
                a.scan.apply(&mut c);
                c.input = a.input.clone();
                c.out = a.out.clone();
            }
            Command::Compare(a) => {
                c.out = a.out.clone();
                c.threshold = a.threshold;
                if a.no_plots {
                    c.plots = Some(false);
                }
            }
            Command::Phantom(a) => {
                c.out = a.out.clone();
                c.seed = a.seed;
                c.workers = a.workers;
            }
            Command::Augment(a) => {
                c.input = a.input.clone();
                c.out = a.out.clone();
                c.seed = a.seed;
                c.workers = a.workers;
            }
        }
        c
    }
}

/// Outcome of a batch command. Per-item problems are warnings, not errors.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub processed: usize,
    pub failed: usize,
    pub warnings: usize,
}

pub fn run(cli: Cli) -> Result<RunSummary> {
    let file = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = file.overlay(cli.command.flags());
    match &cli.command {
        Command::Segment(a) => commands::segment::run(&cfg, a.measure),
        Command::Measure(a) => commands::measure::run(&cfg, &a.suffix, a.meta_dir.as_deref()),
        Command::Compare(a) => commands::compare::run(&cfg, a),
        Command::Phantom(a) => commands::phantom::run(&cfg, a),
        Command::Augment(_) => commands::augment::run(&cfg),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<RunSummary>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run(Cli::try_parse_from(args)?)
}

/// Process entry point: sets up logging, runs the command and maps the
/// outcome to an exit code. Bad arguments print usage and exit with 2.
pub fn main_with_args<I, T>(args: I) -> std::process::ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    match run(Cli::parse_from(args)) {
        Ok(s) => {
            log::info!("{} processed, {} failed, {} warnings", s.processed, s.failed, s.warnings);
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

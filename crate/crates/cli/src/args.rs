//! Command-line definitions and config-file layering.
//!
//! Every subcommand option is optional at parse time so that a value can
//! come from the command line, then the config file, then the built-in
//! default, in that order.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "srcodec",
    version,
    about = "Resolution-reduction codec benchmark for 16-bit mammograms",
    propagate_version = true
)]
pub struct Cli {
    /// Worker threads for batch stages [default: 4]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for splitting, bootstrap draws and backend sampling
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log progress at info level
    #[arg(short, long, global = true)]
    pub verbose: bool,
    /// TOML file supplying defaults for any option
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert DICOM files to normalised 16-bit PNGs and write a manifest
    Ingest(IngestArgs),
    /// Downscale a PNG corpus
    Compress(CompressArgs),
    /// Upscale a PNG corpus by chained 2x super-resolution
    Decompress(DecompressArgs),
    /// Score a reconstructed corpus against its reference with PSNR and FSIM
    Metrics(MetricsArgs),
    /// Label a manifest and split it by patient into train/validation/test
    Split(SplitArgs),
    /// Score classifier predictions with bootstrap intervals
    Score(ScoreArgs),
    /// Report corpus sizes and a ZIP baseline
    Sizes(SizesArgs),
    /// Merge metric, score and size outputs into Markdown and JSON tables
    Report(ReportArgs),
    /// Serve the bicubic reference backend on stdin/stdout
    #[command(hide = true)]
    StubBackend,
}

/// Fills unset fields from a lower-precedence source.
pub trait Merge {
    fn merge(self, lower: Self) -> Self;
}

macro_rules! mergeable {
    ($t:ty { $($f:ident),* $(,)? }) => {
        impl Merge for $t {
            fn merge(self, lower: Self) -> Self {
                Self { $($f: self.$f.or(lower.$f)),* }
            }
        }
    };
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestArgs {
    /// Directory of .dcm files
    #[arg(long)]
    pub dicom_dir: Option<PathBuf>,
    /// Output directory for PNGs
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Output side length [default: 1024]
    #[arg(long)]
    pub size: Option<u32>,
    /// Manifest path [default: <out-dir>.manifest.csv]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// CSV with image_id,birads,days_to_biopsy to fill manifest columns
    #[arg(long)]
    pub clinical: Option<PathBuf>,
}
mergeable!(IngestArgs { dicom_dir, out_dir, size, manifest, clinical });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressArgs {
    /// Input PNG directory
    #[arg(long = "in", value_name = "DIR")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    /// Output PNG directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Compressed side length, 512 or 256 [default: 512]
    #[arg(long)]
    pub size: Option<u32>,
    /// Expected input side length [default: 1024]
    #[arg(long)]
    pub source_size: Option<u32>,
}
mergeable!(CompressArgs { input, out, size, source_size });

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Bicubic,
    External,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecompressArgs {
    #[arg(long = "in", value_name = "DIR")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Output side length [default: 1024]
    #[arg(long)]
    pub target: Option<u32>,
    /// Super-resolution backend [default: bicubic]
    #[arg(long, value_enum)]
    pub backend: Option<BackendChoice>,
    /// Command line that starts an external backend process
    #[arg(long)]
    pub backend_cmd: Option<String>,
    /// Inference steps passed to the backend [default: 20]
    #[arg(long)]
    pub steps: Option<u32>,
    /// Guidance scale passed to the backend [default: 0.0]
    #[arg(long)]
    pub guidance: Option<f64>,
    /// Seconds to wait for each backend response [default: 300]
    #[arg(long)]
    pub timeout: Option<u64>,
}
mergeable!(DecompressArgs { input, out, target, backend, backend_cmd, steps, guidance, timeout });

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum PsnrRange {
    #[value(name = "8")]
    #[serde(rename = "8")]
    Eight,
    #[value(name = "16")]
    #[serde(rename = "16")]
    Sixteen,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsArgs {
    /// Reference PNG directory
    #[arg(long = "ref", value_name = "DIR")]
    #[serde(rename = "ref")]
    pub reference: Option<PathBuf>,
    /// Test PNG directory
    #[arg(long, value_name = "DIR")]
    pub test: Option<PathBuf>,
    /// Per-image CSV path; the aggregate goes to the same path with .json
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// PSNR dynamic range in bits, 8 (samples / 257) or 16 [default: 8]
    #[arg(long, value_enum)]
    pub psnr_bits: Option<PsnrRange>,
    /// Disable FSIM's downsampling to ~256 pixels
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub no_downsample: Option<bool>,
}
mergeable!(MetricsArgs { reference, test, out, psnr_bits, no_downsample });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitArgs {
    /// Input manifest CSV
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Directory for train/validation/test manifests and the summary
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Split ratios as A:B:C [default: 60:20:20]
    #[arg(long)]
    pub ratios: Option<String>,
    /// Keep exactly N images per class overall, balanced within each split
    #[arg(long, value_name = "N")]
    pub balance: Option<usize>,
}
mergeable!(SplitArgs { manifest, out_dir, ratios, balance });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreArgs {
    /// Prediction CSV (image_id,label,score)
    #[arg(long, value_name = "FILE")]
    pub predictions: Option<PathBuf>,
    /// Output JSON path
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Bootstrap as REPEATSxSAMPLE [default: 100x10]
    #[arg(long)]
    pub bootstrap: Option<String>,
    /// Positive call threshold on the score [default: 0.5]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Confidence level of the interval [default: 0.95]
    #[arg(long)]
    pub ci_level: Option<f64>,
    /// Row name in reports [default: predictions file stem]
    #[arg(long)]
    pub name: Option<String>,
}
mergeable!(ScoreArgs { predictions, out, bootstrap, threshold, ci_level, name });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizesArgs {
    /// Source corpus directory
    #[arg(long, value_name = "DIR")]
    pub source: Option<PathBuf>,
    /// Compressed corpus directories
    #[arg(long, value_name = "DIR", num_args = 1..)]
    pub compressed: Option<Vec<PathBuf>>,
    /// Also measure a deflate ZIP of the source
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub zip_baseline: Option<bool>,
    /// Output JSON path
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}
mergeable!(SizesArgs { source, compressed, zip_baseline, out });

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportArgs {
    /// Metric CSVs and metrics, score or sizes JSON files
    #[arg(long, value_name = "FILE", num_args = 1..)]
    pub inputs: Option<Vec<PathBuf>>,
    /// Markdown output; JSON goes to the same path with .json
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}
mergeable!(ReportArgs { inputs, out });

/// Layout of the optional TOML config file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub verbose: Option<bool>,
    pub ingest: IngestArgs,
    pub compress: CompressArgs,
    pub decompress: DecompressArgs,
    pub metrics: MetricsArgs,
    pub split: SplitArgs,
    pub score: ScoreArgs,
    pub sizes: SizesArgs,
    pub report: ReportArgs,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Options shared by every subcommand after layering.
#[derive(Debug, Clone, Copy)]
pub struct Globals {
    pub threads: usize,
    pub seed: Option<u64>,
}

impl Globals {
    pub fn seed_or_zero(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

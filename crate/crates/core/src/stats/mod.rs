//! Scoring of external classifier predictions, bootstrap intervals and
//! dataset size accounting.

pub mod archive;
pub mod report;

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use archive::ZipWriter;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("no predictions")]
    Empty,
    #[error("AUC needs both classes")]
    SingleClass,
    #[error("no predicted positives at threshold {0}")]
    NoPredictedPositives(f64),
    #[error("no actual positives; recall is undefined")]
    NoActualPositives,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("invalid bootstrap config: {0}")]
    InvalidConfig(String),
    #[error("need at least {need} predictions, have {have}")]
    TooFewRecords { have: usize, need: usize },
    #[error("only {valid} of {repeats} bootstrap draws gave a defined metric")]
    TooFewValidDraws { valid: usize, repeats: usize },
    #[error("prediction {image_id}: {reason}")]
    InvalidRecord { image_id: String, reason: String },
    #[error("predictions: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl StatsError {
    fn io(path: &Path, source: io::Error) -> Self {
        StatsError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True for errors that mean "metric undefined on this sample".
    pub fn is_undefined_metric(&self) -> bool {
        matches!(
            self,
            StatsError::SingleClass | StatsError::NoPredictedPositives(_) | StatsError::NoActualPositives
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub label: u8,
    pub score: f64,
}

impl PredictionRecord {
    pub fn new(image_id: impl Into<String>, label: u8, score: f64) -> Self {
        Self {
            image_id: image_id.into(),
            label,
            score,
        }
    }

    fn positive(&self) -> bool {
        self.label == 1
    }
}

fn validate(preds: &[PredictionRecord]) -> Result<(), StatsError> {
    let mut seen = HashSet::new();
    for p in preds {
        let invalid = |reason: &str| StatsError::InvalidRecord {
            image_id: p.image_id.clone(),
            reason: reason.to_string(),
        };
        if p.label > 1 {
            return Err(invalid("label must be 0 or 1"));
        }
        if !(0.0..=1.0).contains(&p.score) {
            return Err(invalid("score must lie in [0, 1]"));
        }
        if !seen.insert(p.image_id.as_str()) {
            return Err(invalid("duplicate image_id"));
        }
    }
    Ok(())
}

/// Reads and validates an `image_id,label,score` CSV.
pub fn read_predictions<R: io::Read>(input: R) -> Result<Vec<PredictionRecord>, StatsError> {
    let mut rdr = csv::Reader::from_reader(input);
    let preds = rdr.deserialize().collect::<Result<Vec<PredictionRecord>, _>>()?;
    validate(&preds)?;
    Ok(preds)
}

pub fn write_predictions<W: io::Write>(out: W, preds: &[PredictionRecord]) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_writer(out);
    for p in preds {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| StatsError::io(Path::new("<predictions>"), e))
}

/// Area under the ROC curve: the fraction of (positive, negative) pairs
/// ranked correctly, ties counting one half. Computed from midranks.
pub fn auc(preds: &[PredictionRecord]) -> Result<f64, StatsError> {
    let n_pos = preds.iter().filter(|p| p.positive()).count();
    let n_neg = preds.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(StatsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[a].score.total_cmp(&preds[b].score));
    // twice the rank sum of positives, kept integral
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && preds[order[j]].score == preds[order[i]].score {
            j += 1;
        }
        // ranks i+1..=j share the midrank (i+1+j)/2
        let midrank2 = (i + 1 + j) as u64;
        let pos_in_block = order[i..j].iter().filter(|&&k| preds[k].positive()).count() as u64;
        rank_sum2 += midrank2 * pos_in_block;
        i = j;
    }
    let np = n_pos as u64;
    let u2 = rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2 * np * n_neg as u64) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn at(preds: &[PredictionRecord], threshold: f64) -> Self {
        let mut c = Confusion { tp: 0, fp: 0, tn: 0, fn_: 0 };
        for p in preds {
            match (p.score >= threshold, p.positive()) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

fn check_threshold(preds: &[PredictionRecord], threshold: f64) -> Result<Confusion, StatsError> {
    if preds.is_empty() {
        return Err(StatsError::Empty);
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(StatsError::InvalidThreshold(threshold));
    }
    Ok(Confusion::at(preds, threshold))
}

/// Accuracy, precision and recall with "positive" meaning `score >= threshold`.
pub fn threshold_metrics(
    preds: &[PredictionRecord],
    threshold: f64,
) -> Result<ThresholdMetrics, StatsError> {
    let c = check_threshold(preds, threshold)?;
    Ok(ThresholdMetrics {
        threshold,
        confusion: c,
        accuracy: accuracy_of(&c),
        precision: precision_of(&c, threshold)?,
        recall: recall_of(&c)?,
    })
}

fn accuracy_of(c: &Confusion) -> f64 {
    (c.tp + c.tn) as f64 / c.total() as f64
}

fn precision_of(c: &Confusion, threshold: f64) -> Result<f64, StatsError> {
    if c.tp + c.fp == 0 {
        return Err(StatsError::NoPredictedPositives(threshold));
    }
    Ok(c.tp as f64 / (c.tp + c.fp) as f64)
}

fn recall_of(c: &Confusion) -> Result<f64, StatsError> {
    if c.tp + c.fn_ == 0 {
        return Err(StatsError::NoActualPositives);
    }
    Ok(c.tp as f64 / (c.tp + c.fn_) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auc,
    Accuracy,
    Precision,
    Recall,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Auc, Metric::Accuracy, Metric::Precision, Metric::Recall];

    pub fn title(self) -> &'static str {
        match self {
            Metric::Auc => "AUC",
            Metric::Accuracy => "Accuracy",
            Metric::Precision => "Precision",
            Metric::Recall => "Recall",
        }
    }

    pub fn evaluate(self, preds: &[PredictionRecord], threshold: f64) -> Result<f64, StatsError> {
        if self == Metric::Auc {
            return auc(preds);
        }
        let c = check_threshold(preds, threshold)?;
        match self {
            Metric::Accuracy => Ok(accuracy_of(&c)),
            Metric::Precision => precision_of(&c, threshold),
            Metric::Recall => recall_of(&c),
            Metric::Auc => unreachable!(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub sample_size: usize,
    pub repeats: usize,
    pub ci_level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            sample_size: 10,
            repeats: 100,
            ci_level: 0.95,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), StatsError> {
        if self.sample_size == 0 {
            return Err(StatsError::InvalidConfig("sample_size must be at least 1".into()));
        }
        if self.repeats < 2 {
            return Err(StatsError::InvalidConfig("repeats must be at least 2".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(StatsError::InvalidConfig("ci_level must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub metric: Metric,
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    /// Metric values of the valid draws, in draw order.
    pub draws: Vec<f64>,
    /// Draws on which the metric was undefined (for AUC, single-class draws).
    pub skipped: usize,
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile bootstrap: `repeats` samples of `sample_size` records drawn
/// with replacement. The draw sequence depends only on the seed.
pub fn bootstrap_ci(
    preds: &[PredictionRecord],
    metric: Metric,
    threshold: f64,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult, StatsError> {
    cfg.validate()?;
    if preds.len() < cfg.sample_size {
        return Err(StatsError::TooFewRecords {
            have: preds.len(),
            need: cfg.sample_size,
        });
    }
    let point = metric.evaluate(preds, threshold)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sample = Vec::with_capacity(cfg.sample_size);
    let mut draws = Vec::with_capacity(cfg.repeats);
    let mut skipped = 0;
    for _ in 0..cfg.repeats {
        sample.clear();
        sample.extend((0..cfg.sample_size).map(|_| preds[rng.random_range(0..preds.len())].clone()));
        match metric.evaluate(&sample, threshold) {
            Ok(v) => draws.push(v),
            Err(e) if e.is_undefined_metric() => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if draws.len() < 2 {
        return Err(StatsError::TooFewValidDraws {
            valid: draws.len(),
            repeats: cfg.repeats,
        });
    }
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    let alpha = (1.0 - cfg.ci_level) / 2.0;
    Ok(BootstrapResult {
        metric,
        point,
        lo: percentile_sorted(&sorted, alpha),
        hi: percentile_sorted(&sorted, 1.0 - alpha),
        draws,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirSize {
    pub path: PathBuf,
    pub files: usize,
    pub bytes: u64,
    pub ratio_vs_source: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub source: DirSize,
    pub compressed: Vec<DirSize>,
    /// Absent when the ZIP baseline was not requested.
    pub zip: Option<DirSize>,
}

/// Regular files under `dir` (symlinks are neither followed nor counted),
/// as (path relative to `dir` with '/' separators, size), sorted by path.
pub fn regular_files(dir: &Path) -> Result<Vec<(String, PathBuf, u64)>, StatsError> {
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).follow_links(false) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            StatsError::Io {
                path,
                source: e.into_io_error().unwrap_or_else(|| io::Error::other("walk failed")),
            }
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let meta = entry.metadata().map_err(|e| StatsError::io(entry.path(), e.into()))?;
        let rel = entry.path().strip_prefix(dir).unwrap_or(entry.path());
        let name = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        out.push((name, entry.path().to_path_buf(), meta.len()));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

fn ratio(bytes: u64, source: u64) -> f64 {
    if source == 0 {
        0.0
    } else {
        bytes as f64 / source as f64
    }
}

fn dir_size(dir: &Path, source_bytes: Option<u64>) -> Result<DirSize, StatsError> {
    if !dir.is_dir() {
        return Err(StatsError::io(dir, io::Error::new(io::ErrorKind::NotFound, "not a directory")));
    }
    let files = regular_files(dir)?;
    let bytes = files.iter().map(|f| f.2).sum();
    Ok(DirSize {
        path: dir.to_path_buf(),
        files: files.len(),
        bytes,
        ratio_vs_source: ratio(bytes, source_bytes.unwrap_or(bytes)),
    })
}

/// Size of a deflate ZIP archive of every regular file under `dir`,
/// written to a temporary file in sorted path order.
pub fn zip_size(dir: &Path) -> Result<u64, StatsError> {
    let files = regular_files(dir)?;
    let tmp = tempfile::NamedTempFile::new().map_err(|e| StatsError::io(&std::env::temp_dir(), e))?;
    let sink = BufWriter::new(tmp.reopen().map_err(|e| StatsError::io(tmp.path(), e))?);
    let mut zip = ZipWriter::new(sink);
    for (name, path, _) in &files {
        let data = fs::read(path).map_err(|e| StatsError::io(path, e))?;
        zip.add(name, &data).map_err(|e| StatsError::io(tmp.path(), e))?;
    }
    let (_, size) = zip.finish().map_err(|e| StatsError::io(tmp.path(), e))?;
    let on_disk = File::open(tmp.path())
        .and_then(|f| f.metadata())
        .map_err(|e| StatsError::io(tmp.path(), e))?
        .len();
    debug_assert_eq!(on_disk, size);
    Ok(on_disk)
}

/// Byte totals of `source_dir` and each of `compressed_dirs`, plus the ZIP
/// baseline of `source_dir` when `zip_baseline` is set.
pub fn size_report(
    source_dir: &Path,
    compressed_dirs: &[PathBuf],
    zip_baseline: bool,
) -> Result<SizeReport, StatsError> {
    let source = dir_size(source_dir, None)?;
    let compressed = compressed_dirs
        .iter()
        .map(|d| dir_size(d, Some(source.bytes)))
        .collect::<Result<Vec<_>, _>>()?;
    let zip = if zip_baseline {
        let bytes = zip_size(source_dir)?;
        Some(DirSize {
            path: source_dir.to_path_buf(),
            files: source.files,
            bytes,
            ratio_vs_source: ratio(bytes, source.bytes),
        })
    } else {
        None
    };
    Ok(SizeReport {
        source: DirSize {
            ratio_vs_source: if source.bytes == 0 { 0.0 } else { 1.0 },
            ..source
        },
        compressed,
        zip,
    })
}

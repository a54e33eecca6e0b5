//! Full-reference quality metrics and batch scoring.

mod fsim;
mod psnr;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fsim::{fsim, phase_congruency, FilterBank, FsimConfig, Map2, MIN_SIDE};
pub use psnr::psnr;

use crate::pngio::{load_png16, PngError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: reference {reference:?}, test {test:?}")]
    DimensionMismatch {
        reference: (u32, u32),
        test: (u32, u32),
    },
    #[error("max_value must be 255 or 65535, got {0}")]
    InvalidMaxValue(u16),
    #[error("invalid metrics config: {0}")]
    InvalidConfig(String),
    #[error("image too small for phase congruency: {width}x{height} (minimum 16x16 after downsampling)")]
    TooSmall { width: usize, height: usize },
    #[error("no matching image stems between the two directories")]
    EmptyIntersection,
    #[error(transparent)]
    Png(#[from] PngError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Serialises non-finite reals as the strings `"inf"`, `"-inf"` and `"nan"`
/// so they survive a JSON round trip.
pub mod float_or_inf {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub image_id: String,
    #[serde(with = "float_or_inf")]
    pub psnr_db: f64,
    pub fsim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub count: usize,
    /// Pairs with finite PSNR; only these enter the PSNR mean and variance.
    pub psnr_finite: usize,
    pub psnr_infinite: usize,
    #[serde(with = "float_or_inf")]
    pub psnr_mean: f64,
    pub psnr_variance: f64,
    pub psnr_std: f64,
    pub fsim_mean: f64,
    pub fsim_variance: f64,
    pub fsim_std: f64,
}

fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

impl AggregateReport {
    /// Population statistics over `results`. Infinite PSNR values are
    /// counted but excluded; if every PSNR is infinite the mean is infinite.
    pub fn from_results(results: &[MetricResult]) -> Self {
        let finite: Vec<f64> = results
            .iter()
            .map(|r| r.psnr_db)
            .filter(|v| v.is_finite())
            .collect();
        let psnr_infinite = results.len() - finite.len();
        let (mut psnr_mean, psnr_variance) = mean_and_variance(&finite);
        if finite.is_empty() && psnr_infinite > 0 {
            psnr_mean = f64::INFINITY;
        }
        let fsims: Vec<f64> = results.iter().map(|r| r.fsim).collect();
        let (fsim_mean, fsim_variance) = mean_and_variance(&fsims);
        Self {
            count: results.len(),
            psnr_finite: finite.len(),
            psnr_infinite,
            psnr_mean,
            psnr_variance,
            psnr_std: psnr_variance.sqrt(),
            fsim_mean,
            fsim_variance,
            fsim_std: fsim_variance.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub fsim: FsimConfig,
    /// 255 (8-bit scale) or 65535.
    pub psnr_max: u16,
    #[serde(skip)]
    pub threads: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            fsim: FsimConfig::default(),
            psnr_max: 255,
            threads: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub image_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub config: MetricsConfig,
    pub results: Vec<MetricResult>,
    pub aggregate: AggregateReport,
    /// Stems present only in the reference directory.
    pub unmatched_reference: Vec<String>,
    /// Stems present only in the test directory.
    pub unmatched_test: Vec<String>,
    pub failures: Vec<PairFailure>,
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>, io::Error> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            if let Some(stem) = path.file_stem() {
                out.insert(stem.to_string_lossy().into_owned(), path);
            }
        }
    }
    Ok(out)
}

/// Scores one pair of images.
pub fn score_pair(
    image_id: &str,
    reference: &crate::Image16,
    test: &crate::Image16,
    cfg: &MetricsConfig,
) -> Result<MetricResult, MetricsError> {
    Ok(MetricResult {
        image_id: image_id.to_string(),
        psnr_db: psnr(reference, test, cfg.psnr_max)?,
        fsim: fsim(reference, test, &cfg.fsim)?,
    })
}

/// Scores every PNG in `test_dir` against the same-stem PNG in `ref_dir`.
/// Results are sorted by image id.
pub fn batch_metrics(
    ref_dir: &Path,
    test_dir: &Path,
    cfg: &MetricsConfig,
) -> Result<BatchMetrics, MetricsError> {
    cfg.fsim.validate()?;
    if cfg.psnr_max != 255 && cfg.psnr_max != 65535 {
        return Err(MetricsError::InvalidMaxValue(cfg.psnr_max));
    }
    let refs = png_stems(ref_dir)?;
    let tests = png_stems(test_dir)?;
    let unmatched_reference: Vec<String> =
        refs.keys().filter(|k| !tests.contains_key(*k)).cloned().collect();
    let unmatched_test: Vec<String> =
        tests.keys().filter(|k| !refs.contains_key(*k)).cloned().collect();
    for orphan in &unmatched_test {
        log::warn!("{orphan}: no reference image, not scored");
    }
    for orphan in &unmatched_reference {
        log::warn!("{orphan}: no test image, not scored");
    }
    let pairs: Vec<(&String, &PathBuf, &PathBuf)> = refs
        .iter()
        .filter_map(|(k, r)| tests.get(k).map(|t| (k, r, t)))
        .collect();
    if pairs.is_empty() {
        return Err(MetricsError::EmptyIntersection);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| MetricsError::InvalidConfig(format!("thread pool: {e}")))?;
    let scored: Vec<Result<MetricResult, MetricsError>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|(id, r, t)| {
                let a = load_png16(r)?;
                let b = load_png16(t)?;
                score_pair(id, &a, &b, cfg)
            })
            .collect()
    });

    let mut results = Vec::with_capacity(scored.len());
    let mut failures = Vec::new();
    for ((id, _, _), s) in pairs.iter().zip(scored) {
        match s {
            Ok(r) => results.push(r),
            Err(e) => {
                log::warn!("{id}: {e}");
                failures.push(PairFailure {
                    image_id: (*id).clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let aggregate = AggregateReport::from_results(&results);
    Ok(BatchMetrics {
        config: cfg.clone(),
        results,
        aggregate,
        unmatched_reference,
        unmatched_test,
        failures,
    })
}

/// Writes `image_id,psnr_db,fsim` rows; infinite PSNR is written as `inf`.
pub fn write_metrics_csv<W: io::Write>(out: W, results: &[MetricResult]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["image_id", "psnr_db", "fsim"])?;
    for r in results {
        w.write_record([r.image_id.clone(), r.psnr_db.to_string(), r.fsim.to_string()])?;
    }
    w.flush()
}

/// Reads rows written by [`write_metrics_csv`].
pub fn read_metrics_csv<R: io::Read>(input: R) -> Result<Vec<MetricResult>, MetricsError> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(input).records() {
        let row = row.map_err(|e| MetricsError::Io(io::Error::other(e)))?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        let number = |i: usize| {
            field(i).trim().parse::<f64>().map_err(|_| {
                MetricsError::Io(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("bad number {:?} in metrics row {:?}", field(i), field(0)),
                ))
            })
        };
        out.push(MetricResult {
            image_id: field(0).to_string(),
            psnr_db: number(1)?,
            fsim: number(2)?,
        });
    }
    Ok(out)
}

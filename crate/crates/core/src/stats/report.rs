//! Report bundles and their Markdown rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    bootstrap_ci, BootstrapConfig, Metric, PredictionRecord, SizeReport, StatsError,
};
use crate::metrics::{float_or_inf, AggregateReport, FsimConfig};

/// Below this many resampled records in total (repeats × sample size) the
/// interval is flagged as coarse.
const COARSE_BOOTSTRAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub point: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub valid_draws: usize,
    pub skipped_draws: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub name: String,
    pub records: usize,
    pub positives: usize,
    pub negatives: usize,
    pub threshold: f64,
    pub bootstrap: BootstrapConfig,
    pub resampling: String,
    pub metrics: Vec<MetricSummary>,
    pub notes: Vec<String>,
}

/// Point estimates and bootstrap intervals for every metric. A metric that
/// cannot be computed is reported with its error instead of failing the
/// whole report.
pub fn score_predictions(
    name: &str,
    preds: &[PredictionRecord],
    threshold: f64,
    cfg: &BootstrapConfig,
) -> Result<ScoreReport, StatsError> {
    cfg.validate()?;
    if preds.is_empty() {
        return Err(StatsError::Empty);
    }
    let positives = preds.iter().filter(|p| p.label == 1).count();
    let metrics = Metric::ALL
        .iter()
        .map(|&metric| match bootstrap_ci(preds, metric, threshold, cfg) {
            Ok(r) => MetricSummary {
                metric,
                point: Some(r.point),
                lo: Some(r.lo),
                hi: Some(r.hi),
                valid_draws: r.draws.len(),
                skipped_draws: r.skipped,
                error: None,
            },
            Err(e) => MetricSummary {
                metric,
                point: metric.evaluate(preds, threshold).ok(),
                lo: None,
                hi: None,
                valid_draws: 0,
                skipped_draws: 0,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let mut notes = Vec::new();
    if cfg.repeats * cfg.sample_size < COARSE_BOOTSTRAP {
        notes.push(format!(
            "{} draws of {} records give coarse intervals; raise --bootstrap for tighter ones",
            cfg.repeats, cfg.sample_size
        ));
    }
    Ok(ScoreReport {
        name: name.to_string(),
        records: preds.len(),
        positives,
        negatives: preds.len() - positives,
        threshold,
        bootstrap: cfg.clone(),
        resampling: "with replacement".into(),
        metrics,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub name: String,
    pub aggregate: AggregateReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub fsim_config: FsimConfig,
    pub psnr_max: u16,
    pub quality: Vec<QualityRow>,
    pub sizes: Vec<SizeReport>,
    pub scores: Vec<ScoreReport>,
}

fn mb(bytes: u64) -> String {
    format!("{:.2}", bytes as f64 / 1_000_000.0)
}

fn ci_cell(m: &MetricSummary) -> String {
    match (m.point, m.lo, m.hi) {
        (Some(p), Some(lo), Some(hi)) => format!("{p:.3} ({lo:.3} – {hi:.3})"),
        (Some(p), _, _) => format!("{p:.3} (n/a)"),
        _ => "n/a".into(),
    }
}

#[derive(Serialize)]
struct Inf(#[serde(with = "float_or_inf")] f64);

fn db(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2}")
    } else {
        serde_json::to_value(Inf(v))
            .ok()
            .and_then(|j| j.as_str().map(str::to_string))
            .unwrap_or_else(|| v.to_string())
    }
}

impl ReportBundle {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        if !self.quality.is_empty() {
            s.push_str("## Reconstruction quality\n\n");
            s.push_str("| Dataset | Images | FSIM mean | FSIM variance | PSNR mean (dB) | PSNR variance | PSNR std | Identical |\n");
            s.push_str("|---|---:|---:|---:|---:|---:|---:|---:|\n");
            for q in &self.quality {
                let a = &q.aggregate;
                let _ = writeln!(
                    s,
                    "| {} | {} | {:.4} | {:.6} | {} | {:.4} | {:.4} | {} |",
                    q.name, a.count, a.fsim_mean, a.fsim_variance, db(a.psnr_mean),
                    a.psnr_variance, a.psnr_std, a.psnr_infinite
                );
            }
            let c = &self.fsim_config;
            let _ = writeln!(
                s,
                "\nFSIM: {} scales, {} orientations, min wavelength {}, mult {}, sigma_on_f {}, t1 {}, t2 {}, downsample {}. PSNR peak {}{}.\n",
                c.scales, c.orientations, c.min_wavelength, c.wavelength_mult, c.sigma_on_f,
                c.t1, c.t2, if c.downsample { "on" } else { "off" }, self.psnr_max,
                if self.psnr_max == 255 { " (samples / 257)" } else { "" }
            );
        }
        for sizes in &self.sizes {
            s.push_str("## Compression performance\n\n");
            s.push_str("| Dataset | Files | Size (MB) | Bytes | Ratio vs source |\n");
            s.push_str("|---|---:|---:|---:|---:|\n");
            let mut row = |label: String, d: &super::DirSize| {
                let _ = writeln!(
                    s,
                    "| {label} | {} | {} | {} | {:.4} |",
                    d.files, mb(d.bytes), d.bytes, d.ratio_vs_source
                );
            };
            row(format!("Source ({})", sizes.source.path.display()), &sizes.source);
            for c in &sizes.compressed {
                row(c.path.display().to_string(), c);
            }
            if let Some(z) = &sizes.zip {
                row("ZIP of source (deflate)".into(), z);
            }
            s.push('\n');
        }
        if !self.scores.is_empty() {
            s.push_str("## Classification\n\n");
            s.push_str("| Dataset | Records | AUC | Accuracy | Precision | Recall |\n");
            s.push_str("|---|---:|---:|---:|---:|---:|\n");
            for r in &self.scores {
                let cells: Vec<String> = Metric::ALL
                    .iter()
                    .map(|m| {
                        r.metrics
                            .iter()
                            .find(|x| x.metric == *m)
                            .map(ci_cell)
                            .unwrap_or_else(|| "n/a".into())
                    })
                    .collect();
                let _ = writeln!(s, "| {} | {} | {} |", r.name, r.records, cells.join(" | "));
            }
            s.push('\n');
            for r in &self.scores {
                let b = &r.bootstrap;
                let _ = writeln!(
                    s,
                    "{}: threshold {}, {} bootstrap draws of {} ({}), {:.0}% percentile interval, seed {}.",
                    r.name, r.threshold, b.repeats, b.sample_size, r.resampling,
                    b.ci_level * 100.0, b.seed
                );
                for m in &r.metrics {
                    if m.skipped_draws > 0 {
                        let _ = writeln!(s, "{}: {} {} draws skipped as undefined.", r.name, m.skipped_draws, m.metric.title());
                    }
                    if let Some(e) = &m.error {
                        let _ = writeln!(s, "{}: {} interval unavailable: {e}.", r.name, m.metric.title());
                    }
                }
                for n in &r.notes {
                    let _ = writeln!(s, "{}: {n}.", r.name);
                }
            }
        }
        s
    }
}

//! Subcommand implementations.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use srcodec::codec::{serve_stub_backend, BatchFailure};
use srcodec::dataset::{
    self, apply_clinical_row, balance_splits, read_clinical, read_manifest, split_patients,
    summarize, write_manifest, DatasetError, DEFAULT_RATIOS,
};
use srcodec::metrics::{read_metrics_csv, write_metrics_csv, BatchMetrics};
use srcodec::stats::report::{score_predictions, QualityRow, ReportBundle, ScoreReport};
use srcodec::stats::{read_predictions, SizeReport, DEFAULT_THRESHOLD};
use srcodec::{
    batch_metrics, read_dicom_file, resize_bicubic, run_batch, save_png16, size_report, to_gray16,
    AggregateReport, BackendSpec, BatchOp, BootstrapConfig, CodecConfig, FsimConfig,
    MetricsConfig, MetricsError, ResizeSpec, StudyRecord,
};

use crate::args::{
    BackendChoice, CompressArgs, DecompressArgs, Globals, IngestArgs, MetricsArgs, PsnrRange,
    ReportArgs, ScoreArgs, SizesArgs, SplitArgs,
};

pub const EXIT_SETUP: u8 = 1;
pub const EXIT_NO_WORK: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

const TOOL: &str = "srcodec";

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Setup(anyhow::Error),
    NoWork(String),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Setup(_) => EXIT_SETUP,
            Failure::NoWork(_) => EXIT_NO_WORK,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Setup(e) => write!(f, "{e:#}"),
            Failure::NoWork(m) => write!(f, "nothing to do: {m}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Setup(e)
    }
}

type Outcome = Result<(), Failure>;

fn required<T>(v: Option<T>, flag: &str) -> Result<T, Failure> {
    v.ok_or_else(|| Failure::usage(format!("{flag} is required")))
}

/// Self-describing JSON envelope for every artifact the tool writes.
#[derive(Serialize)]
struct Artifact<'a, C, R> {
    kind: &'a str,
    tool: &'a str,
    version: &'a str,
    config: C,
    result: R,
}

#[derive(Deserialize)]
struct AnyArtifact {
    kind: String,
    result: serde_json::Value,
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_artifact<C: Serialize, R: Serialize>(
    path: &Path,
    kind: &str,
    config: C,
    result: R,
) -> anyhow::Result<()> {
    let artifact = Artifact {
        kind,
        tool: TOOL,
        version: env!("CARGO_PKG_VERSION"),
        config,
        result,
    };
    let mut text = serde_json::to_string_pretty(&artifact)?;
    text.push('\n');
    write_text(path, &text)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// `out/dir` becomes `out/dir.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    match path.file_name() {
        Some(name) => path.with_file_name(format!("{}.{suffix}", name.to_string_lossy())),
        None => path.join(suffix),
    }
}

/// Regular files in `dir` with extension `ext` (any case), sorted.
fn list_files(dir: &Path, ext: &str) -> anyhow::Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.with_context(|| format!("reading {}", dir.display()))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn pool(threads: usize) -> anyhow::Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building thread pool")
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Keeps `[A-Za-z0-9._-]` and maps anything else to `_`.
fn sanitize_id(raw: &str) -> Option<String> {
    let id: String = raw
        .trim()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect();
    let usable = !id.is_empty() && id.chars().any(|c| c != '.');
    usable.then_some(id)
}

fn ingest_id(image_id: &str, path: &Path) -> String {
    sanitize_id(image_id)
        .or_else(|| sanitize_id(&stem(path)))
        .unwrap_or_else(|| "image".into())
}

#[derive(Serialize)]
struct IngestResult {
    files_found: usize,
    images_processed: usize,
    duplicates: usize,
    clinical_matched: usize,
    failures: Vec<BatchFailure>,
}

pub fn ingest(a: IngestArgs, g: Globals) -> Outcome {
    let dicom_dir = required(a.dicom_dir, "--dicom-dir")?;
    let out_dir = required(a.out_dir, "--out-dir")?;
    let size = a.size.unwrap_or(1024);
    if size == 0 {
        return Err(Failure::usage("--size must be positive"));
    }
    let manifest_path = a.manifest.unwrap_or_else(|| sibling(&out_dir, "manifest.csv"));
    let clinical = match &a.clinical {
        Some(p) => {
            let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            read_clinical(io::BufReader::new(f)).with_context(|| format!("reading {}", p.display()))?
        }
        None => BTreeMap::new(),
    };
    let files = list_files(&dicom_dir, "dcm")?;
    if files.is_empty() {
        return Err(Failure::NoWork(format!("no .dcm files in {}", dicom_dir.display())));
    }
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let pool = pool(g.threads)?;

    let ids: Vec<Result<String, String>> = pool.install(|| {
        files
            .par_iter()
            .map(|p| read_dicom_file(p).map(|d| ingest_id(&d.image_id, p)).map_err(|e| e.to_string()))
            .collect()
    });
    let mut seen = HashSet::new();
    let mut duplicates = 0;
    let jobs: Vec<Result<String, String>> = ids
        .into_iter()
        .map(|id| match id {
            Ok(id) if !seen.insert(id.clone()) => {
                duplicates += 1;
                Err(format!("duplicate image id {id}"))
            }
            other => other,
        })
        .collect();

    let spec = ResizeSpec::square(size);
    let outcomes: Vec<Result<StudyRecord, String>> = pool.install(|| {
        files
            .par_iter()
            .zip(jobs.par_iter())
            .map(|(path, job)| {
                let id = job.clone()?;
                let d = read_dicom_file(path).map_err(|e| e.to_string())?;
                let img = resize_bicubic(&to_gray16(&d), &spec);
                let png = out_dir.join(format!("{id}.png"));
                save_png16(&img, &png).map_err(|e| e.to_string())?;
                Ok(StudyRecord {
                    patient_id: d.patient_id.trim().to_string(),
                    image_id: id,
                    path: png,
                    birads: None,
                    days_to_biopsy: None,
                    label: None,
                })
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (path, outcome) in files.iter().zip(outcomes) {
        match outcome {
            Ok(r) => records.push(r),
            Err(error) => {
                log::warn!("{}: {error}", path.display());
                failures.push(BatchFailure { image_id: stem(path), error });
            }
        }
    }
    let mut clinical_matched = 0;
    for r in &mut records {
        if let Some(row) = clinical.get(&r.image_id) {
            apply_clinical_row(r, row);
            clinical_matched += 1;
        }
    }
    if !clinical.is_empty() && clinical_matched < clinical.len() {
        log::warn!("{} clinical rows matched no ingested image", clinical.len() - clinical_matched);
    }
    records.sort_by(|x, y| x.image_id.cmp(&y.image_id));
    let mut buf = Vec::new();
    write_manifest(&mut buf, &records).context("serialising manifest")?;
    write_text(&manifest_path, std::str::from_utf8(&buf).context("manifest encoding")?)?;

    let processed = records.len();
    write_artifact(
        &sibling(&out_dir, "summary.json"),
        "ingest",
        json!({
            "dicom_dir": dicom_dir,
            "out_dir": out_dir,
            "manifest": manifest_path,
            "clinical": a.clinical,
            "size": size,
        }),
        IngestResult {
            files_found: files.len(),
            images_processed: processed,
            duplicates,
            clinical_matched,
            failures,
        },
    )?;
    if processed == 0 {
        return Err(Failure::NoWork("no DICOM file could be converted".into()));
    }
    Ok(())
}

fn finish_batch(
    out: &Path,
    kind: &str,
    config: serde_json::Value,
    summary: srcodec::BatchSummary,
) -> Outcome {
    log::info!(
        "{kind}: {} images in {:.2}s, {} failed",
        summary.images_processed,
        summary.wall_time,
        summary.failures.len()
    );
    let processed = summary.images_processed;
    write_artifact(&sibling(out, "summary.json"), kind, config, summary)?;
    if processed == 0 {
        return Err(Failure::NoWork("every image failed".into()));
    }
    Ok(())
}

pub fn compress(a: CompressArgs, g: Globals) -> Outcome {
    let input = required(a.input, "--in")?;
    let out = required(a.out, "--out")?;
    let size = a.size.unwrap_or(512);
    let source_size = a.source_size.unwrap_or(1024);
    let cfg = CodecConfig::new(source_size, size, g.threads).map_err(|e| Failure::usage(e.to_string()))?;
    let inputs = list_files(&input, "png")?;
    if inputs.is_empty() {
        return Err(Failure::NoWork(format!("no .png files in {}", input.display())));
    }
    let spec = BackendSpec::builtin();
    let summary = run_batch(&inputs, &out, BatchOp::Compress, &cfg, &spec)
        .with_context(|| format!("compressing into {}", out.display()))?;
    let config = json!({
        "in": input,
        "out": out,
        "size": size,
        "source_size": source_size,
        "resize": ResizeSpec::square(size),
    });
    finish_batch(&out, "compress", config, summary)
}

pub fn decompress(a: DecompressArgs, g: Globals) -> Outcome {
    let input = required(a.input, "--in")?;
    let out = required(a.out, "--out")?;
    let target = a.target.unwrap_or(1024);
    let mut spec = match a.backend.unwrap_or(BackendChoice::Bicubic) {
        BackendChoice::Bicubic => BackendSpec::builtin(),
        BackendChoice::External => {
            let cmd = a
                .backend_cmd
                .ok_or_else(|| Failure::usage("--backend external needs --backend-cmd"))?;
            let words = shlex::split(&cmd)
                .filter(|w| !w.is_empty())
                .ok_or_else(|| Failure::usage(format!("cannot parse --backend-cmd {cmd:?}")))?;
            BackendSpec::external(words)
        }
    };
    if let Some(steps) = a.steps {
        spec.steps = steps;
    }
    if let Some(guidance) = a.guidance {
        spec.guidance_scale = guidance;
    }
    if let Some(timeout) = a.timeout {
        spec.timeout_secs = timeout;
    }
    spec.seed = g.seed;
    spec.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let cfg = CodecConfig::new(target, target, g.threads).map_err(|e| Failure::usage(e.to_string()))?;
    let inputs = list_files(&input, "png")?;
    if inputs.is_empty() {
        return Err(Failure::NoWork(format!("no .png files in {}", input.display())));
    }
    let summary = run_batch(&inputs, &out, BatchOp::Decompress { target_size: target }, &cfg, &spec)
        .with_context(|| format!("decompressing into {}", out.display()))?;
    let config = json!({
        "in": input,
        "out": out,
        "target": target,
        "backend": spec,
    });
    finish_batch(&out, "decompress", config, summary)
}

pub fn metrics(a: MetricsArgs, g: Globals) -> Outcome {
    let reference = required(a.reference, "--ref")?;
    let test = required(a.test, "--test")?;
    let out = required(a.out, "--out")?;
    let json_out = out.with_extension("json");
    if json_out == out {
        return Err(Failure::usage("--out names the CSV; use a .csv path"));
    }
    let cfg = MetricsConfig {
        fsim: FsimConfig {
            downsample: !a.no_downsample.unwrap_or(false),
            ..FsimConfig::default()
        },
        psnr_max: match a.psnr_bits.unwrap_or(PsnrRange::Eight) {
            PsnrRange::Eight => 255,
            PsnrRange::Sixteen => 65535,
        },
        threads: g.threads,
    };
    let batch = match batch_metrics(&reference, &test, &cfg) {
        Ok(b) => b,
        Err(MetricsError::EmptyIntersection) => {
            return Err(Failure::NoWork(format!(
                "no image stems shared by {} and {}",
                reference.display(),
                test.display()
            )))
        }
        Err(e) => return Err(anyhow!(e).context("scoring images").into()),
    };
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &batch.results).context("serialising metrics")?;
    write_text(&out, std::str::from_utf8(&csv).context("metrics encoding")?)?;
    let scored = batch.results.len();
    log::info!(
        "{scored} pairs: FSIM mean {:.4}, PSNR mean {:.2} dB",
        batch.aggregate.fsim_mean,
        batch.aggregate.psnr_mean
    );
    write_artifact(
        &json_out,
        "metrics",
        json!({ "ref": reference, "test": test, "out": out }),
        batch,
    )?;
    if scored == 0 {
        return Err(Failure::NoWork("no pair could be scored".into()));
    }
    Ok(())
}

fn parse_ratios(text: &str) -> Result<[f64; 3], Failure> {
    let bad = || Failure::usage(format!("--ratios expects three non-negative numbers like 60:20:20, got {text:?}"));
    let parts: Vec<f64> = text
        .split([':', ','])
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let [a, b, c]: [f64; 3] = parts.try_into().map_err(|_| bad())?;
    let sum = a + b + c;
    if [a, b, c].iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(sum > 0.0) {
        return Err(bad());
    }
    Ok([a / sum, b / sum, c / sum])
}

pub fn split(a: SplitArgs, g: Globals) -> Outcome {
    let manifest = required(a.manifest, "--manifest")?;
    let out_dir = required(a.out_dir, "--out-dir")?;
    let ratios = match &a.ratios {
        Some(r) => parse_ratios(r)?,
        None => DEFAULT_RATIOS,
    };
    let seed = g.seed_or_zero();
    let file = fs::File::open(&manifest).with_context(|| format!("opening {}", manifest.display()))?;
    let mut records = read_manifest(io::BufReader::new(file))
        .with_context(|| format!("reading {}", manifest.display()))?;
    let input_records = records.len();
    for r in &mut records {
        if r.label.is_none() {
            r.label = dataset::derive_label(r).label();
        }
    }
    records.retain(|r| r.label.is_some());
    let excluded = input_records - records.len();
    let assignment = match split_patients(&records, ratios, seed) {
        Ok(s) => s,
        Err(DatasetError::EmptyInput) => {
            return Err(Failure::NoWork(format!("no labelable records in {}", manifest.display())))
        }
        Err(e) => return Err(anyhow!(e).context("splitting").into()),
    };
    if let Some(n) = a.balance {
        records = balance_splits(&records, &assignment, n, seed).context("balancing classes")?;
    }
    records.sort_by(|x, y| x.image_id.cmp(&y.image_id));
    for split in srcodec::Split::ALL {
        let part: Vec<StudyRecord> = records
            .iter()
            .filter(|r| assignment.split_of(&r.image_id) == Some(split))
            .cloned()
            .collect();
        let mut buf = Vec::new();
        write_manifest(&mut buf, &part).context("serialising manifest")?;
        write_text(
            &out_dir.join(format!("{}.csv", split.name())),
            std::str::from_utf8(&buf).context("manifest encoding")?,
        )?;
    }
    let summary = summarize(&records, &assignment, a.balance);
    write_artifact(
        &out_dir.join("split_summary.json"),
        "split",
        json!({ "manifest": manifest, "ratios": ratios, "seed": seed, "balance": a.balance }),
        json!({ "input_records": input_records, "excluded": excluded, "summary": summary }),
    )?;
    Ok(())
}

fn parse_bootstrap(text: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::usage(format!("--bootstrap expects REPEATSxSAMPLE like 100x10, got {text:?}"));
    let (r, s) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, s.trim().parse().map_err(|_| bad())?))
}

pub fn score(a: ScoreArgs, g: Globals) -> Outcome {
    let predictions = required(a.predictions, "--predictions")?;
    let out = required(a.out, "--out")?;
    let defaults = BootstrapConfig::default();
    let (repeats, sample_size) = match &a.bootstrap {
        Some(b) => parse_bootstrap(b)?,
        None => (defaults.repeats, defaults.sample_size),
    };
    let cfg = BootstrapConfig {
        sample_size,
        repeats,
        ci_level: a.ci_level.unwrap_or(defaults.ci_level),
        seed: g.seed_or_zero(),
    };
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let threshold = a.threshold.unwrap_or(DEFAULT_THRESHOLD);
    let name = a.name.unwrap_or_else(|| stem(&predictions));
    let file = fs::File::open(&predictions).with_context(|| format!("opening {}", predictions.display()))?;
    let preds = read_predictions(io::BufReader::new(file))
        .with_context(|| format!("reading {}", predictions.display()))?;
    if preds.is_empty() {
        return Err(Failure::NoWork(format!("no predictions in {}", predictions.display())));
    }
    let report = match score_predictions(&name, &preds, threshold, &cfg) {
        Ok(r) => r,
        Err(e @ srcodec::StatsError::InvalidThreshold(..)) => return Err(Failure::usage(e.to_string())),
        Err(e) => return Err(anyhow!(e).context("scoring predictions").into()),
    };
    write_artifact(
        &out,
        "score",
        json!({ "predictions": predictions, "threshold": threshold, "bootstrap": cfg }),
        report,
    )?;
    Ok(())
}

pub fn sizes(a: SizesArgs) -> Outcome {
    let source = required(a.source, "--source")?;
    let out = required(a.out, "--out")?;
    let compressed = a.compressed.unwrap_or_default();
    let zip_baseline = a.zip_baseline.unwrap_or(false);
    let report = size_report(&source, &compressed, zip_baseline).context("measuring corpus sizes")?;
    write_artifact(
        &out,
        "sizes",
        json!({ "source": source, "compressed": compressed, "zip_baseline": zip_baseline }),
        report,
    )?;
    Ok(())
}

fn artifact_name(path: &Path) -> String {
    stem(path)
}

pub fn report(a: ReportArgs) -> Outcome {
    let inputs = required(a.inputs, "--inputs")?;
    let out = required(a.out, "--out")?;
    let json_out = out.with_extension("json");
    if json_out == out {
        return Err(Failure::usage("--out names the Markdown file; use a .md path"));
    }
    if inputs.is_empty() {
        return Err(Failure::NoWork("no inputs".into()));
    }
    let mut quality = Vec::new();
    let mut sizes: Vec<SizeReport> = Vec::new();
    let mut scores: Vec<ScoreReport> = Vec::new();
    let mut fsim_config: Option<(FsimConfig, u16)> = None;
    for path in &inputs {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            let results = read_metrics_csv(text.as_bytes())
                .with_context(|| format!("parsing metrics CSV {}", path.display()))?;
            quality.push(QualityRow {
                name: artifact_name(path),
                aggregate: AggregateReport::from_results(&results),
            });
            continue;
        }
        let artifact: AnyArtifact = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        let body = artifact.result;
        match artifact.kind.as_str() {
            "metrics" => {
                let m: BatchMetrics = serde_json::from_value(body)
                    .with_context(|| format!("metrics result in {}", path.display()))?;
                fsim_config.get_or_insert((m.config.fsim.clone(), m.config.psnr_max));
                quality.push(QualityRow { name: artifact_name(path), aggregate: m.aggregate });
            }
            "score" => scores.push(
                serde_json::from_value(body).with_context(|| format!("score result in {}", path.display()))?,
            ),
            "sizes" => sizes.push(
                serde_json::from_value(body).with_context(|| format!("sizes result in {}", path.display()))?,
            ),
            other => {
                return Err(anyhow!("{}: cannot report on artifact kind {other:?}", path.display()).into())
            }
        }
    }
    let (fsim_config, psnr_max) = fsim_config.unwrap_or((FsimConfig::default(), 255));
    let bundle = ReportBundle {
        fsim_config,
        psnr_max,
        quality,
        sizes,
        scores,
    };
    write_text(&out, &bundle.to_markdown())?;
    write_artifact(&json_out, "report", json!({ "inputs": inputs }), &bundle)?;
    Ok(())
}

pub fn stub_backend() -> Outcome {
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve_stub_backend(stdin.lock(), BufWriter::new(stdout.lock()))
        .context("stub backend")
        .map_err(Failure::Setup)?;
    io::stdout().flush().ok();
    Ok(())
}

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    compress_image, decompress_image, BackendKind, BackendSpec, BicubicUpscaler,
    CodecConfig, CodecError, ExternalUpscaler, Upscaler,
};
use crate::pngio::{decode_png16, encode_png16};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum BatchOp {
    Compress,
    Decompress { target_size: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub image_id: String,
    pub error: String,
}

/// Outcome of a batch run. Timing is kept out of the serialised form so that
/// summaries of identical runs compare equal byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchSummary {
    pub images_processed: usize,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub failures: Vec<BatchFailure>,
    /// Backend applications summed over all processed images.
    pub backend_calls: u64,
    /// Backend applications per image for decompression runs, when every
    /// processed image needed the same number.
    pub chain_steps: Option<u32>,
    #[serde(skip)]
    pub wall_time: f64,
}

/// Image id used for a manifest entry: the file stem.
pub(crate) fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

struct TaskOutput {
    bytes_in: u64,
    bytes_out: u64,
    backend_calls: u32,
}

enum Backends {
    Builtin,
    // idle upscalers; at most one per worker is ever created
    External(Mutex<Vec<ExternalUpscaler>>),
}

impl Backends {
    fn with<T>(
        &self,
        spec: &BackendSpec,
        f: impl FnOnce(&mut dyn Upscaler) -> Result<T, CodecError>,
    ) -> Result<T, CodecError> {
        match self {
            Backends::Builtin => f(&mut BicubicUpscaler),
            Backends::External(idle) => {
                let popped = idle.lock().expect("backend pool poisoned").pop();
                let mut upscaler = match popped {
                    Some(u) => u,
                    None => ExternalUpscaler::new(spec.clone())?,
                };
                let result = f(&mut upscaler);
                idle.lock().expect("backend pool poisoned").push(upscaler);
                result
            }
        }
    }
}

fn process_one(
    path: &Path,
    out_path: &Path,
    op: BatchOp,
    cfg: &CodecConfig,
    spec: &BackendSpec,
    backends: &Backends,
) -> Result<TaskOutput, CodecError> {
    let bytes = fs::read(path)?;
    let img = decode_png16(&bytes)?;
    let (out, backend_calls) = match op {
        BatchOp::Compress => (compress_image(&img, cfg)?, 0),
        BatchOp::Decompress { target_size } => {
            let id = image_id(path);
            let d = backends.with(spec, |up| decompress_image(&img, target_size, up, &id))?;
            (d.image, d.backend_calls)
        }
    };
    let encoded = encode_png16(&out)?;
    fs::write(out_path, &encoded)?;
    Ok(TaskOutput {
        bytes_in: bytes.len() as u64,
        bytes_out: encoded.len() as u64,
        backend_calls,
    })
}

/// Runs `op` over every image in `inputs` on `cfg.threads` workers.
///
/// Outputs keep the input file stem and land in `out_dir` as PNG. A failing
/// image is recorded in [`BatchSummary::failures`] and does not affect the
/// others. Only setup problems (bad config, unusable output directory,
/// thread pool) are returned as errors.
pub fn run_batch(
    inputs: &[PathBuf],
    out_dir: &Path,
    op: BatchOp,
    cfg: &CodecConfig,
    spec: &BackendSpec,
) -> Result<BatchSummary, CodecError> {
    let started = Instant::now();
    cfg.validate()?;
    spec.validate()?;
    fs::create_dir_all(out_dir)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CodecError::InvalidConfig(format!("thread pool: {e}")))?;
    let backends = match spec.kind {
        BackendKind::BuiltinBicubic => Backends::Builtin,
        BackendKind::ExternalProcess { .. } => Backends::External(Mutex::new(Vec::new())),
    };

    let mut seen = HashSet::new();
    let duplicate: Vec<bool> = inputs.iter().map(|p| !seen.insert(image_id(p))).collect();

    let results: Vec<Result<TaskOutput, String>> = pool.install(|| {
        inputs
            .par_iter()
            .zip(duplicate.par_iter())
            .map(|(path, &dup)| {
                if dup {
                    return Err("duplicate image id in batch".to_string());
                }
                let out_path = out_dir.join(format!("{}.png", image_id(path)));
                process_one(path, &out_path, op, cfg, spec, &backends).map_err(|e| e.to_string())
            })
            .collect()
    });

    let mut summary = BatchSummary {
        images_processed: 0,
        bytes_in: 0,
        bytes_out: 0,
        failures: Vec::new(),
        backend_calls: 0,
        chain_steps: None,
        wall_time: 0.0,
    };
    let mut steps_seen = HashSet::new();
    for (path, result) in inputs.iter().zip(results) {
        match result {
            Ok(t) => {
                summary.images_processed += 1;
                summary.bytes_in += t.bytes_in;
                summary.bytes_out += t.bytes_out;
                summary.backend_calls += t.backend_calls as u64;
                steps_seen.insert(t.backend_calls);
            }
            Err(error) => {
                log::warn!("{}: {error}", path.display());
                summary.failures.push(BatchFailure {
                    image_id: image_id(path),
                    error,
                });
            }
        }
    }
    if matches!(op, BatchOp::Decompress { .. }) && steps_seen.len() == 1 {
        summary.chain_steps = steps_seen.into_iter().next();
    }
    summary.wall_time = started.elapsed().as_secs_f64();
    Ok(summary)
}

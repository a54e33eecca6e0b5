//! Compression by anti-aliased downscaling and decompression by repeated 2x
//! super-resolution.
//!
//! A backend only ever doubles an image. Larger factors are reached by
//! chaining, so a 256 -> 1024 decompression makes exactly two backend calls.

mod backend;
mod batch;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image16;
use crate::pngio::PngError;
use crate::resample::{resize_bicubic, ResizeSpec};

pub use backend::{
    serve_stub_backend, BackendError, ExternalBackend, ExternalUpscaler, Handshake, UpscaleRequest,
    UpscaleResponse, UpscaleStatus, PROTOCOL_VERSION,
};
pub use batch::{run_batch, BatchFailure, BatchOp, BatchSummary};

/// Every backend upscales by exactly this factor.
pub const BACKEND_SCALE: u32 = 2;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("invalid codec configuration: {0}")]
    InvalidConfig(String),
    #[error("expected a {expected}x{expected} image, got {width}x{height}")]
    DimensionMismatch {
        expected: u32,
        width: u32,
        height: u32,
    },
    #[error("cannot reach {target} from {from}: ratio is not a power of two")]
    NotPowerOfTwo { from: u32, target: u32 },
    #[error("backend returned {got:?}, expected {expected:?}")]
    DimensionError {
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("backend failure: {0}")]
    BackendFailure(#[from] BackendError),
    #[error(transparent)]
    Png(#[from] PngError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub source_size: u32,
    pub compressed_size: u32,
    pub threads: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            source_size: 1024,
            compressed_size: 512,
            threads: 4,
        }
    }
}

impl CodecConfig {
    pub fn new(source_size: u32, compressed_size: u32, threads: usize) -> Result<Self, CodecError> {
        let cfg = Self {
            source_size,
            compressed_size,
            threads,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.threads == 0 {
            return Err(CodecError::InvalidConfig("threads must be at least 1".into()));
        }
        if self.compressed_size == 0 || self.source_size == 0 {
            return Err(CodecError::InvalidConfig("sizes must be non-zero".into()));
        }
        if self.source_size % self.compressed_size != 0
            || !(self.source_size / self.compressed_size).is_power_of_two()
        {
            return Err(CodecError::InvalidConfig(format!(
                "{} -> {} is not a power-of-two reduction",
                self.source_size, self.compressed_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    BuiltinBicubic,
    ExternalProcess { command: Vec<String> },
}

/// A 2x super-resolution decompressor plus its inference parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    #[serde(flatten)]
    pub kind: BackendKind,
    pub steps: u32,
    pub guidance_scale: f64,
    pub seed: Option<u64>,
    pub timeout_secs: u64,
}

impl Default for BackendSpec {
    fn default() -> Self {
        Self::builtin()
    }
}

impl BackendSpec {
    pub fn builtin() -> Self {
        Self {
            kind: BackendKind::BuiltinBicubic,
            steps: 20,
            guidance_scale: 0.0,
            seed: None,
            timeout_secs: 300,
        }
    }

    pub fn external(command: Vec<String>) -> Self {
        Self {
            kind: BackendKind::ExternalProcess { command },
            ..Self::builtin()
        }
    }

    pub fn scale_factor(&self) -> u32 {
        BACKEND_SCALE
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.steps == 0 {
            return Err(CodecError::InvalidConfig("steps must be at least 1".into()));
        }
        if let BackendKind::ExternalProcess { command } = &self.kind {
            if command.is_empty() {
                return Err(CodecError::InvalidConfig("external backend needs a command".into()));
            }
        }
        Ok(())
    }

    /// Seed for one image: the global seed mixed with a stable hash of its id.
    pub fn image_seed(&self, image_id: &str) -> Option<u64> {
        self.seed.map(|s| s ^ fnv1a64(image_id.as_bytes()))
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Something that doubles both dimensions of an image.
pub trait Upscaler {
    fn upscale_x2(&mut self, img: &Image16, image_id: &str, step: u32) -> Result<Image16, CodecError>;
}

/// Plain bicubic interpolation, the reference backend.
#[derive(Debug, Default, Clone, Copy)]
pub struct BicubicUpscaler;

impl Upscaler for BicubicUpscaler {
    fn upscale_x2(&mut self, img: &Image16, _image_id: &str, _step: u32) -> Result<Image16, CodecError> {
        let (w, h) = img.dimensions();
        Ok(resize_bicubic(
            img,
            &ResizeSpec::new(w * BACKEND_SCALE, h * BACKEND_SCALE),
        ))
    }
}

/// Downscales a `source_size` square image to `compressed_size`.
pub fn compress_image(img: &Image16, cfg: &CodecConfig) -> Result<Image16, CodecError> {
    cfg.validate()?;
    if img.dimensions() != (cfg.source_size, cfg.source_size) {
        return Err(CodecError::DimensionMismatch {
            expected: cfg.source_size,
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(resize_bicubic(img, &ResizeSpec::square(cfg.compressed_size)))
}

/// Number of 2x steps from `from` to `target`, if the ratio is a power of two.
pub fn chain_length(from: u32, target: u32) -> Result<u32, CodecError> {
    if from == 0 || target < from || target % from != 0 || !(target / from).is_power_of_two() {
        return Err(CodecError::NotPowerOfTwo { from, target });
    }
    Ok((target / from).trailing_zeros())
}

/// The result of a decompression chain.
#[derive(Debug, Clone)]
pub struct Decompressed {
    pub image: Image16,
    pub backend_calls: u32,
}

/// Upscales a square image to `target_size` by repeated 2x backend calls.
///
/// The ratio is checked before any backend call. Each step must return an
/// image of exactly twice the input size, otherwise the chain stops with
/// [`CodecError::DimensionError`].
pub fn decompress_image(
    img: &Image16,
    target_size: u32,
    upscaler: &mut dyn Upscaler,
    image_id: &str,
) -> Result<Decompressed, CodecError> {
    if img.width() != img.height() {
        return Err(CodecError::DimensionMismatch {
            expected: img.width(),
            width: img.width(),
            height: img.height(),
        });
    }
    let steps = chain_length(img.width(), target_size)?;
    let mut current = img.clone();
    for step in 0..steps {
        let (w, h) = current.dimensions();
        let next = upscaler.upscale_x2(&current, image_id, step)?;
        let expected = (w * BACKEND_SCALE, h * BACKEND_SCALE);
        if next.dimensions() != expected {
            return Err(CodecError::DimensionError {
                expected,
                got: next.dimensions(),
            });
        }
        current = next;
    }
    Ok(Decompressed {
        image: current,
        backend_calls: steps,
    })
}

//! The 16-bit grayscale raster shared by every pipeline stage.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("image dimensions must be non-zero, got {width}x{height}")]
    ZeroDimension { width: u32, height: u32 },
    #[error("sample count {actual} does not match {width}x{height}")]
    SampleCount { width: u32, height: u32, actual: usize },
}

/// Row-major raster of 16-bit grayscale samples.
#[derive(Clone, PartialEq, Eq)]
pub struct Image16 {
    width: u32,
    height: u32,
    samples: Vec<u16>,
}

impl Image16 {
    pub fn new(width: u32, height: u32, samples: Vec<u16>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::ZeroDimension { width, height });
        }
        if samples.len() != width as usize * height as usize {
            return Err(ImageError::SampleCount {
                width,
                height,
                actual: samples.len(),
            });
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    /// Image with every sample set to `value`.
    pub fn filled(width: u32, height: u32, value: u16) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> u16,
    ) -> Result<Self, ImageError> {
        let mut samples = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y));
            }
        }
        Self::new(width, height, samples)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u16> {
        self.samples
    }

    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.samples[y as usize * self.width as usize + x as usize]
    }

    pub fn row(&self, y: u32) -> &[u16] {
        let w = self.width as usize;
        &self.samples[y as usize * w..(y as usize + 1) * w]
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().map(|&v| v as f64).sum::<f64>() / self.samples.len() as f64
    }

    /// Samples as `f64`, divided by `divisor`.
    pub fn to_f64_scaled(&self, divisor: f64) -> Vec<f64> {
        self.samples.iter().map(|&v| v as f64 / divisor).collect()
    }
}

impl std::fmt::Debug for Image16 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image16")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("samples", &format_args!("[{} samples]", self.samples.len()))
            .finish()
    }
}

/// Clamps to the 16-bit range and rounds half to even.
pub(crate) fn quantize(v: f64) -> u16 {
    v.clamp(0.0, 65535.0).round_ties_even() as u16
}

//! Separable cubic-convolution resampling.
//!
//! Downscales can widen the kernel by the scale ratio, which acts as an
//! anti-aliasing prefilter folded into the interpolation weights. Samples
//! beyond the border are mirrored about the edge pixel (`c b | a b c | b a`).

use serde::{Deserialize, Serialize};

use crate::image::{quantize, Image16};

/// Cubic coefficient used by default (Catmull-Rom).
pub const DEFAULT_KERNEL_A: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResizeSpec {
    pub target_width: u32,
    pub target_height: u32,
    pub antialias: bool,
    pub kernel_a: f64,
}

impl ResizeSpec {
    /// Anti-aliased Catmull-Rom resize to `width`x`height`.
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            target_width: width.max(1),
            target_height: height.max(1),
            antialias: true,
            kernel_a: DEFAULT_KERNEL_A,
        }
    }

    pub fn square(size: u32) -> Self {
        Self::new(size, size)
    }

    pub fn antialias(mut self, on: bool) -> Self {
        self.antialias = on;
        self
    }
}

/// Cubic convolution kernel with free coefficient `a`; support is `[-2, 2]`.
pub fn cubic_kernel(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Maps an unbounded tap index into `0..len` by mirroring about the edge samples.
pub fn mirror_index(i: i64, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as i64 - 1);
    let m = i.rem_euclid(period);
    if m >= len as i64 {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Normalised taps for every output coordinate along one axis.
struct AxisWeights {
    // (first index into `taps`, tap count) per output coordinate
    spans: Vec<(usize, usize)>,
    taps: Vec<(usize, f64)>,
}

impl AxisWeights {
    fn new(in_len: usize, out_len: usize, a: f64, antialias: bool) -> Self {
        let ratio = in_len as f64 / out_len as f64;
        let stretch = if antialias && out_len < in_len {
            ratio
        } else {
            1.0
        };
        let support = 2.0 * stretch;
        let mut spans = Vec::with_capacity(out_len);
        let mut taps = Vec::new();
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for o in 0..out_len {
            let center = (o as f64 + 0.5) * ratio - 0.5;
            let first = (center - support).ceil() as i64;
            let last = (center + support).floor() as i64;
            scratch.clear();
            let mut total = 0.0;
            for t in first..=last {
                let w = cubic_kernel((t as f64 - center) / stretch, a);
                if w == 0.0 {
                    continue;
                }
                total += w;
                let src = mirror_index(t, in_len);
                match scratch.iter_mut().find(|(i, _)| *i == src) {
                    Some(entry) => entry.1 += w,
                    None => scratch.push((src, w)),
                }
            }
            let start = taps.len();
            taps.extend(scratch.iter().map(|&(i, w)| (i, w / total)));
            spans.push((start, scratch.len()));
        }
        Self { spans, taps }
    }

    fn taps(&self, o: usize) -> &[(usize, f64)] {
        let (start, len) = self.spans[o];
        &self.taps[start..start + len]
    }
}

/// Resizes `img` to the dimensions in `spec`.
///
/// Rows are filtered first into a floating-point buffer, then columns; the
/// result is clamped to `[0, 65535]` and rounded half to even.
pub fn resize_bicubic(img: &Image16, spec: &ResizeSpec) -> Image16 {
    let (in_w, in_h) = (img.width() as usize, img.height() as usize);
    let out_w = spec.target_width.max(1) as usize;
    let out_h = spec.target_height.max(1) as usize;

    let wx = AxisWeights::new(in_w, out_w, spec.kernel_a, spec.antialias);
    let wy = AxisWeights::new(in_h, out_h, spec.kernel_a, spec.antialias);

    let src = img.samples();
    let mut horizontal = vec![0.0f64; out_w * in_h];
    for y in 0..in_h {
        let row = &src[y * in_w..(y + 1) * in_w];
        let out_row = &mut horizontal[y * out_w..(y + 1) * out_w];
        for (x, out) in out_row.iter_mut().enumerate() {
            *out = wx
                .taps(x)
                .iter()
                .map(|&(i, w)| row[i] as f64 * w)
                .sum();
        }
    }

    let mut out = vec![0u16; out_w * out_h];
    let mut acc = vec![0.0f64; out_w];
    for y in 0..out_h {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for &(sy, w) in wy.taps(y) {
            let row = &horizontal[sy * out_w..(sy + 1) * out_w];
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v * w;
            }
        }
        for (dst, &v) in out[y * out_w..(y + 1) * out_w].iter_mut().zip(&acc) {
            *dst = quantize(v);
        }
    }

    Image16::new(out_w as u32, out_h as u32, out).expect("resize output shape")
}

//! Phase congruency and the Feature Similarity index.
//!
//! Phase congruency is measured with a bank of log-Gabor filters applied in
//! the frequency domain. For every orientation the responses over scales are
//! combined into a local energy, a noise floor estimated from the smallest
//! scale is subtracted, and the total energy is divided by the summed
//! amplitude. FSIM weights a phase-congruency similarity and a gradient
//! magnitude similarity by the stronger of the two congruency maps.
//!
//! All filtering runs on the image divided by 257 (8-bit scale), which is
//! the range the `t2` constant is defined on.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::image::Image16;

/// Smallest side accepted after downsampling.
pub const MIN_SIDE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsimConfig {
    pub scales: usize,
    pub orientations: usize,
    pub min_wavelength: f64,
    pub wavelength_mult: f64,
    pub sigma_on_f: f64,
    /// Ratio of orientation spacing to the angular Gaussian's sigma.
    pub d_theta_on_sigma: f64,
    /// Noise threshold in standard deviations above the estimated mean.
    pub noise_k: f64,
    pub epsilon: f64,
    pub t1: f64,
    pub t2: f64,
    pub downsample: bool,
}

impl Default for FsimConfig {
    fn default() -> Self {
        Self {
            scales: 4,
            orientations: 4,
            min_wavelength: 6.0,
            wavelength_mult: 2.0,
            sigma_on_f: 0.55,
            d_theta_on_sigma: 1.2,
            noise_k: 2.0,
            epsilon: 1e-4,
            t1: 0.85,
            t2: 160.0,
            downsample: true,
        }
    }
}

impl FsimConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let bad = |what: &str| Err(MetricsError::InvalidConfig(what.to_string()));
        if self.scales == 0 {
            return bad("scales must be at least 1");
        }
        if self.orientations == 0 {
            return bad("orientations must be at least 1");
        }
        if !(self.t1 > 0.0) || !(self.t2 > 0.0) {
            return bad("t1 and t2 must be positive");
        }
        if !(self.min_wavelength > 0.0) || !(self.wavelength_mult > 0.0) {
            return bad("wavelengths must be positive");
        }
        if !(self.sigma_on_f > 0.0 && self.sigma_on_f < 1.0) {
            return bad("sigma_on_f must lie in (0, 1)");
        }
        Ok(())
    }

    /// Averaging factor applied before filtering for an image of this size.
    pub fn downsample_factor(&self, width: u32, height: u32) -> usize {
        if !self.downsample {
            return 1;
        }
        let min_side = width.min(height) as f64;
        ((min_side / 256.0).round() as usize).max(1)
    }
}

/// A real-valued map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Map2 {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Map2 {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn argmax(&self) -> (usize, usize) {
        let (i, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        (i % self.width, i / self.width)
    }
}

/// Scales to 8-bit range and block-averages by the configured factor.
fn prepare(img: &Image16, cfg: &FsimConfig) -> Map2 {
    let f = cfg.downsample_factor(img.width(), img.height());
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src = img.to_f64_scaled(257.0);
    if f == 1 {
        return Map2 {
            width: w,
            height: h,
            values: src,
        };
    }
    let (ow, oh) = (w.div_ceil(f), h.div_ceil(f));
    let mut values = Vec::with_capacity(ow * oh);
    for by in 0..oh {
        for bx in 0..ow {
            let (y0, y1) = (by * f, ((by + 1) * f).min(h));
            let (x0, x1) = (bx * f, ((bx + 1) * f).min(w));
            let mut sum = 0.0;
            for y in y0..y1 {
                sum += src[y * w + x0..y * w + x1].iter().sum::<f64>();
            }
            values.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
    Map2 {
        width: ow,
        height: oh,
        values,
    }
}

struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    fn forward(&self, data: &mut [Complex<f64>]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform including the 1/N normalisation.
    fn inverse(&self, data: &mut [Complex<f64>]) {
        self.run(data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }

    fn run(&self, data: &mut [Complex<f64>], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        row.process(data);
        let mut column = vec![Complex::new(0.0, 0.0); self.rows];
        for x in 0..self.cols {
            for y in 0..self.rows {
                column[y] = data[y * self.cols + x];
            }
            col.process(&mut column);
            for y in 0..self.rows {
                data[y * self.cols + x] = column[y];
            }
        }
    }
}

/// Normalised frequency for FFT index `i` of an axis of length `n`, laid out
/// with the zero frequency first.
fn axis_frequency(i: usize, n: usize) -> f64 {
    if n % 2 == 1 {
        let half = (n - 1) / 2;
        let k = if i <= half { i as f64 } else { i as f64 - n as f64 };
        if n == 1 {
            0.0
        } else {
            k / (n - 1) as f64
        }
    } else {
        let k = if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
        k / n as f64
    }
}

struct OrientationNoise {
    // energy of the smallest-scale filter
    filter_energy: f64,
    sum_an2: f64,
    sum_ai_aj: f64,
}

/// The log-Gabor filter bank for one image size. It depends only on the
/// size and the configuration, so it can be shared between the two images
/// of a comparison.
pub struct FilterBank {
    rows: usize,
    cols: usize,
    cfg: FsimConfig,
    fft: Fft2,
    // filters[o * scales + s]
    filters: Vec<Vec<f64>>,
    noise: Vec<OrientationNoise>,
}

impl FilterBank {
    pub fn new(rows: usize, cols: usize, cfg: &FsimConfig) -> Result<Self, MetricsError> {
        cfg.validate()?;
        if rows < MIN_SIDE || cols < MIN_SIDE {
            return Err(MetricsError::TooSmall {
                width: cols,
                height: rows,
            });
        }
        let n = rows * cols;
        let mut radius = vec![0.0; n];
        let mut sin_theta = vec![0.0; n];
        let mut cos_theta = vec![0.0; n];
        let mut lowpass = vec![0.0; n];
        for y in 0..rows {
            let fy = axis_frequency(y, rows);
            for x in 0..cols {
                let fx = axis_frequency(x, cols);
                let i = y * cols + x;
                let r = (fx * fx + fy * fy).sqrt();
                // image rows run downwards, so flip y for a conventional angle
                let theta = (-fy).atan2(fx);
                lowpass[i] = 1.0 / (1.0 + (r / 0.45).powi(30));
                radius[i] = if i == 0 { 1.0 } else { r };
                sin_theta[i] = theta.sin();
                cos_theta[i] = theta.cos();
            }
        }

        let log_sigma2 = 2.0 * cfg.sigma_on_f.ln().powi(2);
        let log_gabor: Vec<Vec<f64>> = (0..cfg.scales)
            .map(|s| {
                let wavelength = cfg.min_wavelength * cfg.wavelength_mult.powi(s as i32);
                let fo = 1.0 / wavelength;
                let mut g: Vec<f64> = radius
                    .iter()
                    .zip(&lowpass)
                    .map(|(&r, &lp)| (-(r / fo).ln().powi(2) / log_sigma2).exp() * lp)
                    .collect();
                g[0] = 0.0;
                g
            })
            .collect();

        let theta_sigma = PI / cfg.orientations as f64 / cfg.d_theta_on_sigma;
        let fft = Fft2::new(rows, cols);
        let mut filters = Vec::with_capacity(cfg.scales * cfg.orientations);
        let mut noise = Vec::with_capacity(cfg.orientations);
        for o in 0..cfg.orientations {
            let angle = o as f64 * PI / cfg.orientations as f64;
            let (sa, ca) = angle.sin_cos();
            let spread: Vec<f64> = sin_theta
                .iter()
                .zip(&cos_theta)
                .map(|(&st, &ct)| {
                    let ds = st * ca - ct * sa;
                    let dc = ct * ca + st * sa;
                    let dtheta = ds.atan2(dc).abs();
                    (-dtheta * dtheta / (2.0 * theta_sigma * theta_sigma)).exp()
                })
                .collect();

            let mut spatial: Vec<Vec<f64>> = Vec::with_capacity(cfg.scales);
            for g in &log_gabor {
                let filter: Vec<f64> = g.iter().zip(&spread).map(|(a, b)| a * b).collect();
                let mut buf: Vec<Complex<f64>> =
                    filter.iter().map(|&v| Complex::new(v, 0.0)).collect();
                fft.inverse(&mut buf);
                let root_n = (n as f64).sqrt();
                spatial.push(buf.iter().map(|c| c.re * root_n).collect());
                filters.push(filter);
            }
            let first = &filters[o * cfg.scales];
            let filter_energy = first.iter().map(|v| v * v).sum();
            let sum_an2 = spatial.iter().flatten().map(|v| v * v).sum();
            let mut sum_ai_aj = 0.0;
            for si in 0..cfg.scales {
                for sj in si + 1..cfg.scales {
                    sum_ai_aj += spatial[si]
                        .iter()
                        .zip(&spatial[sj])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
            }
            noise.push(OrientationNoise {
                filter_energy,
                sum_an2,
                sum_ai_aj,
            });
        }

        Ok(Self {
            rows,
            cols,
            cfg: cfg.clone(),
            fft,
            filters,
            noise,
        })
    }

    /// Phase congruency of an already prepared (scaled, downsampled) map.
    fn congruency(&self, map: &Map2) -> Map2 {
        debug_assert_eq!((map.height, map.width), (self.rows, self.cols));
        let cfg = &self.cfg;
        let n = self.rows * self.cols;
        let mut spectrum: Vec<Complex<f64>> =
            map.values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.forward(&mut spectrum);

        let mut energy_all = vec![0.0; n];
        let mut an_all = vec![0.0; n];
        let mut responses: Vec<Vec<Complex<f64>>> = vec![Vec::new(); cfg.scales];
        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut energy = vec![0.0; n];

        for o in 0..cfg.orientations {
            sum_e.iter_mut().for_each(|v| *v = 0.0);
            sum_o.iter_mut().for_each(|v| *v = 0.0);
            energy.iter_mut().for_each(|v| *v = 0.0);
            for (s, eo) in responses.iter_mut().enumerate() {
                let filter = &self.filters[o * cfg.scales + s];
                eo.clear();
                eo.extend(spectrum.iter().zip(filter).map(|(c, &f)| c * f));
                self.fft.inverse(eo);
                for i in 0..n {
                    let c = eo[i];
                    an_all[i] += c.norm();
                    sum_e[i] += c.re;
                    sum_o[i] += c.im;
                }
            }
            for i in 0..n {
                let x = (sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]).sqrt() + cfg.epsilon;
                let (mean_e, mean_o) = (sum_e[i] / x, sum_o[i] / x);
                energy[i] = responses
                    .iter()
                    .map(|eo| {
                        let (e, od) = (eo[i].re, eo[i].im);
                        e * mean_e + od * mean_o - (e * mean_o - od * mean_e).abs()
                    })
                    .sum();
            }

            let threshold = self.noise_threshold(o, &responses[0]);
            for i in 0..n {
                energy_all[i] += (energy[i] - threshold).max(0.0);
            }
        }

        let values = energy_all
            .iter()
            .zip(&an_all)
            .map(|(&e, &a)| (e / (a + cfg.epsilon)).clamp(0.0, 1.0))
            .collect();
        Map2 {
            width: self.cols,
            height: self.rows,
            values,
        }
    }

    /// Noise energy threshold for orientation `o`, from the median squared
    /// amplitude of its smallest-scale response (Rayleigh noise model).
    fn noise_threshold(&self, o: usize, smallest: &[Complex<f64>]) -> f64 {
        let mut power: Vec<f64> = smallest.iter().map(|c| c.norm_sqr()).collect();
        let median_e2n = median(&mut power);
        let mean_e2n = -median_e2n / 0.5f64.ln();
        let nz = &self.noise[o];
        if nz.filter_energy <= 0.0 {
            return 0.0;
        }
        let noise_power = mean_e2n / nz.filter_energy;
        let est_noise_energy2 = 2.0 * noise_power * nz.sum_an2 + 4.0 * noise_power * nz.sum_ai_aj;
        let tau = (est_noise_energy2.max(0.0) / 2.0).sqrt();
        let mean = tau * (PI / 2.0).sqrt();
        let sigma = ((2.0 - PI / 2.0) * tau * tau).sqrt();
        (mean + self.cfg.noise_k * sigma) / 1.7
    }
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (below + upper) / 2.0
    }
}

/// Phase congruency map of `img` in `[0, 1]`, at the downsampled resolution.
pub fn phase_congruency(img: &Image16, cfg: &FsimConfig) -> Result<Map2, MetricsError> {
    let map = prepare(img, cfg);
    let bank = FilterBank::new(map.height, map.width, cfg)?;
    Ok(bank.congruency(&map))
}

/// Gradient magnitude with the Scharr stencil; borders replicate the edge.
fn gradient_magnitude(map: &Map2) -> Vec<f64> {
    let (w, h) = (map.width as isize, map.height as isize);
    let at = |x: isize, y: isize| map.values[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let mut out = Vec::with_capacity(map.values.len());
    for y in 0..h {
        for x in 0..w {
            let gx = (3.0 * (at(x + 1, y - 1) - at(x - 1, y - 1))
                + 10.0 * (at(x + 1, y) - at(x - 1, y))
                + 3.0 * (at(x + 1, y + 1) - at(x - 1, y + 1)))
                / 16.0;
            let gy = (3.0 * (at(x - 1, y + 1) - at(x - 1, y - 1))
                + 10.0 * (at(x, y + 1) - at(x, y - 1))
                + 3.0 * (at(x + 1, y + 1) - at(x + 1, y - 1)))
                / 16.0;
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// FSIM between two images of equal size, in `(0, 1]`.
///
/// When neither image has any phase congruency anywhere (both flat), the
/// weighting is undefined and the plain mean of the similarity map is used.
pub fn fsim(reference: &Image16, test: &Image16, cfg: &FsimConfig) -> Result<f64, MetricsError> {
    if reference.dimensions() != test.dimensions() {
        return Err(MetricsError::DimensionMismatch {
            reference: reference.dimensions(),
            test: test.dimensions(),
        });
    }
    let a = prepare(reference, cfg);
    let b = prepare(test, cfg);
    let bank = FilterBank::new(a.height, a.width, cfg)?;
    let pc1 = bank.congruency(&a);
    let pc2 = bank.congruency(&b);
    let g1 = gradient_magnitude(&a);
    let g2 = gradient_magnitude(&b);

    let (t1, t2) = (cfg.t1, cfg.t2);
    let mut weighted = 0.0;
    let mut weights = 0.0;
    let mut plain = 0.0;
    for i in 0..pc1.values.len() {
        let (p1, p2) = (pc1.values[i], pc2.values[i]);
        let s_pc = (2.0 * p1 * p2 + t1) / (p1 * p1 + p2 * p2 + t1);
        let s_g = (2.0 * g1[i] * g2[i] + t2) / (g1[i] * g1[i] + g2[i] * g2[i] + t2);
        let pcm = p1.max(p2);
        weighted += s_pc * s_g * pcm;
        weights += pcm;
        plain += s_pc * s_g;
    }
    let score = if weights > 0.0 {
        weighted / weights
    } else {
        plain / pc1.values.len() as f64
    };
    Ok(score.min(1.0))
}

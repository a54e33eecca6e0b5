//! Deterministic synthetic mammogram-like phantoms for tests and benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::{quantize, Image16};

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

struct Spot {
    x: f64,
    y: f64,
    r2: f64,
    amp: f64,
}

/// A `width`×`height` phantom: a bright rounded tissue region over a dark
/// background, fibrous multi-scale texture inside it, and a few small bright
/// specks. The same seed always gives the same image.
pub fn phantom(width: u32, height: u32, seed: u64) -> Image16 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<Wave> = (0..24)
        .map(|i| {
            // wavelengths from ~4 to ~128 px at 1024, relative to the image
            let cycles = 8.0 * 2f64.powf(rng.random_range(0.0..5.0));
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            Wave {
                fx: cycles * angle.cos(),
                fy: cycles * angle.sin(),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                amp: 1.0 / (1.0 + i as f64 * 0.15),
            }
        })
        .collect();
    let spots: Vec<Spot> = (0..rng.random_range(3..9))
        .map(|_| Spot {
            x: rng.random_range(0.15..0.6),
            y: rng.random_range(0.2..0.8),
            r2: rng.random_range(1e-5..2e-4),
            amp: rng.random_range(0.1..0.3),
        })
        .collect();
    let amp_total: f64 = waves.iter().map(|w| w.amp).sum();
    let cx = rng.random_range(-0.1..0.05);
    let rx = rng.random_range(0.75..0.95);
    let ry = rng.random_range(0.4..0.5);
    let base = rng.random_range(0.45..0.6);

    let (w, h) = (width as f64, height as f64);
    Image16::from_fn(width, height, |x, y| {
        let u = (x as f64 + 0.5) / w;
        let v = (y as f64 + 0.5) / h;
        let dx = (u - cx) / rx;
        let dy = (v - 0.5) / ry;
        let r = (dx * dx + dy * dy).sqrt();
        // soft tissue boundary
        let tissue = 1.0 / (1.0 + ((r - 1.0) * 40.0).exp());
        let texture: f64 = waves
            .iter()
            .map(|wv| wv.amp * (std::f64::consts::TAU * (wv.fx * u + wv.fy * v) + wv.phase).cos())
            .sum::<f64>()
            / amp_total;
        let speck: f64 = spots
            .iter()
            .map(|s| {
                let d2 = (u - s.x).powi(2) + (v - s.y).powi(2);
                s.amp * (-d2 / s.r2).exp()
            })
            .sum();
        let falloff = 1.0 - 0.35 * r.min(1.0);
        let level = 0.04 + tissue * (base * falloff + 0.25 * texture + speck);
        quantize(level.clamp(0.0, 1.0) * 65535.0)
    })
    .expect("phantom dimensions are non-zero")
}

/// `img` plus zero-mean Gaussian noise of standard deviation `sigma`
/// (16-bit units), clamped and rounded. `sigma == 0` returns a copy.
pub fn add_gaussian_noise(img: &Image16, sigma: f64, seed: u64) -> Image16 {
    if sigma <= 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let samples = img
        .samples()
        .iter()
        .map(|&s| quantize(s as f64 + normal.sample(&mut rng)))
        .collect();
    Image16::new(img.width(), img.height(), samples).expect("same shape")
}

/// `img` plus independent uniform noise in `[-amplitude, amplitude]`.
pub fn add_uniform_noise(img: &Image16, amplitude: f64, seed: u64) -> Image16 {
    if amplitude <= 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = img
        .samples()
        .iter()
        .map(|&s| quantize(s as f64 + rng.random_range(-amplitude..=amplitude)))
        .collect();
    Image16::new(img.width(), img.height(), samples).expect("same shape")
}

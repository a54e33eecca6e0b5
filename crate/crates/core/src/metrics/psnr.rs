use super::MetricsError;
use crate::image::Image16;

/// PSNR in dB between two images of equal size.
///
/// With `max_value == 255` the samples are first divided by 257 so the
/// figure is on the familiar 8-bit scale; `65535` uses native samples.
/// Identical images give `f64::INFINITY`.
pub fn psnr(reference: &Image16, test: &Image16, max_value: u16) -> Result<f64, MetricsError> {
    if reference.dimensions() != test.dimensions() {
        return Err(MetricsError::DimensionMismatch {
            reference: reference.dimensions(),
            test: test.dimensions(),
        });
    }
    let divisor = match max_value {
        255 => 257.0,
        65535 => 1.0,
        other => return Err(MetricsError::InvalidMaxValue(other)),
    };
    let n = reference.samples().len() as f64;
    let sse: f64 = reference
        .samples()
        .iter()
        .zip(test.samples())
        .map(|(&a, &b)| {
            let d = (a as f64 - b as f64) / divisor;
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / n;
    let peak = max_value as f64;
    Ok(10.0 * (peak * peak / mse).log10())
}

//! 16-bit grayscale PNG input/output.
//!
//! The encoder is pinned to a single deflate level and row filter so that
//! byte sizes are stable between runs and can be compared across corpora.

use std::fs;
use std::io::{BufReader, Cursor};
use std::path::Path;

use thiserror::Error;

use crate::image::Image16;

const DEFLATE_LEVEL: u8 = 6;

#[derive(Debug, Error)]
pub enum PngError {
    #[error("not a PNG file: {0}")]
    NotPng(String),
    #[error("unsupported PNG color type {color:?} at {depth} bits (grayscale only)")]
    UnsupportedColorType { color: String, depth: u8 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding failed: {0}")]
    Encode(String),
}

/// Decodes an in-memory grayscale PNG. 8-bit samples are promoted by `v * 257`.
pub fn decode_png16(bytes: &[u8]) -> Result<Image16, PngError> {
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| PngError::NotPng(e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale {
        return Err(PngError::UnsupportedColorType {
            color: format!("{color:?}"),
            depth: depth as u8,
        });
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| PngError::NotPng("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| PngError::NotPng(e.to_string()))?;
    let (w, h) = (info.width, info.height);
    let n = w as usize * h as usize;
    let samples: Vec<u16> = match info.bit_depth {
        png::BitDepth::Sixteen => buf[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect(),
        png::BitDepth::Eight => buf[..n].iter().map(|&v| v as u16 * 257).collect(),
        other => {
            return Err(PngError::UnsupportedColorType {
                color: "Grayscale".into(),
                depth: other as u8,
            })
        }
    };
    Image16::new(w, h, samples).map_err(|e| PngError::NotPng(e.to_string()))
}

/// Encodes `img` as a 16-bit grayscale PNG.
pub fn encode_png16(img: &Image16) -> Result<Vec<u8>, PngError> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width(), img.height());
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Sixteen);
        encoder.set_deflate_compression(png::DeflateCompression::Level(DEFLATE_LEVEL));
        encoder.set_filter(png::Filter::Paeth);
        let mut writer = encoder
            .write_header()
            .map_err(|e| PngError::Encode(e.to_string()))?;
        let data: Vec<u8> = img.samples().iter().flat_map(|v| v.to_be_bytes()).collect();
        writer
            .write_image_data(&data)
            .map_err(|e| PngError::Encode(e.to_string()))?;
        writer.finish().map_err(|e| PngError::Encode(e.to_string()))?;
    }
    Ok(out)
}

pub fn load_png16(path: impl AsRef<Path>) -> Result<Image16, PngError> {
    let bytes = fs::read(path)?;
    decode_png16(&bytes)
}

/// Writes `img` to `path` and returns the encoded byte count.
pub fn save_png16(img: &Image16, path: impl AsRef<Path>) -> Result<u64, PngError> {
    let bytes = encode_png16(img)?;
    fs::write(path, &bytes)?;
    Ok(bytes.len() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use sha2::{Digest, Sha256};

    fn encode_with(color: png::ColorType, depth: png::BitDepth, w: u32, h: u32, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut wr = enc.write_header().unwrap();
        wr.write_image_data(data).unwrap();
        wr.finish().unwrap();
        out
    }

    #[test]
    fn single_pixel_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.png");
        let img = Image16::new(1, 1, vec![0]).unwrap();
        let n = save_png16(&img, &path).unwrap();
        assert_eq!(n, fs::metadata(&path).unwrap().len());
        assert_eq!(load_png16(&path).unwrap(), img);
    }

    #[test]
    fn noise_round_trip_and_stable_size() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let img = Image16::from_fn(512, 512, |_, _| rng.random()).unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        let na = save_png16(&img, &a).unwrap();
        let nb = save_png16(&img, &b).unwrap();
        assert!(na > 0);
        assert_eq!(na, nb);
        let ha = Sha256::digest(fs::read(&a).unwrap());
        let hb = Sha256::digest(fs::read(&b).unwrap());
        assert_eq!(ha, hb);
        assert_eq!(load_png16(&a).unwrap(), img);
    }

    #[test]
    fn eight_bit_is_promoted() {
        let bytes = encode_with(png::ColorType::Grayscale, png::BitDepth::Eight, 2, 1, &[255, 1]);
        let img = decode_png16(&bytes).unwrap();
        assert_eq!(img.samples(), &[65535, 257]);
    }

    #[test]
    fn rgb_is_rejected() {
        let bytes = encode_with(png::ColorType::Rgb, png::BitDepth::Eight, 1, 1, &[1, 2, 3]);
        assert!(matches!(
            decode_png16(&bytes),
            Err(PngError::UnsupportedColorType { .. })
        ));
    }

    #[test]
    fn garbage_is_not_png() {
        assert!(matches!(decode_png16(b"hello"), Err(PngError::NotPng(_))));
        assert!(matches!(load_png16("/nonexistent/x.png"), Err(PngError::Io(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(w in 1u32..48, h in 1u32..48, seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img = Image16::from_fn(w, h, |_, _| rng.random()).unwrap();
            let bytes = encode_png16(&img).unwrap();
            prop_assert_eq!(decode_png16(&bytes).unwrap(), img);
        }
    }
}

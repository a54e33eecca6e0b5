//! Minimal DICOM reader for single-frame grayscale images.
//!
//! Only uncompressed little-endian transfer syntaxes (implicit and explicit
//! VR) are understood. The reader walks the top-level data set, picks out
//! the handful of attributes the pipeline needs and stops at Pixel Data.
//! Sequences are skipped, including undefined-length ones.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::image::{quantize, Image16};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag(pub u16, pub u16);

impl Tag {
    pub const TRANSFER_SYNTAX_UID: Tag = Tag(0x0002, 0x0010);
    pub const SOP_INSTANCE_UID: Tag = Tag(0x0008, 0x0018);
    pub const PATIENT_ID: Tag = Tag(0x0010, 0x0020);
    pub const SAMPLES_PER_PIXEL: Tag = Tag(0x0028, 0x0002);
    pub const PHOTOMETRIC_INTERPRETATION: Tag = Tag(0x0028, 0x0004);
    pub const NUMBER_OF_FRAMES: Tag = Tag(0x0028, 0x0008);
    pub const ROWS: Tag = Tag(0x0028, 0x0010);
    pub const COLUMNS: Tag = Tag(0x0028, 0x0011);
    pub const BITS_ALLOCATED: Tag = Tag(0x0028, 0x0100);
    pub const BITS_STORED: Tag = Tag(0x0028, 0x0101);
    pub const PIXEL_REPRESENTATION: Tag = Tag(0x0028, 0x0103);
    pub const RESCALE_INTERCEPT: Tag = Tag(0x0028, 0x1052);
    pub const RESCALE_SLOPE: Tag = Tag(0x0028, 0x1053);
    pub const PIXEL_DATA: Tag = Tag(0x7FE0, 0x0010);

    const ITEM: Tag = Tag(0xFFFE, 0xE000);
    const ITEM_DELIMITATION: Tag = Tag(0xFFFE, 0xE00D);
    const SEQUENCE_DELIMITATION: Tag = Tag(0xFFFE, 0xE0DD);
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:04X},{:04X})", self.0, self.1)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DicomError {
    #[error("not a DICOM file")]
    NotDicom,
    #[error("unsupported transfer syntax {0}")]
    UnsupportedTransferSyntax(String),
    #[error("missing required attribute {0}")]
    MissingTag(Tag),
    #[error("pixel data holds {actual} bytes, expected {expected}")]
    TruncatedPixelData { expected: usize, actual: usize },
    #[error("malformed element at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: &'static str },
    #[error("invalid value for {tag}: {reason}")]
    InvalidValue { tag: Tag, reason: String },
    #[error("unsupported image layout: {0}")]
    Unsupported(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntaxKind {
    ImplicitVrLittleEndian,
    ExplicitVrLittleEndian,
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferSyntax {
    pub uid: String,
    pub kind: SyntaxKind,
}

impl TransferSyntax {
    pub const IMPLICIT_VR_LE: &'static str = "1.2.840.10008.1.2";
    pub const EXPLICIT_VR_LE: &'static str = "1.2.840.10008.1.2.1";

    pub fn from_uid(uid: &str) -> Self {
        let kind = match uid {
            Self::IMPLICIT_VR_LE => SyntaxKind::ImplicitVrLittleEndian,
            Self::EXPLICIT_VR_LE => SyntaxKind::ExplicitVrLittleEndian,
            _ => SyntaxKind::Unsupported,
        };
        Self {
            uid: uid.to_string(),
            kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Photometric {
    Monochrome1,
    Monochrome2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelRepresentation {
    Unsigned,
    Signed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DicomImage {
    pub rows: u32,
    pub cols: u32,
    pub bits_allocated: u16,
    pub bits_stored: u16,
    pub pixel_representation: PixelRepresentation,
    pub photometric: Photometric,
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
    pub patient_id: String,
    pub image_id: String,
    pub transfer_syntax: TransferSyntax,
    /// Raw little-endian sample bytes, row-major.
    pub pixel_data: Vec<u8>,
}

impl DicomImage {
    /// Stored sample values with `bits_stored` masking and sign extension applied.
    pub fn raw_samples(&self) -> Vec<i32> {
        let bits = self.bits_stored as u32;
        let mask: u32 = if bits >= 32 { u32::MAX } else { (1u32 << bits) - 1 };
        let signed = self.pixel_representation == PixelRepresentation::Signed;
        let decode = |v: u32| -> i32 {
            let v = v & mask;
            if signed && bits > 0 && v & (1 << (bits - 1)) != 0 {
                v as i32 - (1i32 << bits)
            } else {
                v as i32
            }
        };
        match self.bits_allocated {
            8 => self.pixel_data.iter().map(|&b| decode(b as u32)).collect(),
            _ => self
                .pixel_data
                .chunks_exact(2)
                .map(|c| decode(u16::from_le_bytes([c[0], c[1]]) as u32))
                .collect(),
        }
    }
}

pub fn read_dicom_file(path: impl AsRef<Path>) -> Result<DicomImage, DicomError> {
    let bytes = std::fs::read(path).map_err(|e| DicomError::Io(e.to_string()))?;
    parse_dicom(&bytes)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn u16(&mut self) -> Result<u16, DicomError> {
        let b = self.take(2, "truncated element header")?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, DicomError> {
        let b = self.take(4, "truncated element header")?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize, reason: &'static str) -> Result<&'a [u8], DicomError> {
        if self.remaining() < n {
            return Err(DicomError::Malformed {
                offset: self.pos,
                reason,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

const UNDEFINED_LENGTH: u32 = 0xFFFF_FFFF;
const MAX_SEQUENCE_DEPTH: usize = 16;

#[derive(Debug, Clone, Copy)]
struct Header {
    tag: Tag,
    vr: Option<[u8; 2]>,
    len: u32,
}

fn is_long_vr(vr: &[u8; 2]) -> bool {
    matches!(
        vr,
        b"OB" | b"OD" | b"OF" | b"OL" | b"OV" | b"OW" | b"SQ" | b"SV" | b"UC" | b"UN" | b"UR"
            | b"UT" | b"UV"
    )
}

fn looks_like_vr(vr: &[u8]) -> bool {
    vr.len() == 2 && vr.iter().all(|b| b.is_ascii_uppercase())
}

fn read_header(r: &mut Reader<'_>, explicit: bool) -> Result<Header, DicomError> {
    let start = r.pos;
    let tag = Tag(r.u16()?, r.u16()?);
    // item and delimiter tags never carry a VR
    if tag.0 == 0xFFFE || !explicit {
        return Ok(Header {
            tag,
            vr: None,
            len: r.u32()?,
        });
    }
    let vr_bytes = r.take(2, "truncated element header")?;
    if !looks_like_vr(vr_bytes) {
        return Err(DicomError::Malformed {
            offset: start,
            reason: "invalid value representation",
        });
    }
    let vr = [vr_bytes[0], vr_bytes[1]];
    let len = if is_long_vr(&vr) {
        r.take(2, "truncated element header")?;
        r.u32()?
    } else {
        r.u16()? as u32
    };
    Ok(Header {
        tag,
        vr: Some(vr),
        len,
    })
}

/// Skips the items of an undefined-length sequence, leaving the reader just past
/// its delimiter.
fn skip_sequence(r: &mut Reader<'_>, explicit: bool, depth: usize) -> Result<(), DicomError> {
    if depth > MAX_SEQUENCE_DEPTH {
        return Err(DicomError::Malformed {
            offset: r.pos,
            reason: "sequences nested too deeply",
        });
    }
    loop {
        let start = r.pos;
        let tag = Tag(r.u16()?, r.u16()?);
        let len = r.u32()?;
        match tag {
            Tag::SEQUENCE_DELIMITATION => return Ok(()),
            Tag::ITEM if len == UNDEFINED_LENGTH => skip_item(r, explicit, depth + 1)?,
            Tag::ITEM => {
                r.take(len as usize, "item overruns buffer")?;
            }
            _ => {
                return Err(DicomError::Malformed {
                    offset: start,
                    reason: "expected sequence item",
                })
            }
        }
    }
}

fn skip_item(r: &mut Reader<'_>, explicit: bool, depth: usize) -> Result<(), DicomError> {
    loop {
        let h = read_header(r, explicit)?;
        if h.tag == Tag::ITEM_DELIMITATION {
            return Ok(());
        }
        skip_value(r, &h, explicit, depth)?;
    }
}

fn skip_value(r: &mut Reader<'_>, h: &Header, explicit: bool, depth: usize) -> Result<(), DicomError> {
    if h.len == UNDEFINED_LENGTH {
        if h.tag == Tag::PIXEL_DATA {
            return Err(DicomError::UnsupportedTransferSyntax(
                "encapsulated pixel data".into(),
            ));
        }
        return skip_sequence(r, explicit, depth + 1);
    }
    r.take(h.len as usize, "element value overruns buffer")?;
    Ok(())
}

#[derive(Default)]
struct Attributes<'a> {
    transfer_syntax: Option<String>,
    sop_instance_uid: Option<String>,
    patient_id: Option<String>,
    samples_per_pixel: Option<u16>,
    photometric: Option<String>,
    number_of_frames: Option<String>,
    rows: Option<u16>,
    cols: Option<u16>,
    bits_allocated: Option<u16>,
    bits_stored: Option<u16>,
    pixel_representation: Option<u16>,
    rescale_intercept: Option<String>,
    rescale_slope: Option<String>,
    pixel_data: Option<&'a [u8]>,
}

fn text(value: &[u8]) -> String {
    String::from_utf8_lossy(value)
        .trim_matches(|c: char| c == '\0' || c.is_whitespace())
        .to_string()
}

fn us(tag: Tag, value: &[u8]) -> Result<u16, DicomError> {
    if value.len() < 2 {
        return Err(DicomError::InvalidValue {
            tag,
            reason: format!("expected 2 bytes, got {}", value.len()),
        });
    }
    Ok(u16::from_le_bytes([value[0], value[1]]))
}

fn decimal(tag: Tag, value: Option<&str>, default: f64) -> Result<f64, DicomError> {
    let Some(s) = value else {
        return Ok(default);
    };
    let first = s.split('\\').next().unwrap_or("").trim();
    if first.is_empty() {
        return Ok(default);
    }
    let v: f64 = first.parse().map_err(|_| DicomError::InvalidValue {
        tag,
        reason: format!("not a decimal string: {first:?}"),
    })?;
    if !v.is_finite() {
        return Err(DicomError::InvalidValue {
            tag,
            reason: "non-finite".into(),
        });
    }
    Ok(v)
}

/// Reads group 0002 (always explicit VR little endian).
fn read_meta<'a>(r: &mut Reader<'a>, attrs: &mut Attributes<'a>) -> Result<(), DicomError> {
    while r.remaining() >= 4 {
        let group = u16::from_le_bytes([r.buf[r.pos], r.buf[r.pos + 1]]);
        if group != 0x0002 {
            break;
        }
        let h = read_header(r, true)?;
        if h.len == UNDEFINED_LENGTH {
            return Err(DicomError::Malformed {
                offset: r.pos,
                reason: "undefined length in file meta",
            });
        }
        let value = r.take(h.len as usize, "element value overruns buffer")?;
        if h.tag == Tag::TRANSFER_SYNTAX_UID {
            attrs.transfer_syntax = Some(text(value));
        }
    }
    Ok(())
}

/// Guesses whether the data set at the reader position is explicit VR.
fn detect_explicit(r: &Reader<'_>) -> Option<bool> {
    let b = &r.buf[r.pos..];
    if b.len() < 8 {
        return None;
    }
    let group = u16::from_le_bytes([b[0], b[1]]);
    if group == 0 || group > 0x7FE0 || group % 2 == 1 && group != 0x0001 {
        return None;
    }
    if looks_like_vr(&b[4..6]) {
        return Some(true);
    }
    let len = u32::from_le_bytes([b[4], b[5], b[6], b[7]]);
    if len == UNDEFINED_LENGTH || (len as usize) <= b.len() - 8 {
        Some(false)
    } else {
        None
    }
}

/// Parses an uncompressed single-frame grayscale DICOM object.
pub fn parse_dicom(bytes: &[u8]) -> Result<DicomImage, DicomError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let mut attrs = Attributes::default();

    let has_preamble = bytes.len() >= 132 && &bytes[128..132] == b"DICM";
    if has_preamble {
        r.pos = 132;
        read_meta(&mut r, &mut attrs)?;
    } else {
        if detect_explicit(&r).is_none() {
            return Err(DicomError::NotDicom);
        }
        if u16::from_le_bytes([bytes[0], bytes[1]]) == 0x0002 {
            read_meta(&mut r, &mut attrs)?;
        }
    }

    let syntax = match attrs.transfer_syntax.as_deref() {
        Some(uid) => TransferSyntax::from_uid(uid),
        None => match detect_explicit(&r) {
            Some(true) => TransferSyntax::from_uid(TransferSyntax::EXPLICIT_VR_LE),
            Some(false) => TransferSyntax::from_uid(TransferSyntax::IMPLICIT_VR_LE),
            None if has_preamble => return Err(DicomError::MissingTag(Tag::PIXEL_DATA)),
            None => return Err(DicomError::NotDicom),
        },
    };
    let explicit = match syntax.kind {
        SyntaxKind::ExplicitVrLittleEndian => true,
        SyntaxKind::ImplicitVrLittleEndian => false,
        SyntaxKind::Unsupported => return Err(DicomError::UnsupportedTransferSyntax(syntax.uid)),
    };

    while r.remaining() > 0 {
        let h = read_header(&mut r, explicit)?;
        if h.tag == Tag::PIXEL_DATA {
            if h.len == UNDEFINED_LENGTH {
                return Err(DicomError::UnsupportedTransferSyntax(
                    "encapsulated pixel data".into(),
                ));
            }
            let declared = h.len as usize;
            let available = declared.min(r.remaining());
            attrs.pixel_data = Some(&bytes[r.pos..r.pos + available]);
            break;
        }
        let is_sequence = h.vr.map_or(h.len == UNDEFINED_LENGTH, |vr| &vr == b"SQ");
        if is_sequence || h.len == UNDEFINED_LENGTH {
            if h.len == UNDEFINED_LENGTH {
                skip_sequence(&mut r, explicit, 0)?;
            } else {
                r.take(h.len as usize, "sequence overruns buffer")?;
            }
            continue;
        }
        let value = r.take(h.len as usize, "element value overruns buffer")?;
        match h.tag {
            Tag::SOP_INSTANCE_UID => attrs.sop_instance_uid = Some(text(value)),
            Tag::PATIENT_ID => attrs.patient_id = Some(text(value)),
            Tag::SAMPLES_PER_PIXEL => attrs.samples_per_pixel = Some(us(h.tag, value)?),
            Tag::PHOTOMETRIC_INTERPRETATION => attrs.photometric = Some(text(value)),
            Tag::NUMBER_OF_FRAMES => attrs.number_of_frames = Some(text(value)),
            Tag::ROWS => attrs.rows = Some(us(h.tag, value)?),
            Tag::COLUMNS => attrs.cols = Some(us(h.tag, value)?),
            Tag::BITS_ALLOCATED => attrs.bits_allocated = Some(us(h.tag, value)?),
            Tag::BITS_STORED => attrs.bits_stored = Some(us(h.tag, value)?),
            Tag::PIXEL_REPRESENTATION => attrs.pixel_representation = Some(us(h.tag, value)?),
            Tag::RESCALE_INTERCEPT => attrs.rescale_intercept = Some(text(value)),
            Tag::RESCALE_SLOPE => attrs.rescale_slope = Some(text(value)),
            _ => {}
        }
    }

    build_image(attrs, syntax)
}

fn build_image(attrs: Attributes<'_>, syntax: TransferSyntax) -> Result<DicomImage, DicomError> {
    let rows = attrs.rows.ok_or(DicomError::MissingTag(Tag::ROWS))?;
    let cols = attrs.cols.ok_or(DicomError::MissingTag(Tag::COLUMNS))?;
    let bits_allocated = attrs
        .bits_allocated
        .ok_or(DicomError::MissingTag(Tag::BITS_ALLOCATED))?;
    let pixel_data = attrs
        .pixel_data
        .ok_or(DicomError::MissingTag(Tag::PIXEL_DATA))?;

    if rows == 0 || cols == 0 {
        return Err(DicomError::InvalidValue {
            tag: if rows == 0 { Tag::ROWS } else { Tag::COLUMNS },
            reason: "must be non-zero".into(),
        });
    }
    if bits_allocated != 8 && bits_allocated != 16 {
        return Err(DicomError::Unsupported(format!(
            "bits allocated {bits_allocated}"
        )));
    }
    let bits_stored = attrs.bits_stored.unwrap_or(bits_allocated);
    if bits_stored == 0 || bits_stored > bits_allocated {
        return Err(DicomError::InvalidValue {
            tag: Tag::BITS_STORED,
            reason: format!("{bits_stored} with {bits_allocated} bits allocated"),
        });
    }
    if let Some(spp) = attrs.samples_per_pixel {
        if spp != 1 {
            return Err(DicomError::Unsupported(format!("{spp} samples per pixel")));
        }
    }
    if let Some(frames) = attrs.number_of_frames.as_deref() {
        if !frames.is_empty() && frames.trim() != "1" {
            return Err(DicomError::Unsupported(format!("{frames} frames")));
        }
    }
    let photometric = match attrs.photometric.as_deref() {
        None | Some("") | Some("MONOCHROME2") => Photometric::Monochrome2,
        Some("MONOCHROME1") => Photometric::Monochrome1,
        Some(other) => {
            return Err(DicomError::Unsupported(format!(
                "photometric interpretation {other}"
            )))
        }
    };
    let pixel_representation = match attrs.pixel_representation.unwrap_or(0) {
        0 => PixelRepresentation::Unsigned,
        1 => PixelRepresentation::Signed,
        v => {
            return Err(DicomError::InvalidValue {
                tag: Tag::PIXEL_REPRESENTATION,
                reason: format!("{v}"),
            })
        }
    };

    let expected = rows as usize * cols as usize * (bits_allocated as usize / 8);
    let actual = pixel_data.len();
    // an odd-length value carries one pad byte
    let padded_ok = expected % 2 == 1 && actual == expected + 1;
    if actual != expected && !padded_ok {
        return Err(DicomError::TruncatedPixelData { expected, actual });
    }

    Ok(DicomImage {
        rows: rows as u32,
        cols: cols as u32,
        bits_allocated,
        bits_stored,
        pixel_representation,
        photometric,
        rescale_slope: decimal(Tag::RESCALE_SLOPE, attrs.rescale_slope.as_deref(), 1.0)?,
        rescale_intercept: decimal(
            Tag::RESCALE_INTERCEPT,
            attrs.rescale_intercept.as_deref(),
            0.0,
        )?,
        patient_id: attrs.patient_id.unwrap_or_default(),
        image_id: attrs.sop_instance_uid.unwrap_or_default(),
        transfer_syntax: syntax,
        pixel_data: pixel_data[..expected].to_vec(),
    })
}

/// Converts stored values to a full-range 16-bit image.
///
/// The modality rescale is applied, MONOCHROME1 is inverted, and the result
/// is min-max stretched onto `[0, 65535]`. A constant image maps to zeros.
pub fn to_gray16(img: &DicomImage) -> Image16 {
    let mut values: Vec<f64> = img
        .raw_samples()
        .into_iter()
        .map(|v| v as f64 * img.rescale_slope + img.rescale_intercept)
        .collect();
    let (mut lo, mut hi) = min_max(&values);
    if img.photometric == Photometric::Monochrome1 {
        values.iter_mut().for_each(|v| *v = hi - *v);
        (lo, hi) = (0.0, hi - lo);
    }
    let range = hi - lo;
    let samples: Vec<u16> = if range > 0.0 {
        values
            .iter()
            .map(|&v| quantize((v - lo) / range * 65535.0))
            .collect()
    } else {
        vec![0; values.len()]
    };
    Image16::new(img.cols, img.rows, samples).expect("validated dimensions")
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

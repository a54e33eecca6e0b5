//! Byte-level writer for small DICOM test fixtures. Independent of the
//! parser: every element is laid out by hand from the encoding rules.
#![allow(dead_code)]

pub const IMPLICIT_LE: &str = "1.2.840.10008.1.2";
pub const EXPLICIT_LE: &str = "1.2.840.10008.1.2.1";
pub const JPEG_BASELINE: &str = "1.2.840.10008.1.2.4.50";

const LONG_VRS: [&[u8; 2]; 6] = [b"OB", b"OW", b"OF", b"SQ", b"UT", b"UN"];

/// Pads a text value to even length (UIDs with NUL, others with space).
pub fn text_value(s: &str, vr: &[u8; 2]) -> Vec<u8> {
    let mut v = s.as_bytes().to_vec();
    if v.len() % 2 == 1 {
        v.push(if vr == b"UI" { 0 } else { b' ' });
    }
    v
}

pub fn element(group: u16, elem: u16, vr: &[u8; 2], value: &[u8], explicit: bool) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + value.len());
    out.extend_from_slice(&group.to_le_bytes());
    out.extend_from_slice(&elem.to_le_bytes());
    if explicit {
        out.extend_from_slice(vr);
        if LONG_VRS.contains(&vr) {
            out.extend_from_slice(&[0, 0]);
            out.extend_from_slice(&(value.len() as u32).to_le_bytes());
        } else {
            out.extend_from_slice(&(value.len() as u16).to_le_bytes());
        }
    } else {
        out.extend_from_slice(&(value.len() as u32).to_le_bytes());
    }
    out.extend_from_slice(value);
    out
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub rows: u16,
    pub cols: u16,
    pub bits_allocated: u16,
    pub bits_stored: u16,
    pub signed: bool,
    pub photometric: &'static str,
    pub slope: Option<&'static str>,
    pub intercept: Option<&'static str>,
    pub patient_id: String,
    pub sop_uid: String,
    /// Stored values; written as 1 or 2 bytes each per `bits_allocated`.
    pub pixels: Vec<u16>,
    pub explicit: bool,
    pub preamble: bool,
    /// Overrides the transfer syntax written in the file meta.
    pub transfer_syntax: Option<&'static str>,
    /// Emits a short undefined-length sequence before the image attributes.
    pub with_sequence: bool,
    pub omit_rows: bool,
    /// Overrides the declared and written pixel data length.
    pub pixel_bytes: Option<usize>,
}

impl Fixture {
    pub fn new(rows: u16, cols: u16, pixels: Vec<u16>) -> Self {
        Self {
            rows,
            cols,
            bits_allocated: 16,
            bits_stored: 16,
            signed: false,
            photometric: "MONOCHROME2",
            slope: None,
            intercept: None,
            patient_id: "PAT001".into(),
            sop_uid: "1.2.3.4.5".into(),
            pixels,
            explicit: true,
            preamble: true,
            transfer_syntax: None,
            with_sequence: false,
            omit_rows: false,
            pixel_bytes: None,
        }
    }

    pub fn pixel_data(&self) -> Vec<u8> {
        let mut data: Vec<u8> = if self.bits_allocated == 8 {
            self.pixels.iter().map(|&p| p as u8).collect()
        } else {
            self.pixels.iter().flat_map(|p| p.to_le_bytes()).collect()
        };
        if let Some(n) = self.pixel_bytes {
            data.resize(n, 0);
        } else if data.len() % 2 == 1 {
            data.push(0);
        }
        data
    }

    pub fn encode(&self) -> Vec<u8> {
        let ex = self.explicit;
        let mut out = Vec::new();
        if self.preamble {
            out.extend_from_slice(&[0u8; 128]);
            out.extend_from_slice(b"DICM");
            let ts = self.transfer_syntax.unwrap_or(if ex { EXPLICIT_LE } else { IMPLICIT_LE });
            let ts_elem = element(0x0002, 0x0010, b"UI", &text_value(ts, b"UI"), true);
            out.extend(element(0x0002, 0x0000, b"UL", &(ts_elem.len() as u32).to_le_bytes(), true));
            out.extend(ts_elem);
        }
        out.extend(element(0x0008, 0x0018, b"UI", &text_value(&self.sop_uid, b"UI"), ex));
        if self.with_sequence {
            // (0008,1140) SQ, undefined length, one undefined-length item
            out.extend_from_slice(&0x0008u16.to_le_bytes());
            out.extend_from_slice(&0x1140u16.to_le_bytes());
            if ex {
                out.extend_from_slice(b"SQ\0\0");
            }
            out.extend_from_slice(&0xFFFF_FFFFu32.to_le_bytes());
            out.extend_from_slice(&[0xFE, 0xFF, 0x00, 0xE0]);
            out.extend_from_slice(&0xFFFF_FFFFu32.to_le_bytes());
            out.extend(element(0x0008, 0x1155, b"UI", &text_value("9.8.7", b"UI"), ex));
            out.extend_from_slice(&[0xFE, 0xFF, 0x0D, 0xE0, 0, 0, 0, 0]);
            out.extend_from_slice(&[0xFE, 0xFF, 0xDD, 0xE0, 0, 0, 0, 0]);
        }
        out.extend(element(0x0010, 0x0020, b"LO", &text_value(&self.patient_id, b"LO"), ex));
        out.extend(element(0x0028, 0x0002, b"US", &1u16.to_le_bytes(), ex));
        out.extend(element(0x0028, 0x0004, b"CS", &text_value(self.photometric, b"CS"), ex));
        if !self.omit_rows {
            out.extend(element(0x0028, 0x0010, b"US", &self.rows.to_le_bytes(), ex));
        }
        out.extend(element(0x0028, 0x0011, b"US", &self.cols.to_le_bytes(), ex));
        out.extend(element(0x0028, 0x0100, b"US", &self.bits_allocated.to_le_bytes(), ex));
        out.extend(element(0x0028, 0x0101, b"US", &self.bits_stored.to_le_bytes(), ex));
        out.extend(element(0x0028, 0x0103, b"US", &(self.signed as u16).to_le_bytes(), ex));
        if let Some(i) = self.intercept {
            out.extend(element(0x0028, 0x1052, b"DS", &text_value(i, b"DS"), ex));
        }
        if let Some(s) = self.slope {
            out.extend(element(0x0028, 0x1053, b"DS", &text_value(s, b"DS"), ex));
        }
        let vr = if self.bits_allocated == 8 { b"OB" } else { b"OW" };
        out.extend(element(0x7FE0, 0x0010, vr, &self.pixel_data(), ex));
        out
    }
}

mod common;

use common::dicom_fixture::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srcodec::dicom::{parse_dicom, to_gray16, DicomError, Photometric, PixelRepresentation, SyntaxKind, Tag};

#[test]
fn explicit_two_by_two() {
    let bytes = Fixture::new(2, 2, vec![0, 1, 2, 3]).encode();
    let img = parse_dicom(&bytes).unwrap();
    assert_eq!((img.rows, img.cols, img.bits_allocated), (2, 2, 16));
    assert_eq!(img.raw_samples(), vec![0, 1, 2, 3]);
    assert_eq!(img.patient_id, "PAT001");
    assert_eq!(img.image_id, "1.2.3.4.5");
    assert_eq!(img.transfer_syntax.kind, SyntaxKind::ExplicitVrLittleEndian);
    assert_eq!(img.photometric, Photometric::Monochrome2);
    assert_eq!(img.pixel_representation, PixelRepresentation::Unsigned);
    assert_eq!((img.rescale_slope, img.rescale_intercept), (1.0, 0.0));
}

#[test]
fn encoder_matches_hand_layout() {
    // headerless implicit VR 1x1, 16-bit, pixel 0x1234; written out element by element
    let mut f = Fixture::new(1, 1, vec![0x1234]);
    f.explicit = false;
    f.preamble = false;
    f.sop_uid = "1.2".into();
    f.patient_id = "P".into();
    #[rustfmt::skip]
    let want: Vec<u8> = vec![
        0x08,0x00,0x18,0x00, 4,0,0,0, b'1',b'.',b'2',0,
        0x10,0x00,0x20,0x00, 2,0,0,0, b'P',b' ',
        0x28,0x00,0x02,0x00, 2,0,0,0, 1,0,
        0x28,0x00,0x04,0x00, 12,0,0,0, b'M',b'O',b'N',b'O',b'C',b'H',b'R',b'O',b'M',b'E',b'2',b' ',
        0x28,0x00,0x10,0x00, 2,0,0,0, 1,0,
        0x28,0x00,0x11,0x00, 2,0,0,0, 1,0,
        0x28,0x00,0x00,0x01, 2,0,0,0, 16,0,
        0x28,0x00,0x01,0x01, 2,0,0,0, 16,0,
        0x28,0x00,0x03,0x01, 2,0,0,0, 0,0,
        0xE0,0x7F,0x10,0x00, 2,0,0,0, 0x34,0x12,
    ];
    assert_eq!(f.encode(), want);
    assert_eq!(parse_dicom(&want).unwrap().raw_samples(), vec![0x1234]);
}

#[test]
fn truncated_pixel_data() {
    let mut f = Fixture::new(2, 2, vec![0, 1, 2, 3]);
    f.pixel_bytes = Some(6);
    assert_eq!(
        parse_dicom(&f.encode()).unwrap_err(),
        DicomError::TruncatedPixelData { expected: 8, actual: 6 }
    );
    let mut cut = Fixture::new(2, 2, vec![0, 1, 2, 3]).encode();
    cut.truncate(cut.len() - 2);
    assert_eq!(
        parse_dicom(&cut).unwrap_err(),
        DicomError::TruncatedPixelData { expected: 8, actual: 6 }
    );
}

#[test]
fn implicit_ramp_eight_by_eight() {
    let ramp: Vec<u16> = (0..64).map(|i| i * 1000).collect();
    for preamble in [true, false] {
        let mut f = Fixture::new(8, 8, ramp.clone());
        f.explicit = false;
        f.preamble = preamble;
        let img = parse_dicom(&f.encode()).unwrap();
        assert_eq!(img.transfer_syntax.kind, SyntaxKind::ImplicitVrLittleEndian);
        let want: Vec<i32> = ramp.iter().map(|&v| v as i32).collect();
        assert_eq!(img.raw_samples(), want);
    }
}

#[test]
fn headerless_explicit_and_sequences() {
    let mut f = Fixture::new(2, 3, vec![5, 6, 7, 8, 9, 10]);
    f.preamble = false;
    f.with_sequence = true;
    assert_eq!(parse_dicom(&f.encode()).unwrap().raw_samples(), vec![5, 6, 7, 8, 9, 10]);
    f.explicit = false;
    assert_eq!(parse_dicom(&f.encode()).unwrap().raw_samples(), vec![5, 6, 7, 8, 9, 10]);
}

#[test]
fn eight_bit_with_odd_length_pad() {
    let mut f = Fixture::new(1, 3, vec![10, 20, 255]);
    f.bits_allocated = 8;
    f.bits_stored = 8;
    let img = parse_dicom(&f.encode()).unwrap();
    assert_eq!(img.raw_samples(), vec![10, 20, 255]);
}

#[test]
fn error_cases() {
    let mut f = Fixture::new(2, 2, vec![0; 4]);
    f.transfer_syntax = Some(JPEG_BASELINE);
    assert!(matches!(parse_dicom(&f.encode()), Err(DicomError::UnsupportedTransferSyntax(_))));

    let mut f = Fixture::new(2, 2, vec![0; 4]);
    f.omit_rows = true;
    assert_eq!(parse_dicom(&f.encode()).unwrap_err(), DicomError::MissingTag(Tag::ROWS));

    let mut f = Fixture::new(2, 2, vec![0; 4]);
    f.photometric = "RGB";
    assert!(matches!(parse_dicom(&f.encode()), Err(DicomError::Unsupported(_))));

    assert_eq!(parse_dicom(b"hello world, not dicom").unwrap_err(), DicomError::NotDicom);
    assert_eq!(parse_dicom(&[]).unwrap_err(), DicomError::NotDicom);
}

#[test]
fn rescale_and_monochrome1_through_gray16() {
    let mut f = Fixture::new(1, 4, vec![0, 100, 200, 300]);
    f.slope = Some("2.0");
    f.intercept = Some("-1024");
    let g = to_gray16(&parse_dicom(&f.encode()).unwrap());
    assert_eq!(g.samples(), &[0, 21845, 43690, 65535]);
    f.photometric = "MONOCHROME1";
    let g = to_gray16(&parse_dicom(&f.encode()).unwrap());
    assert_eq!(g.samples(), &[65535, 43690, 21845, 0]);
}

#[test]
fn signed_twelve_bit() {
    // -2048 and 2047 as 12-bit two's complement in 16-bit words
    let mut f = Fixture::new(1, 3, vec![0x0800, 0x0000, 0x07FF]);
    f.bits_stored = 12;
    f.signed = true;
    let img = parse_dicom(&f.encode()).unwrap();
    assert_eq!(img.raw_samples(), vec![-2048, 0, 2047]);
    assert_eq!(to_gray16(&img).samples(), &[0, 32776, 65535]);
}

fn fixture_strategy() -> impl Strategy<Value = Fixture> {
    (1u16..12, 1u16..12, any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>(), any::<u64>()).prop_map(
        |(rows, cols, eight, explicit, preamble, seq, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rows as usize * cols as usize;
            let max = if eight { 255 } else { 65535 };
            let pixels = (0..n).map(|_| rng.random_range(0..=max) as u16).collect();
            let mut f = Fixture::new(rows, cols, pixels);
            if eight {
                f.bits_allocated = 8;
                f.bits_stored = 8;
            }
            f.explicit = explicit;
            f.preamble = preamble;
            f.with_sequence = seq;
            f
        },
    )
}

proptest! {
    #[test]
    fn round_trip(f in fixture_strategy()) {
        let img = parse_dicom(&f.encode()).unwrap();
        let want: Vec<i32> = f.pixels.iter().map(|&v| v as i32).collect();
        prop_assert_eq!(img.raw_samples(), want);
        prop_assert_eq!((img.rows, img.cols), (f.rows as u32, f.cols as u32));
    }

    #[test]
    fn gray16_spans_range_and_is_monotone(f in fixture_strategy()) {
        let img = parse_dicom(&f.encode()).unwrap();
        let g = to_gray16(&img);
        let s = g.samples();
        prop_assert!(s.contains(&0));
        let constant = f.pixels.iter().all(|&p| p == f.pixels[0]);
        prop_assert_eq!(s.contains(&65535), !constant);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if f.pixels[i] <= f.pixels[j] {
                    prop_assert!(s[i] <= s[j]);
                }
            }
        }
    }

    #[test]
    fn mutations_never_panic(f in fixture_strategy(), seed in any::<u64>()) {
        let mut bytes = f.encode();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..rng.random_range(1..8) {
            match rng.random_range(0..4) {
                0 if !bytes.is_empty() => { let i = rng.random_range(0..bytes.len()); bytes[i] = rng.random(); }
                1 => { let n = rng.random_range(0..=bytes.len()); bytes.truncate(n); }
                2 => { let i = rng.random_range(0..=bytes.len()); bytes.insert(i, rng.random()); }
                _ if !bytes.is_empty() => { let i = rng.random_range(0..bytes.len()); bytes.remove(i); }
                _ => {}
            }
        }
        let _ = parse_dicom(&bytes);
    }
}

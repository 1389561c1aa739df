//! Tile-binary matrix files.
//!
//! Layout: `"HWKT"`, version byte `0x01`, format code byte (1 FP32, 2 FP16,
//! 3 BF16, 4 FP8-E4M3), two reserved bytes, rows and cols as little-endian
//! `u32`, then the element patterns row-major, little-endian, at the
//! format's storage width.

use std::path::Path;

use crate::formats::FloatFormat;

use super::{EngineError, Matrix};

pub const MAGIC: [u8; 4] = *b"HWKT";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let fmt = m.format();
    let width = fmt.storage_bytes();
    let mut out = Vec::with_capacity(HEADER_LEN + width * m.bits().len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(fmt.code().expect("matrix formats have file codes"));
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &x in m.bits() {
        out.extend_from_slice(&x.to_le_bytes()[..width]);
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix, EngineError> {
    if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
        return Err(EngineError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(EngineError::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    if bytes[4] != VERSION {
        return Err(EngineError::UnsupportedVersion(bytes[4]));
    }
    let fmt = FloatFormat::from_code(bytes[5]).ok_or(EngineError::UnknownFormat(bytes[5]))?;
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols) = (word(8), word(12));
    let width = fmt.storage_bytes();
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(width))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| EngineError::Shape(format!("{rows}x{cols} is too large")))?;
    match bytes.len().cmp(&expected) {
        std::cmp::Ordering::Less => return Err(EngineError::Truncated { expected, found: bytes.len() }),
        std::cmp::Ordering::Greater => return Err(EngineError::TrailingBytes { expected, found: bytes.len() }),
        std::cmp::Ordering::Equal => {}
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(width)
        .map(|c| {
            let mut w = [0u8; 4];
            w[..width].copy_from_slice(c);
            u32::from_le_bytes(w)
        })
        .collect();
    Matrix::new(rows, cols, fmt, data)
}

pub fn read_matrix(path: &Path) -> Result<Matrix, EngineError> {
    let bytes = std::fs::read(path).map_err(|e| EngineError::io(path, e))?;
    decode_matrix(&bytes).map_err(|e| e.in_file(path))
}

pub fn write_matrix(m: &Matrix, path: &Path) -> Result<(), EngineError> {
    std::fs::write(path, encode_matrix(m)).map_err(|e| EngineError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::random::{finite_pattern, stream};
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = Matrix::new(1, 2, FloatFormat::BF16, vec![0x3f80, 0xc000]).unwrap();
        let bytes = encode_matrix(&m);
        assert_eq!(&bytes[..8], b"HWKT\x01\x03\0\0");
        assert_eq!(&bytes[8..16], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[16..], &[0x80, 0x3f, 0x00, 0xc0]);
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(decode_matrix(b""), Err(EngineError::BadMagic)));
        assert!(matches!(decode_matrix(b"HWKX\x01\x01\0\0"), Err(EngineError::BadMagic)));
        let mut header = b"HWKT\x01\x01\0\0".to_vec();
        header.extend_from_slice(&16u32.to_le_bytes());
        header.extend_from_slice(&16u32.to_le_bytes());
        let mut short = header.clone();
        short.extend(std::iter::repeat_n(0, 1023));
        assert!(matches!(decode_matrix(&short), Err(EngineError::Truncated { expected: 1040, found: 1039 })));
        let mut long = header.clone();
        long.extend(std::iter::repeat_n(0, 1025));
        assert!(matches!(decode_matrix(&long), Err(EngineError::TrailingBytes { .. })));
        let mut bad = header.clone();
        bad[5] = 9;
        assert!(matches!(decode_matrix(&bad), Err(EngineError::UnknownFormat(9))));
        bad[4] = 2;
        assert!(matches!(decode_matrix(&bad), Err(EngineError::UnsupportedVersion(2))));
        assert!(matches!(decode_matrix(&header[..10]), Err(EngineError::Truncated { .. })));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.hwkt");
        let mut rng = stream(3, 0);
        let data = (0..35).map(|_| finite_pattern(&mut rng, FloatFormat::FP16)).collect();
        let m = Matrix::new(5, 7, FloatFormat::FP16, data).unwrap();
        write_matrix(&m, &path).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
        assert!(matches!(read_matrix(&dir.path().join("missing")), Err(EngineError::Io { .. })));
    }

    proptest! {
        #[test]
        fn encode_decode_is_lossless(rows in 0usize..9, cols in 0usize..9, code in 1u8..=4, seed: u64) {
            let fmt = FloatFormat::from_code(code).unwrap();
            let mut rng = stream(seed, 0);
            let data: Vec<u32> = (0..rows * cols).map(|_| finite_pattern(&mut rng, fmt)).collect();
            let m = Matrix::new(rows, cols, fmt, data).unwrap();
            prop_assert_eq!(decode_matrix(&encode_matrix(&m)).unwrap(), m);
        }
    }
}

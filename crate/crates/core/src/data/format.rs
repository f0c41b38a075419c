//! On-disk encodings.
//!
//! Feature and dense matrix files use the `CGF1` layout: the 4 magic bytes
//! `CGF1`, `rows` and `dim` as little-endian `u32`, then `rows * dim`
//! little-endian IEEE-754 `f32` values in row-major order, with no padding.
//! Record files are UTF-8 JSON lines.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::types::{FeatureKind, RawFeatureMatrix};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"CGF1";
const HEADER_LEN: usize = 12;

pub fn encode_matrix(rows: usize, dim: usize, data: &[f32]) -> Vec<u8> {
    assert_eq!(data.len(), rows * dim);
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse a `CGF1` buffer into `(rows, dim, data)`. `name` is used in errors.
pub fn decode_matrix(name: &str, bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 4 {
        return Err(Error::format(name, bytes.len() as u64, "truncated magic"));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format(name, 0, "bad magic, expected `CGF1`"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(name, bytes.len() as u64, "truncated header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format(name, 4, "rows * dim overflows"))?;
    if bytes.len() != expected {
        let offset = bytes.len().min(expected) as u64;
        return Err(Error::format(
            name,
            offset,
            format!(
                "payload size mismatch: header declares {rows}x{dim} ({expected} bytes), file has {}",
                bytes.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(rows * dim);
    for (k, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(
                name,
                (HEADER_LEN + 4 * k) as u64,
                "non-finite value",
            ));
        }
        data.push(v);
    }
    Ok((rows, dim, data))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn display_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn write_features(path: &Path, m: &RawFeatureMatrix) -> Result<()> {
    write_bytes(path, &encode_matrix(m.rows, m.dim, &m.data))
}

pub fn read_features(path: &Path, kind: FeatureKind) -> Result<RawFeatureMatrix> {
    let bytes = read_bytes(path)?;
    let (rows, dim, data) = decode_matrix(&display_name(path), &bytes)?;
    Ok(RawFeatureMatrix::new(kind, rows, dim, data))
}

/// Write an `f64` matrix in the `CGF1` layout (values narrowed to `f32`).
pub fn write_dense(path: &Path, m: &Array2<f64>) -> Result<()> {
    let data: Vec<f32> = m.iter().map(|&v| v as f32).collect();
    write_bytes(path, &encode_matrix(m.nrows(), m.ncols(), &data))
}

pub fn read_dense(path: &Path) -> Result<Array2<f64>> {
    let bytes = read_bytes(path)?;
    let (rows, dim, data) = decode_matrix(&display_name(path), &bytes)?;
    Ok(Array2::from_shape_vec((rows, dim), data.into_iter().map(f64::from).collect())
        .expect("shape checked by decoder"))
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)
            .map_err(|e| Error::Internal(format!("serialize {}: {e}", path.display())))?;
        buf.push(b'\n');
    }
    write_bytes(path, &buf)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = String::from_utf8(read_bytes(path)?).map_err(|e| {
        Error::format(display_name(path), e.utf8_error().valid_up_to() as u64, "invalid UTF-8")
    })?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let rec = serde_json::from_str(trimmed).map_err(|e| {
                Error::format(
                    display_name(path),
                    offset + e.column().saturating_sub(1) as u64,
                    format!("line {}: {e}", e.line()),
                )
            })?;
            out.push(rec);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Internal(format!("serialize {}: {e}", path.display())))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| {
        Error::format(display_name(path), 0, format!("line {} column {}: {e}", e.line(), e.column()))
    })
}

/// Write CSV text assembled by the caller; kept here so every writer goes
/// through one error path.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let bytes = encode_matrix(2, 1, &[1.0, -2.5]);
        assert_eq!(&bytes[..4], b"CGF1");
        assert_eq!(&bytes[4..8], &[2, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 20);
    }

    #[test]
    fn wrong_magic_is_format_error_at_zero() {
        let mut bytes = encode_matrix(1, 2, &[0.0, 1.0]);
        bytes[0] = b'X';
        match decode_matrix("f", &bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = encode_matrix(2, 2, &[0.0, 1.0, 2.0, 3.0]);
        match decode_matrix("f", &bytes[..bytes.len() - 3]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 25),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn nan_rejected_with_position() {
        let bytes = encode_matrix(1, 3, &[0.0, f32::NAN, 1.0]);
        match decode_matrix("f", &bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn matrix_round_trip_is_bit_exact(rows in 0usize..6, dim in 0usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..rows * dim).map(|_| rng.random_range(-1e6f32..1e6)).collect();
            let (r, d, back) = decode_matrix("p", &encode_matrix(rows, dim, &data)).unwrap();
            prop_assert_eq!((r, d), (rows, dim));
            prop_assert_eq!(
                back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}

//! IDX raster files (`0x00000803`: unsigned bytes, three big-endian dims).

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_U8_RANK3: u32 = 0x0000_0803;

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes)
}

/// Decodes an IDX image file and maps each pixel by `x / 127.5 − 1`,
/// one flattened image per row.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!("IDX header needs 16 bytes, got {}", bytes.len())));
    }
    let word = |i: usize| u32::from_be_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let magic = word(0);
    if magic != IDX_U8_RANK3 {
        return Err(Error::Format(format!("bad IDX magic {:#010x}, expected {:#010x}", magic, IDX_U8_RANK3)));
    }
    let (n, rows, cols) = (word(4) as usize, word(8) as usize, word(12) as usize);
    let pixels = n
        .checked_mul(rows)
        .and_then(|x| x.checked_mul(cols))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    let payload = &bytes[16..];
    if payload.len() != pixels {
        return Err(Error::Format(format!(
            "IDX payload: expected {} bytes, got {}",
            pixels,
            payload.len()
        )));
    }
    let data = payload.iter().map(|&p| p as f64 / 127.5 - 1.0).collect();
    Tensor::matrix(n, rows * cols, data)
}

/// Encodes rank-3 unsigned-byte IDX; used for fixtures and round trips.
pub fn encode_idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for w in [IDX_U8_RANK3, n, rows, cols] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_mapping_endpoints() {
        let bytes = encode_idx_images(1, 1, 3, &[0, 127, 255]);
        let t = parse_idx_images(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 3]);
        assert_eq!(t.data()[0], -1.0);
        assert_eq!(t.data()[2], 1.0);
        assert!((t.data()[1] - (127.0 / 127.5 - 1.0)).abs() < 1e-15);
        assert!((t.data()[1] + 0.00392156862745098).abs() < 1e-12);
    }

    #[test]
    fn truncated_payload_names_counts() {
        let mut bytes = encode_idx_images(2, 2, 2, &[1; 8]);
        bytes.truncate(bytes.len() - 3);
        let err = parse_idx_images(&bytes).unwrap_err().to_string();
        assert!(err.contains("expected 8") && err.contains("got 5"), "{}", err);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode_idx_images(1, 1, 1, &[0]);
        bytes[3] = 0x01;
        assert!(matches!(parse_idx_images(&bytes), Err(Error::Format(_))));
    }
}

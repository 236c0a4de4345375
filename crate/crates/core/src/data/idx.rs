//! IDX files (the original MNIST distribution format).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Unsigned-byte images scaled to [0, 1], row-major `count × rows × cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format("IDX header truncated"))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(format!("bad IDX image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    let expected = count * rows * cols;
    if body.len() != expected {
        return Err(Error::format(format!(
            "IDX image payload has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body.iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(format!("bad IDX label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::format(format!(
            "IDX label payload has {} bytes, header implies {count}",
            body.len()
        )));
    }
    Ok(body.to_vec())
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    parse_idx_images(&fs::read(path)?)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&fs::read(path)?)
}

/// Serializes labels in IDX format (used to build test fixtures).
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = LABEL_MAGIC.to_be_bytes().to_vec();
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Serializes byte images in IDX format.
pub fn encode_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = IMAGE_MAGIC.to_be_bytes().to_vec();
    for d in [count, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_255_maps_to_one() {
        let bytes = encode_idx_images(1, 1, 2, &[255, 0]);
        let imgs = parse_idx_images(&bytes).unwrap();
        assert_eq!(imgs.pixels, vec![1.0, 0.0]);
        assert_eq!((imgs.count, imgs.rows, imgs.cols), (1, 1, 2));
    }

    #[test]
    fn bad_magic_and_truncation_rejected() {
        let mut bytes = encode_idx_images(2, 2, 2, &[0; 8]);
        assert!(parse_idx_images(&bytes[..bytes.len() - 1]).is_err());
        bytes[3] = 0x01;
        assert!(parse_idx_images(&bytes).is_err());
        assert!(parse_idx_labels(&encode_idx_images(1, 1, 1, &[0])).is_err());
        assert!(parse_idx_labels(&[0, 0, 8]).is_err());
    }

    #[test]
    fn labels_roundtrip() {
        assert_eq!(parse_idx_labels(&encode_idx_labels(&[3, 8, 4])).unwrap(), vec![3, 8, 4]);
    }
}

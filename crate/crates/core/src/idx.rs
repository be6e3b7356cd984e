//! Reader for the IDX binary format used by MNIST-style datasets.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::IdxFormat(format!("truncated header at byte {offset}")))
}

/// Parses an IDX image file: returns `(count, rows * cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::IdxFormat(format!("bad image magic {magic:#010x}")));
    }
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let len = n * rows * cols;
    let data = bytes
        .get(16..16 + len)
        .ok_or_else(|| Error::IdxFormat(format!("image data truncated: need {len} bytes")))?;
    Ok((n, rows * cols, data))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::IdxFormat(format!("bad label magic {magic:#010x}")));
    }
    let n = read_u32(bytes, 4)? as usize;
    bytes
        .get(8..8 + n)
        .ok_or_else(|| Error::IdxFormat(format!("label data truncated: need {n} bytes")))
}

/// Loads images scaled to `[0, 1]` (one flattened image per row) and their
/// labels.
pub fn load_idx_images(images_path: &Path, labels_path: &Path) -> Result<(Tensor, Vec<u8>)> {
    let img = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lab = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let (n, pixels, data) = parse_idx_images(&img)?;
    let labels = parse_idx_labels(&lab)?;
    if labels.len() != n {
        return Err(Error::IdxFormat(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    if n == 0 || pixels == 0 {
        return Err(Error::IdxFormat("empty image file".into()));
    }
    let x = Tensor::matrix(n, pixels, data.iter().map(|&v| f64::from(v) / 255.0).collect())?;
    Ok((x, labels.to_vec()))
}

/// Encodes images in IDX format (used by tests and fixtures).
pub fn encode_idx_images(rows: u32, cols: u32, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(IMAGES_MAGIC.to_be_bytes());
    out.extend((images.len() as u32).to_be_bytes());
    out.extend(rows.to_be_bytes());
    out.extend(cols.to_be_bytes());
    images.iter().for_each(|im| out.extend(im));
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(LABELS_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}

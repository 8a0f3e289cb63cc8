//! Big-endian IDX files as used for MNIST.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;
const CLASSES: usize = 10;

fn fmt_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        detail: detail.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| fmt_err(offset, "truncated header"))
}

/// Parses an image file into `(rows, cols, pixels)` with one byte per pixel.
pub fn read_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(fmt_err(
            0,
            format!("image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(fmt_err(8, "zero image dimension"));
    }
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() != need {
        return Err(fmt_err(
            16 + body.len().min(need),
            format!("{n} images of {rows}x{cols} need {need} bytes, found {}", body.len()),
        ));
    }
    Ok((rows, cols, body.to_vec()))
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(fmt_err(
            0,
            format!("label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(fmt_err(
            8 + body.len().min(n),
            format!("{n} labels declared, found {}", body.len()),
        ));
    }
    if let Some(i) = body.iter().position(|&l| l as usize >= CLASSES) {
        return Err(fmt_err(8 + i, format!("label {} outside 0..{CLASSES}", body[i])));
    }
    Ok(body.to_vec())
}

pub fn write_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(
        pixels.len() % (rows * cols),
        0,
        "pixel count must be a multiple of the image size"
    );
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image/label pair: pixels divided by 255, labels one-hot over
/// ten columns.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (rows, cols, pixels) = read_idx_images(&read(images_path.as_ref())?)?;
    let labels = read_idx_labels(&read(labels_path.as_ref())?)?;
    let n = pixels.len() / (rows * cols);
    if labels.len() != n {
        return Err(fmt_err(4, format!("{n} images but {} labels", labels.len())));
    }
    let inputs = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let mut targets = vec![0.0; n * CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        targets[i * CLASSES + l as usize] = 1.0;
    }
    Dataset::new(inputs, targets, rows * cols, CLASSES)
}

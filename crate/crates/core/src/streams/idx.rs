//! IDX image/label files (the MNIST container format).
//!
//! Layout, all integers big-endian:
//!
//! ```text
//! images: 0x00000803 | count | rows | cols | count*rows*cols unsigned bytes
//! labels: 0x00000801 | count | count unsigned bytes
//! ```

use std::fs;
use std::path::Path;

use super::{build_tasks, validate_split_spec, Protocol, SplitOptions, TaskStream};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Ingest {
            offset: offset as u64,
            message: format!("file truncated: need 4 header bytes, {} available", bytes.len().saturating_sub(offset)),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Ingest {
            offset: 0,
            message: format!("bad magic number {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    bytes.get(start..start + len).ok_or_else(|| Error::Ingest {
        offset: bytes.len() as u64,
        message: format!("file truncated: payload needs {len} bytes from offset {start}"),
    })
}

pub fn read_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let pixels = payload(bytes, 16, count * rows * cols)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, count)?.to_vec())
}

pub fn encode_idx_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        assert_eq!(img.len(), rows * cols, "image size does not match header");
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Reads an IDX image/label pair and splits it into tasks.
///
/// Pixels are scaled to `[0, 1]`. Every label in the file must belong to one
/// of the class sets in `split_spec`.
pub fn ingest_idx(
    images_path: &Path,
    labels_path: &Path,
    split_spec: &[Vec<usize>],
    protocol: Protocol,
    seed: u64,
    batch_size: usize,
) -> Result<TaskStream> {
    let num_classes = validate_split_spec(split_spec)?;
    let images = read_idx_images(&fs::read(images_path)?)?;
    let labels = read_idx_labels(&fs::read(labels_path)?)?;
    if images.count != labels.len() {
        return Err(Error::data(format!(
            "{} images but {} labels",
            images.count,
            labels.len()
        )));
    }
    let dim = images.rows * images.cols;
    let mut by_class: Vec<Vec<Vec<f64>>> = vec![Vec::new(); num_classes];
    for (i, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if !split_spec.iter().any(|s| s.contains(&label)) {
            return Err(Error::data(format!("label {label} of example {i} is not in the split spec")));
        }
        let px = &images.pixels[i * dim..(i + 1) * dim];
        by_class[label].push(px.iter().map(|&p| p as f64 / 255.0).collect());
    }
    let tasks = build_tasks(
        &by_class,
        split_spec,
        dim,
        &SplitOptions {
            seed,
            batch_size,
            train_fraction: 0.8,
        },
    )?;
    TaskStream::new(tasks, protocol, num_classes)
}

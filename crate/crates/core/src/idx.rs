//! IDX container parsing (the big-endian format MNIST ships in).
//!
//! Parsers take untrusted bytes: every header field is checked against the
//! actual buffer length before anything is allocated.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::trainer::Dataset;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

const IMAGES_HEADER: usize = 16;
const LABELS_HEADER: usize = 8;

/// Number of classes assumed by [`load_idx`].
pub const MNIST_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, image-major.
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => Err(Error::format(
            bytes.len(),
            format!("truncated header: need 4 bytes at offset {offset}"),
        )),
    }
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::format(
            0,
            format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
        ));
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, payload: Option<usize>) -> Result<usize> {
    let want = payload
        .and_then(|p| p.checked_add(header))
        .ok_or_else(|| Error::format(4, "dimensions overflow"))?;
    if bytes.len() < want {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: header declares {want} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > want {
        return Err(Error::format(
            want,
            format!("{} trailing bytes after declared payload", bytes.len() - want),
        ));
    }
    Ok(want)
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    if count == 0 {
        return Err(Error::format(4, "image file declares zero images"));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::format(8, format!("image dimensions {rows}x{cols} must be positive")));
    }
    let payload = count.checked_mul(rows).and_then(|v| v.checked_mul(cols));
    check_payload(bytes, IMAGES_HEADER, payload)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[IMAGES_HEADER..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    if count == 0 {
        return Err(Error::format(4, "label file declares zero labels"));
    }
    check_payload(bytes, LABELS_HEADER, Some(count))?;
    Ok(bytes[LABELS_HEADER..].to_vec())
}

/// Pairs an image file and a label file into a dataset with pixels scaled
/// to `[0, 1]`.
pub fn dataset_from_idx(images: &[u8], labels: &[u8], classes: usize) -> Result<Dataset> {
    let img = parse_idx_images(images)?;
    let lbl = parse_idx_labels(labels)?;
    if img.count != lbl.len() {
        return Err(Error::format(
            4,
            format!("label file has {} entries but image file has {}", lbl.len(), img.count),
        ));
    }
    if let Some(i) = lbl.iter().position(|&l| l as usize >= classes) {
        return Err(Error::format(
            LABELS_HEADER + i,
            format!("label {} out of range for {classes} classes", lbl[i]),
        ));
    }
    let d = img.rows * img.cols;
    let data = img.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let features = Matrix::from_vec(img.count, d, data)?;
    Dataset::new(features, lbl.into_iter().map(usize::from).collect(), classes)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads an MNIST-style image/label file pair.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = read_file(images_path.as_ref())?;
    let labels = read_file(labels_path.as_ref())?;
    dataset_from_idx(&images, &labels, MNIST_CLASSES)
}

/// Serializes images and labels back into IDX bytes.
pub fn encode_idx(images: &IdxImages, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(IMAGES_HEADER + images.pixels.len());
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for v in [images.count, images.rows, images.cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    img.extend_from_slice(&images.pixels);
    let mut lbl = Vec::with_capacity(LABELS_HEADER + labels.len());
    lbl.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lbl.extend_from_slice(labels);
    (img, lbl)
}

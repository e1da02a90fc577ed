use std::path::Path;

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Grayscale images with labels, as stored in IDX files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub rows: usize,
    pub cols: usize,
    /// `count × rows × cols` bytes, row-major per image.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let sz = self.rows * self.cols;
        &self.pixels[i * sz..(i + 1) * sz]
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::IdxFormat("truncated header".into()))
}

/// Parses an IDX image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::IdxFormat(format!(
            "image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::IdxFormat("image dimensions overflow".into()))?;
    let payload = &bytes[16..];
    if payload.len() != need {
        return Err(Error::IdxFormat(format!(
            "image payload has {} bytes, header implies {need}",
            payload.len()
        )));
    }
    Ok((count, rows, cols, payload.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::IdxFormat(format!(
            "label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::IdxFormat(format!(
            "label payload has {} bytes, header implies {count}",
            payload.len()
        )));
    }
    Ok(payload.to_vec())
}

/// Reads an image file and its label file.
pub fn load_idx(images: &Path, labels: &Path) -> Result<RawImages> {
    let (count, rows, cols, pixels) = parse_idx_images(&std::fs::read(images)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels)?)?;
    if labels.len() != count {
        return Err(Error::IdxFormat(format!(
            "{count} images but {} labels",
            labels.len()
        )));
    }
    Ok(RawImages {
        rows,
        cols,
        pixels,
        labels,
    })
}

pub fn write_idx_images(path: &Path, raw: &RawImages) -> Result<()> {
    let mut out = Vec::with_capacity(16 + raw.pixels.len());
    out.extend(IMAGES_MAGIC.to_be_bytes());
    out.extend((raw.len() as u32).to_be_bytes());
    out.extend((raw.rows as u32).to_be_bytes());
    out.extend((raw.cols as u32).to_be_bytes());
    out.extend(&raw.pixels);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(LABELS_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    std::fs::write(path, out)?;
    Ok(())
}

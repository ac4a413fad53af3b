use std::path::Path;

use super::{ImageDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;

pub fn load_idx(path: impl AsRef<Path>) -> Result<ImageDataset> {
    let bytes = std::fs::read(path)?;
    parse_idx(&bytes)
}

/// Parses a big-endian IDX image file (unsigned bytes, three dimensions).
pub fn parse_idx(bytes: &[u8]) -> Result<ImageDataset> {
    let be = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| Error::format("idx", "truncated header"))
    };
    let magic = be(0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format("idx", format!("bad magic {magic:#010x}")));
    }
    let (count, rows, cols) = (be(4)? as usize, be(8)? as usize, be(12)? as usize);
    let pixels = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format("idx", "dimension overflow"))?;
    let total = count
        .checked_mul(pixels)
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| Error::format("idx", "dimension overflow"))?;
    if bytes.len() < total {
        return Err(Error::format(
            "idx",
            format!("truncated payload: need {total} bytes, have {}", bytes.len()),
        ));
    }
    let images = bytes[16..total]
        .chunks_exact(pixels.max(1))
        .take(count)
        .map(|chunk| {
            let data = chunk.iter().map(|&b| b as f64 / 255.0).collect();
            Tensor::new(vec![1, rows, cols], data)
        })
        .collect::<Result<Vec<_>>>()?;
    ImageDataset::new(images, Split::Train)
}

/// Encodes 8-bit grayscale images as an IDX file.
pub fn encode_idx_images(rows: u32, cols: u32, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

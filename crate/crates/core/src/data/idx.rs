//! IDX container files (the MNIST distribution format).
//!
//! Layout: two zero bytes, a type code (only 0x08, unsigned byte, is
//! supported), the number of dimensions `d`, `d` big-endian u32 sizes, then
//! the row-major payload. Gzipped files are detected by their magic bytes.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::dataset::LabeledDataset;
use super::space::{Bounds, OutputSpace};
use crate::error::{invalid, Error, Result};
use crate::rows::Rows;

pub const TYPE_U8: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn format_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Format {
        offset: offset as u64,
        message: message.into(),
    })
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return format_err(bytes.len(), "truncated magic number");
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        let at = if bytes[0] != 0 { 0 } else { 1 };
        return format_err(at, "bad magic: first two bytes must be zero");
    }
    if bytes[2] != TYPE_U8 {
        return format_err(2, format!("unsupported type code 0x{:02x}", bytes[2]));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return format_err(3, "tensor must have at least one dimension");
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut off = 4;
    for _ in 0..ndim {
        let Some(chunk) = bytes.get(off..off + 4) else {
            return format_err(bytes.len(), "truncated dimension list");
        };
        dims.push(u32::from_be_bytes(chunk.try_into().unwrap()) as usize);
        off += 4;
    }
    let len: usize = dims.iter().product();
    let end = off + len;
    if bytes.len() < end {
        return format_err(bytes.len(), format!("payload truncated, expected {len} bytes"));
    }
    if bytes.len() > end {
        return format_err(end, "trailing bytes after payload");
    }
    Ok(IdxTensor {
        dims,
        data: bytes[off..end].to_vec(),
    })
}

/// Reads an IDX file, transparently inflating gzip.
pub fn read_idx(path: &Path) -> Result<IdxTensor> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        parse_idx(&out)
    } else {
        parse_idx(&raw)
    }
}

pub fn encode_idx(t: &IdxTensor) -> Vec<u8> {
    let mut out = vec![0, 0, TYPE_U8, t.dims.len() as u8];
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&t.data);
    out
}

/// Images scaled to [0,1] and flattened; labels become one-hot vectors over
/// `n_classes`.
pub fn idx_to_dataset(images: &IdxTensor, labels: &IdxTensor, n_classes: usize) -> Result<LabeledDataset> {
    if images.dims.is_empty() || labels.dims.len() != 1 {
        return invalid("expected an image tensor and a 1-D label tensor");
    }
    let n = images.dims[0];
    if labels.dims[0] != n {
        return invalid(format!("{n} images but {} labels", labels.dims[0]));
    }
    let pixels: usize = images.dims[1..].iter().product();
    let xs: Vec<f64> = images.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    let mut ys = vec![0.0; n * n_classes];
    for (i, &l) in labels.data.iter().enumerate() {
        let l = l as usize;
        if l >= n_classes {
            return invalid(format!("label {l} out of range for {n_classes} classes"));
        }
        ys[i * n_classes + l] = 1.0;
    }
    LabeledDataset::new(
        Rows::from_flat(pixels.max(1), xs)?,
        Rows::from_flat(n_classes, ys)?,
        Bounds::unit(pixels.max(1)),
        OutputSpace::simplex(n_classes),
    )
}

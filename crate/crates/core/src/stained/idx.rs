//! MNIST IDX files (big-endian, magic `0x00000803` for images and
//! `0x00000801` for labels).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Raster;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn ingest(path: &Path, msg: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| ingest(path, e.to_string()))
}

fn header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>> {
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if bytes.len() >= 4 && word(0) != magic {
        return Err(ingest(
            path,
            format!("bad magic {:#010x}, expected {magic:#010x}", word(0)),
        ));
    }
    if bytes.len() < 4 + 4 * dims {
        return Err(ingest(path, "truncated IDX header"));
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

/// Parses an IDX image file into rasters scaled to `[0, 1]` (`v / 255`).
pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<Vec<Raster>> {
    let dims = header(path, bytes, IMAGES_MAGIC, 3)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    if h == 0 || w == 0 {
        return Err(ingest(path, "zero image extent"));
    }
    let body = &bytes[16..];
    if body.len() != n * h * w {
        return Err(ingest(
            path,
            format!("expected {} pixel bytes, found {}", n * h * w, body.len()),
        ));
    }
    body.chunks_exact(h * w)
        .map(|c| Raster::new(h, w, c.iter().map(|&v| v as f64 / 255.0).collect()))
        .collect()
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let n = header(path, bytes, LABELS_MAGIC, 1)?[0];
    let body = &bytes[8..];
    if body.len() != n {
        return Err(ingest(
            path,
            format!("expected {n} label bytes, found {}", body.len()),
        ));
    }
    Ok(body.to_vec())
}

pub fn read_images(path: &Path) -> Result<Vec<Raster>> {
    parse_images(path, &read(path)?)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    parse_labels(path, &read(path)?)
}

/// Serializes rasters (values clamped to `[0, 1]`, rounded to 8 bits).
pub fn encode_images(images: &[Raster]) -> Result<Vec<u8>> {
    let (h, w) = match images.first() {
        Some(r) => (r.height(), r.width()),
        None => (1, 1),
    };
    let mut out = Vec::with_capacity(16 + images.len() * h * w);
    for v in [IMAGES_MAGIC, images.len() as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for r in images {
        if (r.height(), r.width()) != (h, w) {
            return Err(crate::error::shape_err("IDX images must share one size"));
        }
        out.extend(r.data().iter().map(|&v| to_u8(v)));
    }
    Ok(out)
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

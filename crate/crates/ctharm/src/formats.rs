//! Flat binary image and label-mask files.
//!
//! Both share a 16-byte header: the magic `CTS1`, then little-endian `u32`
//! height, width and dtype tag. Images carry row-major `f32` HU values
//! (tag 1) and label masks one `u8` per pixel (tag 2).

use std::fs;
use std::path::Path;

use ctharm_core::{ImageSlice, LabelMask};

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CTS1";
pub const DTYPE_F32: u32 = 1;
pub const DTYPE_U8: u32 = 2;
const HEADER_LEN: usize = 16;

fn header(height: usize, width: usize, dtype: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&dtype.to_le_bytes());
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Splits a file into its dimensions and payload, checking the header.
fn parse<'a>(path: &Path, bytes: &'a [u8], dtype: u32, elem: usize) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not a CTS1 file (bad magic or short header)"));
    }
    let (h, w, tag) = (u32_at(bytes, 4) as usize, u32_at(bytes, 8) as usize, u32_at(bytes, 12));
    if tag != dtype {
        return Err(Error::format(path, format!("dtype tag {tag}, expected {dtype}")));
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = h.checked_mul(w).and_then(|n| n.checked_mul(elem));
    if expected != Some(payload.len()) {
        return Err(Error::format(
            path,
            format!("{h}x{w} header but {} payload bytes", payload.len()),
        ));
    }
    Ok((h, w, payload))
}

pub fn encode_image(image: &ImageSlice) -> Vec<u8> {
    let (h, w) = image.dims();
    let mut out = header(h, w, DTYPE_F32);
    out.reserve(4 * h * w);
    for &v in image.pixels() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_image(path: &Path, bytes: &[u8]) -> Result<ImageSlice> {
    let (h, w, payload) = parse(path, bytes, DTYPE_F32, 4)?;
    let pixels = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ImageSlice::new(h, w, pixels).map_err(|e| Error::format(path, e.to_string()))
}

pub fn encode_mask(mask: &LabelMask) -> Vec<u8> {
    let mut out = header(mask.height, mask.width, DTYPE_U8);
    out.extend_from_slice(&mask.labels);
    out
}

pub fn decode_mask(path: &Path, bytes: &[u8]) -> Result<LabelMask> {
    let (h, w, payload) = parse(path, bytes, DTYPE_U8, 1)?;
    LabelMask::new(h, w, payload.to_vec()).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_image(path: &Path, image: &ImageSlice) -> Result<()> {
    fs::write(path, encode_image(image)).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: &Path) -> Result<ImageSlice> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(path, &bytes)
}

pub fn write_mask(path: &Path, mask: &LabelMask) -> Result<()> {
    fs::write(path, encode_mask(mask)).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<LabelMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(path, &bytes)
}

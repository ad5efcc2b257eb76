//! Binary image formats.
//!
//! `SVIM` stores a [`StokesImage`]: magic, `u32` version, width, height and
//! channel count (17), then `f32` little-endian values row-major. Per pixel:
//! R/G/B Stokes `s0..s3`, mask (0 or 1), normal xyz, depth.
//!
//! `PFIM` stores a [`FloatImage`] the same way with `f64` values, so derived
//! images keep full precision.

use std::path::Path;

use super::{FloatImage, Pixel, StokesImage};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::polcore::StokesVector;

pub const SVIM_VERSION: u32 = 1;
pub const SVIM_CHANNELS: u32 = 17;
const SVIM_MAGIC: &[u8; 4] = b"SVIM";
const PFIM_MAGIC: &[u8; 4] = b"PFIM";
const PFIM_VERSION: u32 = 1;
const HEADER: usize = 20;
const MAX_DIM: u32 = 1 << 16;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

fn header(magic: &[u8; 4], version: u32, width: usize, height: usize, channels: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER);
    out.extend_from_slice(magic);
    for v in [version, width as u32, height as u32, channels as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Header {
    width: usize,
    height: usize,
    channels: usize,
}

fn parse_header(
    bytes: &[u8],
    magic: &[u8; 4],
    version: u32,
    channel_count: Option<u32>,
    value_size: usize,
) -> Result<Header> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(format_err(
            0,
            format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    if bytes.len() < HEADER {
        return Err(format_err(
            bytes.len(),
            format!("truncated header: expected {HEADER} bytes, found {}", bytes.len()),
        ));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    if word(0) != version {
        return Err(format_err(
            4,
            format!("unsupported version {}, expected {version}", word(0)),
        ));
    }
    let (width, height, channels) = (word(1), word(2), word(3));
    for (offset, name, v) in [(8, "width", width), (12, "height", height)] {
        if v == 0 || v > MAX_DIM {
            return Err(format_err(offset, format!("{name} {v} outside [1, {MAX_DIM}]")));
        }
    }
    if channels == 0 || channels > 64 {
        return Err(format_err(16, format!("channel count {channels} outside [1, 64]")));
    }
    if let Some(expected) = channel_count.filter(|c| *c != channels) {
        return Err(format_err(16, format!("channel count {channels}, expected {expected}")));
    }
    let expected = HEADER + width as usize * height as usize * channels as usize * value_size;
    if bytes.len() != expected {
        return Err(format_err(
            bytes.len().min(expected),
            format!(
                "payload size mismatch: expected {expected} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        channels: channels as usize,
    })
}

/// Serialize to SVIM bytes. Values are rounded to `f32`.
pub fn encode_stokes_image(image: &StokesImage) -> Result<Vec<u8>> {
    if image.pixels.len() != image.width * image.height {
        return Err(Error::Domain("pixel count does not match dimensions".into()));
    }
    let mut out = header(
        SVIM_MAGIC,
        SVIM_VERSION,
        image.width,
        image.height,
        SVIM_CHANNELS as usize,
    );
    out.reserve(image.pixels.len() * SVIM_CHANNELS as usize * 4);
    for p in &image.pixels {
        for s in &p.stokes.0 {
            for v in s.to_array() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let mask = if p.mask { 1.0f32 } else { 0.0 };
        out.extend_from_slice(&mask.to_le_bytes());
        for v in [p.normal.x, p.normal.y, p.normal.z, p.depth] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_stokes_image(bytes: &[u8]) -> Result<StokesImage> {
    let h = parse_header(bytes, SVIM_MAGIC, SVIM_VERSION, Some(SVIM_CHANNELS), 4)?;
    let mut pixels = Vec::with_capacity(h.width * h.height);
    let mut values = [0.0f64; 17];
    for k in 0..h.width * h.height {
        let base = HEADER + k * 17 * 4;
        for (c, slot) in values.iter_mut().enumerate() {
            let offset = base + c * 4;
            let v = f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(format_err(offset, format!("non-finite value {v}")));
            }
            *slot = v as f64;
        }
        let mask = match values[12] {
            0.0 => false,
            1.0 => true,
            m => return Err(format_err(base + 48, format!("mask value {m} is not 0 or 1"))),
        };
        let stokes = |c: usize| StokesVector::from_array(values[4 * c..4 * c + 4].try_into().unwrap());
        pixels.push(Pixel {
            stokes: crate::pbrdf::StokesRGB([stokes(0), stokes(1), stokes(2)]),
            mask,
            normal: Vec3::new(values[13], values[14], values[15]),
            depth: values[16],
        });
    }
    Ok(StokesImage {
        width: h.width,
        height: h.height,
        pixels,
    })
}

pub fn write_stokes_image(path: &Path, image: &StokesImage) -> Result<()> {
    let bytes = encode_stokes_image(image)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_stokes_image(path: &Path) -> Result<StokesImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_stokes_image(&bytes)
}

pub fn encode_float_image(image: &FloatImage) -> Result<Vec<u8>> {
    if image.data.len() != image.width * image.height * image.channels {
        return Err(Error::Domain("sample count does not match dimensions".into()));
    }
    let mut out = header(PFIM_MAGIC, PFIM_VERSION, image.width, image.height, image.channels);
    for v in &image.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_float_image(bytes: &[u8]) -> Result<FloatImage> {
    let h = parse_header(bytes, PFIM_MAGIC, PFIM_VERSION, None, 8)?;
    let data = bytes[HEADER..]
        .chunks_exact(8)
        .enumerate()
        .map(|(k, chunk)| {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format_err(HEADER + 8 * k, format!("non-finite value {v}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FloatImage {
        width: h.width,
        height: h.height,
        channels: h.channels,
        data,
    })
}

pub fn write_float_image(path: &Path, image: &FloatImage) -> Result<()> {
    let bytes = encode_float_image(image)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_float_image(path: &Path) -> Result<FloatImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_float_image(&bytes)
}

fn srgb_byte(linear: f64) -> u8 {
    let x = if linear.is_finite() {
        linear.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let encoded = if x <= 0.003_130_8 {
        12.92 * x
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    };
    (encoded * 255.0).round() as u8
}

/// 8-bit sRGB PNG of a 1- or 3-channel image; values are clamped to [0, 1].
pub fn write_png(path: &Path, image: &FloatImage) -> Result<()> {
    let (w, h) = (image.width as u32, image.height as u32);
    let bytes: Vec<u8> = image.data.iter().map(|v| srgb_byte(*v)).collect();
    let result = match image.channels {
        1 => image::GrayImage::from_raw(w, h, bytes).map(|img| img.save(path)),
        3 => image::RgbImage::from_raw(w, h, bytes).map(|img| img.save(path)),
        c => return Err(Error::Domain(format!("cannot export {c}-channel image as PNG"))),
    };
    match result {
        Some(Ok(())) => Ok(()),
        Some(Err(image::ImageError::IoError(e))) => Err(Error::io(path, e)),
        Some(Err(e)) => Err(Error::io(path, std::io::Error::other(e.to_string()))),
        None => Err(Error::Domain("image buffer size mismatch".into())),
    }
}

//! Binary PGM (`P5`) images, used with 16-bit samples for depth maps.
//!
//! Depth maps store `round(depth_mm / 4)` per pixel with maxval 65535;
//! 0 means no measurement.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEPTH_UNIT_MM: f64 = 4.0;
/// Exclusive upper bound on storable depth.
pub const MAX_DEPTH_MM: f64 = 256_000.0;

/// A decoded grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray16 {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

pub fn encode(width: usize, height: usize, pixels: &[u16]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::dim("pgm encode", &[pixels.len()], &[height, width]));
    }
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(pixels.len() * 2);
    for p in pixels {
        out.extend_from_slice(&p.to_be_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Gray16> {
    let mut pos = 0;
    let magic = token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::Parse(format!(
            "bad PGM magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = number(bytes, &mut pos, "width")?;
    let height = number(bytes, &mut pos, "height")?;
    let maxval = number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Parse("PGM dimensions must be positive".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse(format!("PGM maxval {maxval} outside 1..=65535")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Parse("PGM header not terminated by whitespace".into())),
    }
    let bpp = if maxval > 255 { 2 } else { 1 };
    let need = width * height * bpp;
    let raster = &bytes[pos..];
    if raster.len() != need {
        return Err(Error::Parse(format!(
            "PGM raster has {} bytes, expected {need}",
            raster.len()
        )));
    }
    let pixels: Vec<u16> = if bpp == 2 {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster.iter().map(|&b| b as u16).collect()
    };
    if let Some(p) = pixels.iter().find(|&&p| p as usize > maxval) {
        return Err(Error::Range(format!("PGM sample {p} exceeds maxval {maxval}")));
    }
    Ok(Gray16 {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    while let Some(&b) = bytes.get(*pos) {
        if b == b'#' {
            while let Some(&c) = bytes.get(*pos) {
                *pos += 1;
                if c == b'\n' {
                    break;
                }
            }
        } else if b.is_ascii_whitespace() {
            *pos += 1;
        } else {
            break;
        }
    }
}

fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Parse("truncated PGM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let t = token(bytes, pos)?;
    std::str::from_utf8(t)
        .ok()
        .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad PGM {what} {:?}", String::from_utf8_lossy(t))))
}

/// Encodes a `[1,H,W]` or `[H,W]` depth map in millimetres.
pub fn encode_depth(depth: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match depth.shape() {
        [1, h, w] | [h, w] => (*h, *w),
        s => return Err(Error::dim("depth pgm", s, &[1, 0, 0])),
    };
    let pixels = depth
        .data()
        .iter()
        .map(|&d| {
            if !(0.0..MAX_DEPTH_MM).contains(&d) {
                return Err(Error::Range(format!("depth {d} mm outside [0, {MAX_DEPTH_MM})")));
            }
            Ok((d / DEPTH_UNIT_MM).round() as u16)
        })
        .collect::<Result<Vec<_>>>()?;
    encode(w, h, &pixels)
}

/// Decodes a depth PGM into a `[1,H,W]` tensor in millimetres.
pub fn decode_depth(bytes: &[u8]) -> Result<Tensor> {
    let img = decode(bytes)?;
    Tensor::new(
        vec![1, img.height, img.width],
        img.pixels.iter().map(|&p| p as f64 * DEPTH_UNIT_MM).collect(),
    )
}

pub fn write_depth(path: &Path, depth: &Tensor) -> Result<()> {
    fs::write(path, encode_depth(depth)?).map_err(|e| Error::io(path, e))
}

pub fn read_depth(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_depth(&bytes)
}

/// Writes an arbitrary `[H,W]` map linearly rescaled from `[min,max]` onto `0..=65535`.
/// A constant map is written as all zeros.
pub fn write_normalized(path: &Path, map: &Tensor) -> Result<()> {
    let [h, w] = match map.shape() {
        [h, w] => [*h, *w],
        s => return Err(Error::dim("normalized pgm", s, &[0, 0])),
    };
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let pixels: Vec<u16> = map
        .data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 65535.0).round() as u16
            } else {
                0
            }
        })
        .collect();
    fs::write(path, encode(w, h, &pixels)?).map_err(|e| Error::io(path, e))
}

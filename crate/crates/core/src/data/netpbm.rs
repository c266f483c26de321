//! Binary PPM (`P6`) and PGM (`P5`) with maxval 255.

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    payload: usize,
}

/// Header fields are whitespace separated and `#` starts a comment running
/// to the end of the line. Exactly one whitespace byte follows the maxval.
fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(bad(path, "not a binary PPM/PGM (expected magic P6 or P5)")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(path, "malformed header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad(path, "missing whitespace after maxval"));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad(
            path,
            format!("maxval {maxval} unsupported, expected 255"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(bad(path, "zero image extent"));
    }
    Ok(Header {
        channels,
        width,
        height,
        payload: pos + 1,
    })
}

pub fn decode_bytes(bytes: &[u8], path: &Path) -> Result<Image> {
    let h = parse_header(bytes, path)?;
    let len = h.width * h.height * h.channels;
    let payload = bytes
        .get(h.payload..h.payload + len)
        .ok_or_else(|| bad(path, format!("truncated payload, expected {len} bytes")))?;
    let data = payload.iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Image::new(h.height, h.width, h.channels, data))
}

/// Decodes a `P6` or `P5` file; pixel `p` maps to `p / 255`.
pub fn decode_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bytes(&bytes, path)
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_bytes(img: &Image) -> Vec<u8> {
    let magic = match img.channels {
        1 => "P5",
        3 => "P6",
        c => panic!("netpbm images have 1 or 3 channels, got {c}"),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| quantize(v)));
    out
}

/// Writes `P5` for one channel and `P6` for three; values are clamped to
/// `[0, 1]` and rounded to the nearest of 256 levels.
pub fn encode_netpbm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_bytes(img)).map_err(|e| Error::io(path, e))
}

/// Single-channel saliency or ground-truth map as `P5`.
pub fn encode_pgm(map: &Image, path: impl AsRef<Path>) -> Result<()> {
    if map.channels != 1 {
        return Err(bad(path.as_ref(), "PGM maps must have one channel"));
    }
    encode_netpbm(map, path)
}

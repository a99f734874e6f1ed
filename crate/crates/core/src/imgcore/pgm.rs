//! Binary PGM (P5, maxval 255) reading and writing.

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

/// Quantizes to a byte: clamp to `[0, 255]`, then round half up.
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 255.0) + 0.5).floor().min(255.0) as u8
}

/// The image as it reads back after a PGM round trip.
pub fn quantized(img: &Image) -> Image {
    img.map(|v| quantize(v) as f64)
}

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedFile(format!("bad {what} in PGM header")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::MalformedFile("expected P5 magic".into()));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedFile("zero image dimension".into()));
    }
    if maxval != 255 {
        return Err(Error::MalformedFile(format!("maxval {maxval} unsupported")));
    }
    // exactly one whitespace byte separates the header from the raster
    if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
        return Err(Error::MalformedFile("missing raster separator".into()));
    }
    let raster = &bytes[h.pos + 1..];
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::MalformedFile("dimensions overflow".into()))?;
    if raster.len() < n {
        return Err(Error::MalformedFile(format!(
            "truncated raster: {} of {n} bytes",
            raster.len()
        )));
    }
    Image::new(width, height, raster[..n].iter().map(|&b| b as f64).collect())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn write_pgm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

//! Binary PPM (P6) and PGM (P5) reading and writing, maxval 255 only.
//!
//! The writer emits the canonical header `P6\n{w} {h}\n255\n`, so
//! `write_ppm(load_ppm(x)) == x` for files in that form. The reader accepts
//! arbitrary whitespace and `#` comments in the header, per the format.

use crate::error::DataError;

use super::Image;

/// Guard against absurd headers before allocating.
const MAX_PIXEL_BYTES: usize = 1 << 28;

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space_and_comments(&mut self) -> Result<(), DataError> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => return Ok(()),
                None => return Err(DataError::Ppm("truncated header".into())),
            }
        }
    }

    fn number(&mut self) -> Result<usize, DataError> {
        self.skip_space_and_comments()?;
        let start = self.pos;
        while matches!(self.bytes.get(self.pos), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(DataError::Ppm("expected a decimal header field".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DataError::Ppm("header field out of range".into()))
    }
}

/// Parse a binary pixmap: `P6` as 3-channel, `P5` as 1-channel.
pub fn load_ppm(bytes: &[u8]) -> Result<Image, DataError> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        Some(magic) => {
            return Err(DataError::Ppm(format!(
                "unsupported magic {:?} (binary P6/P5 only)",
                String::from_utf8_lossy(magic)
            )))
        }
        None => return Err(DataError::Ppm("file shorter than magic".into())),
    };
    let mut r = HeaderReader { bytes, pos: 2 };
    let width = r.number()?;
    let height = r.number()?;
    let maxval = r.number()?;
    if maxval != 255 {
        return Err(DataError::Ppm(format!("maxval must be 255, got {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(r.pos) {
        Some(b) if b.is_ascii_whitespace() => r.pos += 1,
        _ => return Err(DataError::Ppm("missing whitespace after maxval".into())),
    }
    if width == 0 || height == 0 {
        return Err(DataError::Ppm(format!("degenerate size {width}x{height}")));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .filter(|&n| n <= MAX_PIXEL_BYTES)
        .ok_or_else(|| DataError::Ppm(format!("raster too large: {width}x{height}")))?;
    let raster = &bytes[r.pos..];
    if raster.len() < expected {
        return Err(DataError::Ppm(format!(
            "raster truncated: expected {expected} bytes, found {}",
            raster.len()
        )));
    }
    if raster.len() > expected {
        return Err(DataError::Ppm(format!(
            "{} trailing bytes after raster",
            raster.len() - expected
        )));
    }
    Image::new(width, height, channels, raster.to_vec())
        .map_err(|e| DataError::Ppm(e.to_string()))
}

/// Serialize with the canonical header; `P6` for RGB, `P5` for grayscale.
pub fn write_ppm(image: &Image) -> Vec<u8> {
    let magic = if image.channels == 3 { "P6" } else { "P5" };
    let header = format!("{magic}\n{} {}\n255\n", image.width, image.height);
    let mut out = Vec::with_capacity(header.len() + image.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&image.pixels);
    out
}

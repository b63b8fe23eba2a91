//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PnmError {
    #[error("not a binary PPM/PGM file (magic {0:?})")]
    BadMagic(Vec<u8>),
    #[error("malformed header: {0}")]
    BadHeader(&'static str),
    #[error("unsupported maxval {0}, only 255 is accepted")]
    Maxval(u32),
    #[error("pixel data truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{channels} channel image cannot be written as {format}")]
    Channels { channels: usize, format: &'static str },
}

/// 8-bit interleaved image with one (gray) or three (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height * channels, "image buffer size");
        Self { width, height, channels, data }
    }

    pub fn to_unit(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32 / 255.0).collect()
    }

    /// Quantizes `[0, 1]` values (clamped) to 8 bits.
    pub fn from_unit(width: usize, height: usize, channels: usize, values: &[f32]) -> Self {
        Self::new(width, height, channels, values.iter().map(|&v| quantize(v)).collect())
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode(img: &Image) -> Result<Vec<u8>, PnmError> {
    let magic = match img.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(PnmError::Channels { channels: c, format: "PPM/PGM" }),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    Ok(out)
}

pub fn encode_ppm(img: &Image) -> Result<Vec<u8>, PnmError> {
    if img.channels != 3 {
        return Err(PnmError::Channels { channels: img.channels, format: "PPM" });
    }
    encode(img)
}

pub fn encode_pgm(img: &Image) -> Result<Vec<u8>, PnmError> {
    if img.channels != 1 {
        return Err(PnmError::Channels { channels: img.channels, format: "PGM" });
    }
    encode(img)
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &'static str) -> Result<u32, PnmError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(PnmError::BadHeader(what))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Image, PnmError> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(PnmError::BadMagic(bytes.iter().take(2).copied().collect())),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PnmError::BadHeader("zero dimension"));
    }
    if maxval != 255 {
        return Err(PnmError::Maxval(maxval));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PnmError::BadHeader("missing separator after maxval"));
    }
    let payload = &bytes[h.pos + 1..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or(PnmError::BadHeader("dimensions overflow"))?;
    if payload.len() < expected {
        return Err(PnmError::Truncated { expected, found: payload.len() });
    }
    Ok(Image::new(width, height, channels, payload[..expected].to_vec()))
}

#[derive(Debug, Error)]
pub enum ImageFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: String, source: PnmError },
}

pub fn read(path: &Path) -> Result<Image, ImageFileError> {
    let bytes = fs::read(path).map_err(|source| ImageFileError::Io { path: path.display().to_string(), source })?;
    decode(&bytes).map_err(|source| ImageFileError::Format { path: path.display().to_string(), source })
}

pub fn write(path: &Path, img: &Image) -> Result<(), ImageFileError> {
    let bytes = encode(img).map_err(|source| ImageFileError::Format { path: path.display().to_string(), source })?;
    fs::write(path, bytes).map_err(|source| ImageFileError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let img = Image::new(2, 1, 3, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(encode(&img).unwrap(), b"P6\n2 1\n255\n\x01\x02\x03\x04\x05\x06");
        let gray = Image::new(1, 2, 1, vec![0, 255]);
        assert_eq!(encode_pgm(&gray).unwrap(), b"P5\n1 2\n255\n\x00\xff");
        assert!(encode_ppm(&gray).is_err());
    }

    #[test]
    fn round_trip_every_byte_value() {
        let data: Vec<u8> = (0..=255u8).cycle().take(16 * 8 * 3).collect();
        let img = Image::new(16, 8, 3, data);
        assert_eq!(decode(&encode(&img).unwrap()).unwrap(), img);
        let gray = Image::new(16, 16, 1, (0..=255u8).collect());
        assert_eq!(decode(&encode(&gray).unwrap()).unwrap(), gray);
    }

    #[test]
    fn comments_in_header() {
        let img = decode(b"P5 # made by hand\n2 # width\n1\n255\n\x07\x08").unwrap();
        assert_eq!((img.width, img.height, img.data), (2, 1, vec![7, 8]));
    }

    #[test]
    fn corrupt_headers_are_errors() {
        let good = encode(&Image::new(2, 2, 3, vec![9; 12])).unwrap();
        let mut bad = good.clone();
        bad[1] = b'3';
        assert!(matches!(decode(&bad), Err(PnmError::BadMagic(_))));
        let mut bad = good.clone();
        bad[3] = b'x';
        assert!(matches!(decode(&bad), Err(PnmError::BadHeader("width"))));
        assert_eq!(decode(b"P6\n2 2\n65535\n"), Err(PnmError::Maxval(65535)));
        assert_eq!(decode(&good[..good.len() - 1]), Err(PnmError::Truncated { expected: 12, found: 11 }));
        assert!(decode(b"P6\n0 2\n255\n").is_err());
        assert!(decode(b"").is_err());
    }

    #[test]
    fn unit_conversion() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-3.0), 0);
        let img = Image::from_unit(1, 1, 3, &[0.0, 0.5, 1.0]);
        assert_eq!(img.data, vec![0, 128, 255]);
    }
}

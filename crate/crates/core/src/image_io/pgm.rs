//! Binary PGM (`P5`) codec.

use thiserror::Error;

use super::Image;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PgmError {
    #[error("bad magic number {0:?}, expected \"P5\"")]
    BadMagic(Vec<u8>),
    #[error("malformed header: {0}")]
    Header(&'static str),
    #[error("maxval must be in 1..=65535, got {0}")]
    MaxVal(u64),
    #[error("zero image dimension")]
    ZeroDimension,
    #[error("image dimensions {0}x{1} are too large")]
    TooLarge(u64, u64),
    #[error("truncated payload: need {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<u64, PgmError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        let mut value: u64 = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add(u64::from(b - b'0')))
                .ok_or(PgmError::Header("number overflows"))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(PgmError::Header("expected a decimal number"));
        }
        Ok(value)
    }
}

// Guards against absurd headers allocating gigabytes before the payload
// length check can fail.
const MAX_PIXELS: u64 = 1 << 28;

pub fn decode_pgm(bytes: &[u8]) -> Result<Image, PgmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(PgmError::BadMagic(bytes.iter().take(2).copied().collect()));
    }
    let mut header = Header { bytes, pos: 2 };
    match bytes.get(2) {
        Some(b) if b.is_ascii_whitespace() || *b == b'#' => {}
        _ => return Err(PgmError::Header("magic must be followed by whitespace")),
    }
    let width = header.number()?;
    let height = header.number()?;
    let maxval = header.number()?;
    if width == 0 || height == 0 {
        return Err(PgmError::ZeroDimension);
    }
    if !(1..=65535).contains(&maxval) {
        return Err(PgmError::MaxVal(maxval));
    }
    if width.saturating_mul(height) > MAX_PIXELS {
        return Err(PgmError::TooLarge(width, height));
    }
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => header.pos += 1,
        Some(_) => return Err(PgmError::Header("maxval must be followed by whitespace")),
        None => {
            return Err(PgmError::Truncated {
                expected: 1,
                actual: 0,
            })
        }
    }
    let (width, height) = (width as usize, height as usize);
    let count = width * height;
    let bytes_per_sample = if maxval < 256 { 1 } else { 2 };
    let payload = &bytes[header.pos..];
    let expected = count * bytes_per_sample;
    if payload.len() < expected {
        return Err(PgmError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    let scale = maxval as f64;
    let pixels: Vec<f64> = if bytes_per_sample == 1 {
        payload[..count]
            .iter()
            .map(|&b| (f64::from(b) / scale).min(1.0))
            .collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| (f64::from(u16::from_be_bytes([c[0], c[1]])) / scale).min(1.0))
            .collect()
    };
    Ok(Image::new(width, height, pixels).expect("decoded pixels are within [0, 1]"))
}

/// Encodes as 8-bit binary PGM (maxval 255), rounding to the nearest level.
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| (v * 255.0).round() as u8));
    out
}

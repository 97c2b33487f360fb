//! Minimal PNM raster support: reads P2/P3 (ASCII) and P5/P6 (binary)
//! with maxval up to 65535 (two-byte samples are big-endian), writes P6.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Decoded raster. Samples are stored row-major, `channels` per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl Raster {
    pub fn sample(&self, row: usize, col: usize, ch: usize) -> u16 {
        self.samples[(row * self.width + col) * self.channels + ch]
    }

    /// Sample scaled to [0, 1].
    pub fn normalized(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.sample(row, col, ch) as f64 / self.maxval as f64
    }
}

struct Lexer<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Next whitespace-delimited token, skipping `#` comments.
    fn token(&mut self) -> Result<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.bytes.len() {
            return Err(Error::Raster("unexpected end of header".into()));
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Raster(format!("bad numeric token {:?}", String::from_utf8_lossy(tok))))
    }
}

/// Parses a P2, P3, P5, or P6 image from raw bytes.
pub fn parse(bytes: &[u8]) -> Result<Raster> {
    let mut lex = Lexer::new(bytes);
    let magic = lex.token()?.to_vec();
    let (channels, ascii) = match magic.as_slice() {
        b"P2" => (1, true),
        b"P3" => (3, true),
        b"P5" => (1, false),
        b"P6" => (3, false),
        other => {
            return Err(Error::Raster(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = lex.number()?;
    let height = lex.number()?;
    let maxval = lex.number()?;
    if width == 0 || height == 0 {
        return Err(Error::Raster("zero image dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Raster(format!("maxval {maxval} out of range")));
    }
    let count = width * height * channels;
    let mut samples = Vec::with_capacity(count);
    if ascii {
        for _ in 0..count {
            let v = lex.number()?;
            if v > maxval {
                return Err(Error::Raster(format!("sample {v} exceeds maxval {maxval}")));
            }
            samples.push(v as u16);
        }
    } else {
        // exactly one whitespace byte separates the header from raster data
        if lex.pos >= bytes.len() || !bytes[lex.pos].is_ascii_whitespace() {
            return Err(Error::Raster("missing raster separator".into()));
        }
        let mut pos = lex.pos + 1;
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        if bytes.len() - pos < need {
            return Err(Error::Raster(format!(
                "raster truncated: need {need} bytes, have {}",
                bytes.len() - pos
            )));
        }
        for _ in 0..count {
            let v = if wide {
                let hi = bytes[pos] as u16;
                let lo = bytes[pos + 1] as u16;
                pos += 2;
                (hi << 8) | lo
            } else {
                pos += 1;
                bytes[pos - 1] as u16
            };
            if v as usize > maxval {
                return Err(Error::Raster(format!("sample {v} exceeds maxval {maxval}")));
            }
            samples.push(v);
        }
    }
    Ok(Raster {
        width,
        height,
        channels,
        maxval: maxval as u16,
        samples,
    })
}

pub fn read_file(path: &Path) -> Result<Raster> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    parse(&buf)
}

/// Serializes an 8-bit RGB raster as binary P6.
pub fn write_p6(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Raster(format!(
            "P6 payload has {} bytes, expected {}",
            rgb.len(),
            width * height * 3
        )));
    }
    let mut f = std::fs::File::create(path)?;
    write!(f, "P6\n{width} {height}\n255\n")?;
    f.write_all(rgb)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ascii_gray_with_comments() {
        let src = b"P2\n# a comment\n3 2 # trailing\n255\n0 10 20\n30 40 50\n";
        let r = parse(src).unwrap();
        assert_eq!((r.width, r.height, r.channels, r.maxval), (3, 2, 1, 255));
        assert_eq!(r.samples, vec![0, 10, 20, 30, 40, 50]);
        assert_eq!(r.sample(1, 2, 0), 50);
        assert!((r.normalized(0, 1, 0) - 10.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn parses_ascii_rgb() {
        let src = b"P3\n2 1\n100\n1 2 3 4 5 6\n";
        let r = parse(src).unwrap();
        assert_eq!((r.width, r.height, r.channels), (2, 1, 3));
        assert_eq!(r.sample(0, 1, 2), 6);
    }

    #[test]
    fn parses_binary_gray_8_and_16_bit() {
        let mut src = b"P5\n2 2\n255\n".to_vec();
        src.extend([9u8, 8, 7, 6]);
        let r = parse(&src).unwrap();
        assert_eq!(r.samples, vec![9, 8, 7, 6]);

        let mut src = b"P5\n1 2\n65535\n".to_vec();
        src.extend([0x01u8, 0x00, 0xff, 0xfe]);
        let r = parse(&src).unwrap();
        assert_eq!(r.samples, vec![256, 0xfffe]);
        assert_eq!(r.maxval, 65535);
    }

    #[test]
    fn parses_binary_rgb() {
        let mut src = b"P6\n1 1\n255\n".to_vec();
        src.extend([1u8, 2, 3]);
        let r = parse(&src).unwrap();
        assert_eq!(r.samples, vec![1, 2, 3]);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse(b"P7\n1 1\n255\n").is_err());
        assert!(parse(b"P2\n2 2\n255\n1 2 3\n").is_err());
        assert!(parse(b"P2\n1 1\n255\n999\n").is_err());
        assert!(parse(b"P5\n2 2\n255\nab").is_err());
        assert!(parse(b"P2\n0 1\n255\n").is_err());
        assert!(parse(b"P2\n1 1\n70000\n5\n").is_err());
    }

    #[test]
    fn p6_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let rgb = [10u8, 20, 30, 40, 50, 60];
        write_p6(&path, 2, 1, &rgb).unwrap();
        let r = read_file(&path).unwrap();
        assert_eq!((r.width, r.height, r.channels, r.maxval), (2, 1, 3, 255));
        assert_eq!(r.samples, vec![10, 20, 30, 40, 50, 60]);
        assert!(write_p6(&path, 2, 2, &rgb).is_err());
    }
}

//! 8-bit grayscale images and binary PGM (P5) I/O.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

/// Grayscale image, pixels in row-major raster order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| Error::invalid("image dimensions overflow"))?;
        if pixels.len() != expected {
            return Err(Error::invalid(format!(
                "{width}x{height} image needs {expected} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Fraction of pixels equal in both images.
    pub fn match_fraction(&self, other: &GrayImage) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::invalid("image dimensions differ"));
        }
        let same = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .filter(|(a, b)| a == b)
            .count();
        Ok(same as f64 / self.pixels.len() as f64)
    }

    pub fn read_pgm<R: Read>(mut reader: R) -> Result<Self> {
        let mut data = Vec::new();
        reader
            .read_to_end(&mut data)
            .map_err(|e| Error::Pgm(e.to_string()))?;
        Self::decode_pgm(&data)
    }

    pub fn decode_pgm(data: &[u8]) -> Result<Self> {
        let mut header = HeaderCursor { data, pos: 0 };
        if header.token()? != b"P5" {
            return Err(Error::Pgm("missing P5 magic".into()));
        }
        let width = header.number("width")?;
        let height = header.number("height")?;
        let maxval = header.number("maxval")?;
        if maxval != 255 {
            return Err(Error::Pgm(format!("maxval {maxval} unsupported, need 255")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        match data.get(header.pos) {
            Some(b) if b.is_ascii_whitespace() => header.pos += 1,
            _ => return Err(Error::Pgm("missing whitespace after maxval".into())),
        }
        let raster = &data[header.pos..];
        let len = width * height;
        if raster.len() < len {
            return Err(Error::Pgm(format!(
                "raster truncated: need {len} bytes, found {}",
                raster.len()
            )));
        }
        Self::new(width, height, raster[..len].to_vec())
    }

    pub fn write_pgm<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        write!(writer, "P5\n{} {}\n255\n", self.width, self.height)?;
        writer.write_all(&self.pixels)?;
        writer.flush()
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() + 20);
        self.write_pgm(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data =
            std::fs::read(path).map_err(|e| Error::Pgm(format!("{}: {e}", path.display())))?;
        Self::decode_pgm(&data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.encode_pgm())
    }
}

struct HeaderCursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.data.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.data.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.data.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Pgm("unexpected end of header".into()));
        }
        Ok(&self.data[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .filter(|&v: &usize| v > 0)
            .ok_or_else(|| Error::Pgm(format!("bad {what} field")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dims() {
        assert!(GrayImage::new(0, 3, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn pgm_round_trip_with_comment() {
        let img = GrayImage::new(3, 2, vec![0, 1, 2, 253, 254, 255]).unwrap();
        let bytes = img.encode_pgm();
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(GrayImage::decode_pgm(&bytes).unwrap(), img);

        let mut commented = b"P5\n# made by hand\n3 2\n# another\n255\n".to_vec();
        commented.extend_from_slice(img.pixels());
        assert_eq!(GrayImage::decode_pgm(&commented).unwrap(), img);
    }

    #[test]
    fn rejects_other_formats() {
        assert!(GrayImage::decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(GrayImage::decode_pgm(b"P5\n1 1\n65535\n\0\0").is_err());
        assert!(GrayImage::decode_pgm(b"P5\n2 2\n255\n\0").is_err());
    }
}

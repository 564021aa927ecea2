//! Binary PGM (P5) and PPM (P6) images with 8-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor4};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    /// Interleaved samples, row-major.
    pub data: Vec<u8>,
}

struct Header<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' && self.buf[self.pos] != b'\r' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Pnm(format!("missing {what}")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::Pnm(format!("{what} out of range")))
    }
}

impl PnmImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Pnm(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Pnm(format!(
                "expected {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(PnmImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let channels = match bytes.get(..2) {
            Some(b"P5") => 1,
            Some(b"P6") => 3,
            _ => return Err(Error::Pnm("bad magic (expected binary P5 or P6)".into())),
        };
        let mut h = Header { buf: bytes, pos: 2 };
        let width = h.number("width")?;
        let height = h.number("height")?;
        let maxval = h.number("maxval")?;
        if maxval != 255 {
            return Err(Error::Pnm(format!("maxval must be 255, got {maxval}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Pnm(format!("empty image {width}x{height}")));
        }
        // Exactly one whitespace byte separates the header from the samples.
        match bytes.get(h.pos) {
            Some(c) if c.is_ascii_whitespace() => h.pos += 1,
            _ => return Err(Error::Pnm("missing whitespace after maxval".into())),
        }
        let need = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::Pnm("dimensions overflow".into()))?;
        let data = &bytes[h.pos..];
        if data.len() < need {
            return Err(Error::Pnm(format!(
                "short data: expected {need} samples, got {}",
                data.len()
            )));
        }
        Self::new(width, height, channels, data[..need].to_vec())
    }

    /// Canonical encoding: `P5\n{w} {h}\n255\n` followed by the samples.
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Pnm(m) => Error::Pnm(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// `(1, channels, height, width)` tensor with samples scaled by 1/255.
    pub fn to_tensor<T: Real>(&self) -> Tensor4<T> {
        let c = self.channels;
        let scale = T::of(255.0);
        Tensor4::from_fn(Shape::new(1, c, self.height, self.width), |_, ch, y, x| {
            T::of(self.data[(y * self.width + x) * c + ch] as f64) / scale
        })
    }

    /// Inverse of [`Self::to_tensor`] for the first batch item: values are
    /// clamped to `[0, 1]`, scaled by 255 and rounded.
    pub fn from_tensor<T: Real>(t: &Tensor4<T>) -> Result<Self> {
        let s = t.shape();
        let mut data = vec![0u8; s.h * s.w * s.c];
        for ch in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let v = t.at(0, ch, y, x).as_f64();
                    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                    data[(y * s.w + x) * s.c + ch] = (v * 255.0).round() as u8;
                }
            }
        }
        Self::new(s.w, s.h, s.c, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_example() {
        let img = PnmImage::decode(b"P5\n2 2\n255\n\x00\x80\xff\x40").unwrap();
        let t = img.to_tensor::<f64>();
        let expect = [0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0];
        for (a, b) in t.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((t.data()[1] - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn comments_and_whitespace() {
        let img = PnmImage::decode(b"P6 # c\n#x\n 1\t\n1 # y\n255\r\x01\x02\x03").unwrap();
        assert_eq!((img.width, img.height, img.channels), (1, 1, 3));
        assert_eq!(img.data, [1, 2, 3]);
    }

    #[test]
    fn rejections() {
        assert!(PnmImage::decode(b"P6\n1 1\n65535\n\0\0\0\0\0\0")
            .unwrap_err()
            .to_string()
            .contains("maxval"));
        assert!(PnmImage::decode(b"P2\n1 1\n255\n0")
            .unwrap_err()
            .to_string()
            .contains("magic"));
        assert!(PnmImage::decode(b"P5\n2 2\n255\n\0\0")
            .unwrap_err()
            .to_string()
            .contains("short"));
        assert!(PnmImage::decode(b"P5\n2").is_err());
    }

    #[test]
    fn canonical_roundtrip() {
        let img = PnmImage::new(3, 2, 3, (0..18).map(|v| v * 14).collect()).unwrap();
        let bytes = img.encode();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(PnmImage::decode(&bytes).unwrap().encode(), bytes);
        let back = PnmImage::from_tensor(&img.to_tensor::<f32>()).unwrap();
        assert_eq!(back, img);
    }
}

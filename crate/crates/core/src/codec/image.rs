//! 8-bit grayscale images and binary PGM/PPM I/O.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image must be nonempty"));
        }
        if width.checked_mul(height) != Some(pixels.len()) {
            return Err(Error::shape(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn map_pixels(&self, f: impl Fn(u8) -> u8) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Reads binary PGM (P5) or PPM (P6). Color input is reduced to luma
    /// with integer BT.601 weights. Maxvals below 255 are rescaled.
    pub fn from_pnm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos)?;
        let channels = match magic {
            b"P5" => 1,
            b"P6" => 3,
            _ => return Err(Error::malformed("expected a binary PGM (P5) or PPM (P6) file")),
        };
        let width = parse_usize(next_token(bytes, &mut pos)?)?;
        let height = parse_usize(next_token(bytes, &mut pos)?)?;
        let maxval = parse_usize(next_token(bytes, &mut pos)?)?;
        if maxval == 0 || maxval > 255 {
            return Err(Error::malformed(format!("unsupported maxval {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let count = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(channels))
            .ok_or_else(|| Error::malformed("image dimensions overflow"))?;
        let raster = bytes.get(pos..pos + count).ok_or(Error::Truncated)?;
        let scale = |v: u8| -> u8 {
            if maxval == 255 {
                v
            } else {
                ((v as usize * 255 + maxval / 2) / maxval).min(255) as u8
            }
        };
        let pixels = if channels == 1 {
            raster.iter().map(|&v| scale(v)).collect()
        } else {
            raster
                .chunks_exact(3)
                .map(|c| luma_bt601(scale(c[0]), scale(c[1]), scale(c[2])))
                .collect()
        };
        Self::new(width, height, pixels)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_pnm(&std::fs::read(path)?)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

/// `(77R + 150G + 29B + 128) >> 8`
pub fn luma_bt601(r: u8, g: u8, b: u8) -> u8 {
    ((77 * r as u32 + 150 * g as u32 + 29 * b as u32 + 128) >> 8) as u8
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            None => return Err(Error::Truncated),
            Some(b'#') => {
                while let Some(&c) = bytes.get(*pos) {
                    *pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            }
            Some(c) if c.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
        }
    }
    let start = *pos;
    while let Some(c) = bytes.get(*pos) {
        if c.is_ascii_whitespace() {
            break;
        }
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn parse_usize(token: &[u8]) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::malformed("bad number in image header"))
}

//! Distortion and rate measures.

use super::bitstream::Bitstream;
use super::image::GrayImage;
use crate::error::{Error, Result};

pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let e = x as f64 - y as f64;
            e * e
        })
        .sum();
    Ok(sum / a.pixel_count() as f64)
}

/// Peak signal-to-noise ratio for 8-bit samples; `+∞` for identical images.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / e).log10())
}

/// Serialized bits (header included) per pixel of `img`.
pub fn bpp(bs: &Bitstream, img: &GrayImage) -> f64 {
    bs.total_bits() as f64 / img.pixel_count() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let a = GrayImage::filled(8, 8, 100).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = GrayImage::filled(8, 8, 101).unwrap();
        assert!((psnr(&a, &b).unwrap() - 48.1308).abs() < 1e-3);
        let c = GrayImage::from_fn(8, 8, |x, y| if (x + y) % 2 == 0 { 102 } else { 98 }).unwrap();
        assert!((mse(&a, &c).unwrap() - 4.0).abs() < 1e-12);
        assert!((psnr(&a, &c).unwrap() - 42.1102).abs() < 1e-3);
        assert!(psnr(&a, &GrayImage::filled(4, 8, 0).unwrap()).is_err());
    }
}

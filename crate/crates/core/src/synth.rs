//! Deterministic synthetic grayscale images.
//!
//! Smooth illumination, piecewise-constant shapes with hard edges, an
//! oriented texture patch and mild sensor noise, all drawn from a seeded
//! generator. Stand-ins for photographic test corpora.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::codec::GrayImage;
use crate::error::Result;

enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disc { cx: f64, cy: f64, r: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
        }
    }
}

pub fn synthetic_image(width: usize, height: usize, seed: u64) -> Result<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);

    let base = rng.gen_range(70.0..170.0);
    let gx = rng.gen_range(-60.0..60.0) / w.max(1.0);
    let gy = rng.gen_range(-60.0..60.0) / h.max(1.0);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(5.0..25.0),
                rng.gen_range(0.5..3.0) / w.max(1.0),
                rng.gen_range(0.5..3.0) / h.max(1.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();

    let shape_count = rng.gen_range(4..9);
    let shapes: Vec<(Shape, f64)> = (0..shape_count)
        .map(|_| {
            let shape = if rng.gen_bool(0.5) {
                let x0 = rng.gen_range(0.0..w);
                let y0 = rng.gen_range(0.0..h);
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.gen_range(0.1..0.5) * w,
                    y1: y0 + rng.gen_range(0.1..0.5) * h,
                }
            } else {
                Shape::Disc {
                    cx: rng.gen_range(0.0..w),
                    cy: rng.gen_range(0.0..h),
                    r: rng.gen_range(0.05..0.25) * w.min(h),
                }
            };
            (shape, rng.gen_range(-70.0..70.0))
        })
        .collect();

    let tex_x0 = rng.gen_range(0.0..w * 0.6);
    let tex_y0 = rng.gen_range(0.0..h * 0.6);
    let texture = Shape::Rect {
        x0: tex_x0,
        y0: tex_y0,
        x1: tex_x0 + 0.4 * w,
        y1: tex_y0 + 0.4 * h,
    };
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let period = rng.gen_range(3.0..9.0);
    let tex_amp = rng.gen_range(10.0..30.0);
    let noise = Normal::new(0.0, 2.0).unwrap();

    GrayImage::from_fn(width, height, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let mut v = base + gx * xf + gy * yf;
        for &(amp, fx, fy, phase) in &waves {
            v += amp * (std::f64::consts::TAU * (fx * xf + fy * yf) + phase).sin();
        }
        for (shape, delta) in &shapes {
            if shape.contains(xf, yf) {
                v += delta;
            }
        }
        if texture.contains(xf, yf) {
            let t = xf * angle.cos() + yf * angle.sin();
            v += tex_amp * (std::f64::consts::TAU * t / period).sin();
        }
        v += noise.sample(&mut rng);
        v.round().clamp(0.0, 255.0) as u8
    })
}

/// `count` images with seeds `seed, seed + 1, …`.
pub fn synthetic_corpus(count: usize, width: usize, height: usize, seed: u64) -> Result<Vec<GrayImage>> {
    (0..count)
        .map(|i| synthetic_image(width, height, seed.wrapping_add(i as u64)))
        .collect()
}

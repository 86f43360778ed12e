//! Non-overlapping block partition with per-block mean removal.

use nalgebra::DMatrix;

use super::image::GrayImage;
use crate::error::{Error, Result};

/// Blocks in raster order. Each block vector is stored column-major within
/// the block (`index = x·p + y`). Partial blocks at the right and bottom
/// edges are filled by edge replication.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub cols: usize,
    pub rows: usize,
    pub width: usize,
    pub height: usize,
    /// Block means.
    pub dc: Vec<f64>,
    /// N×P mean-removed block vectors, one column per block.
    pub residuals: DMatrix<f64>,
}

impl PatchGrid {
    pub fn patch_count(&self) -> usize {
        self.cols * self.rows
    }

    pub fn dim(&self) -> usize {
        self.patch_size * self.patch_size
    }
}

pub fn grid_shape(width: usize, height: usize, patch_size: usize) -> (usize, usize) {
    (width.div_ceil(patch_size), height.div_ceil(patch_size))
}

pub fn to_patches(img: &GrayImage, patch_size: usize) -> Result<PatchGrid> {
    if patch_size == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    let (w, h) = (img.width(), img.height());
    let (cols, rows) = grid_shape(w, h, patch_size);
    let n = patch_size * patch_size;
    let mut residuals = DMatrix::zeros(n, cols * rows);
    let mut dc = Vec::with_capacity(cols * rows);
    for by in 0..rows {
        for bx in 0..cols {
            let p = by * cols + bx;
            let mut col = residuals.column_mut(p);
            for x in 0..patch_size {
                let sx = (bx * patch_size + x).min(w - 1);
                for y in 0..patch_size {
                    let sy = (by * patch_size + y).min(h - 1);
                    col[x * patch_size + y] = img.get(sx, sy) as f64;
                }
            }
            let mean = col.sum() / n as f64;
            col.add_scalar_mut(-mean);
            dc.push(mean);
        }
    }
    Ok(PatchGrid {
        patch_size,
        cols,
        rows,
        width: w,
        height: h,
        dc,
        residuals,
    })
}

/// Writes block vectors plus offsets back into an image of the given size,
/// rounding and clamping to 8 bits and cropping the edge padding.
pub fn assemble(
    blocks: &DMatrix<f64>,
    offsets: &[f64],
    patch_size: usize,
    width: usize,
    height: usize,
) -> Result<GrayImage> {
    let (cols, rows) = grid_shape(width, height, patch_size);
    if blocks.ncols() != cols * rows || offsets.len() != cols * rows || blocks.nrows() != patch_size * patch_size {
        return Err(Error::shape("block matrix does not match the image grid"));
    }
    let mut pixels = vec![0u8; width * height];
    for by in 0..rows {
        for bx in 0..cols {
            let p = by * cols + bx;
            let col = blocks.column(p);
            for x in 0..patch_size {
                let px = bx * patch_size + x;
                if px >= width {
                    break;
                }
                for y in 0..patch_size {
                    let py = by * patch_size + y;
                    if py >= height {
                        break;
                    }
                    pixels[py * width + px] = to_pixel(col[x * patch_size + y] + offsets[p]);
                }
            }
        }
    }
    GrayImage::new(width, height, pixels)
}

pub fn to_pixel(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Inverse of [`to_patches`] for unmodified residuals.
pub fn from_patches(grid: &PatchGrid) -> Result<GrayImage> {
    assemble(&grid.residuals, &grid.dc, grid.patch_size, grid.width, grid.height)
}

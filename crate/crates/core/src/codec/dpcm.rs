//! Differential coding of block means.
//!
//! Each rounded block mean is predicted by the rounded average of its
//! causal neighbours (left, top, top-left, top-right) that exist; the first
//! block predicts 128.

use super::patches::PatchGrid;
use crate::error::{Error, Result};

/// Rounded block means, clamped to the 8-bit range.
pub fn dc_levels(grid: &PatchGrid) -> Vec<i32> {
    grid.dc.iter().map(|d| d.round().clamp(0.0, 255.0) as i32).collect()
}

fn predict(levels: &[i32], cols: usize, p: usize) -> i32 {
    let (bx, by) = (p % cols, p / cols);
    let mut sum = 0i64;
    let mut count = 0i64;
    let mut take = |q: usize| {
        sum += levels[q] as i64;
        count += 1;
    };
    if bx > 0 {
        take(p - 1);
    }
    if by > 0 {
        take(p - cols);
        if bx > 0 {
            take(p - cols - 1);
        }
        if bx + 1 < cols {
            take(p - cols + 1);
        }
    }
    if count == 0 {
        return 128;
    }
    // round half away from zero; levels are nonnegative
    ((2 * sum + count) / (2 * count)) as i32
}

pub fn dpcm_encode_levels(levels: &[i32], cols: usize) -> Vec<i32> {
    (0..levels.len())
        .map(|p| levels[p] - predict(levels, cols, p))
        .collect()
}

pub fn dc_dpcm_encode(grid: &PatchGrid) -> Vec<i32> {
    dpcm_encode_levels(&dc_levels(grid), grid.cols)
}

pub fn dc_dpcm_decode(residuals: &[i32], cols: usize) -> Result<Vec<i32>> {
    if cols == 0 && !residuals.is_empty() {
        return Err(Error::invalid("grid has zero columns"));
    }
    let mut levels = Vec::with_capacity(residuals.len());
    for (p, r) in residuals.iter().enumerate() {
        let v = predict(&levels, cols, p) + r;
        levels.push(v);
    }
    Ok(levels)
}

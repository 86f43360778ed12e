//! Uniform mid-tread scalar quantizer.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerConfig {
    step: f64,
}

impl QuantizerConfig {
    pub fn new(step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::invalid(format!("quantizer step must be positive, got {step}")));
        }
        Ok(Self { step })
    }

    pub fn step(&self) -> f64 {
        self.step
    }
}

/// `round(c/Δ)`, halves rounded away from zero.
pub fn quantize(coeffs: &[f64], q: QuantizerConfig) -> Vec<i32> {
    coeffs.iter().map(|c| (c / q.step).round() as i32).collect()
}

pub fn dequantize(levels: &[i32], q: QuantizerConfig) -> Vec<f64> {
    levels.iter().map(|&l| l as f64 * q.step).collect()
}

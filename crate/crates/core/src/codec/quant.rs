//! Parameter-free quantization between sigmoid latents and 16-QAM levels.
//!
//! `[0, 1]` is cut into quarters mapped to `-3, -1, 1, 3`; dequantization
//! returns the bin centre. Consecutive latent values pair into one complex
//! symbol (even index in-phase, odd index quadrature).

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::phy::{levels_to_symbol, slice_level, QAM16_SCALE};

/// Sigmoid outputs of the encoder, patch-major (`n_patches × latent`).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBlock {
    pub values: Vec<f64>,
}

/// Quantized latents, one level per value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedBlock {
    pub levels: Vec<i8>,
}

#[inline]
pub fn quantize_value(v: f64) -> i8 {
    if v < 0.25 {
        -3
    } else if v < 0.5 {
        -1
    } else if v < 0.75 {
        1
    } else {
        3
    }
}

#[inline]
pub fn level_center(level: i8) -> f64 {
    (level as f64 + 4.0) / 8.0
}

pub fn quantize(l: &LatentBlock) -> Result<QuantizedBlock> {
    let mut levels = Vec::with_capacity(l.values.len());
    for (i, &v) in l.values.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange(format!(
                "latent {i} = {v} outside [0, 1]"
            )));
        }
        levels.push(quantize_value(v));
    }
    Ok(QuantizedBlock { levels })
}

pub fn dequantize(q: &QuantizedBlock) -> Result<LatentBlock> {
    let mut values = Vec::with_capacity(q.levels.len());
    for (i, &lv) in q.levels.iter().enumerate() {
        if !matches!(lv, -3 | -1 | 1 | 3) {
            return Err(Error::OutOfRange(format!(
                "level {i} = {lv} not a 16-QAM level"
            )));
        }
        values.push(level_center(lv));
    }
    Ok(LatentBlock { values })
}

impl QuantizedBlock {
    /// Unit-energy complex symbols, two levels each.
    pub fn to_symbols(&self) -> Result<Vec<Complex64>> {
        if !self.levels.len().is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "odd number of levels ({}) cannot pair into symbols",
                self.levels.len()
            )));
        }
        Ok(self
            .levels
            .chunks_exact(2)
            .map(|p| levels_to_symbol(p[0], p[1]))
            .collect())
    }

    /// Hard per-axis decision back to levels.
    pub fn from_symbols(symbols: &[Complex64]) -> Self {
        let mut levels = Vec::with_capacity(symbols.len() * 2);
        for s in symbols {
            levels.push(slice_level(s.re / QAM16_SCALE));
            levels.push(slice_level(s.im / QAM16_SCALE));
        }
        Self { levels }
    }
}

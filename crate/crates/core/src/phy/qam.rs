//! Gray-mapped 16-QAM.
//!
//! Each axis carries two bits: `00 → -3`, `01 → -1`, `11 → +1`, `10 → +3`.
//! The first bit pair drives the in-phase axis, the second the quadrature
//! axis, and both are scaled by `1/√10` for unit mean energy.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const QAM16_SCALE: f64 = 0.316_227_766_016_837_94; // 1/sqrt(10)
pub const LEVELS: [i8; 4] = [-3, -1, 1, 3];

#[inline]
pub fn bits_to_level(b0: u8, b1: u8) -> i8 {
    match (b0, b1) {
        (0, 0) => -3,
        (0, 1) => -1,
        (1, 1) => 1,
        _ => 3,
    }
}

#[inline]
pub fn level_to_bits(level: i8) -> (u8, u8) {
    match level {
        -3 => (0, 0),
        -1 => (0, 1),
        1 => (1, 1),
        _ => (1, 0),
    }
}

/// Nearest level on the unscaled axis (decision thresholds at -2, 0, 2).
#[inline]
pub fn slice_level(v: f64) -> i8 {
    if v < -2.0 {
        -3
    } else if v < 0.0 {
        -1
    } else if v < 2.0 {
        1
    } else {
        3
    }
}

#[inline]
pub fn levels_to_symbol(i: i8, q: i8) -> Complex64 {
    Complex64::new(i as f64 * QAM16_SCALE, q as f64 * QAM16_SCALE)
}

pub fn map_qam16(bits: &[u8]) -> Result<Vec<Complex64>> {
    if !bits.len().is_multiple_of(4) {
        return Err(Error::InvalidInput(format!(
            "16-QAM needs a multiple of 4 bits, got {}",
            bits.len()
        )));
    }
    Ok(bits
        .chunks_exact(4)
        .map(|b| levels_to_symbol(bits_to_level(b[0], b[1]), bits_to_level(b[2], b[3])))
        .collect())
}

/// Hard nearest-neighbour decision.
pub fn demap_qam16(symbols: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(symbols.len() * 4);
    for s in symbols {
        let (a, b) = level_to_bits(slice_level(s.re / QAM16_SCALE));
        let (c, d) = level_to_bits(slice_level(s.im / QAM16_SCALE));
        out.extend_from_slice(&[a, b, c, d]);
    }
    out
}

/// Max-log bit LLRs, positive favouring bit 0. `noise_var` is the complex
/// noise variance of each symbol.
pub fn demap_qam16_llr(symbols: &[Complex64], noise_var: f64) -> Vec<f64> {
    let n0 = noise_var.max(1e-300);
    let axis = |v: f64| -> [f64; 2] {
        let mut best = [[f64::INFINITY; 2]; 2];
        for &l in &LEVELS {
            let d = (v - l as f64 * QAM16_SCALE).powi(2);
            let (b0, b1) = level_to_bits(l);
            best[0][b0 as usize] = best[0][b0 as usize].min(d);
            best[1][b1 as usize] = best[1][b1 as usize].min(d);
        }
        [
            (best[0][1] - best[0][0]) / n0,
            (best[1][1] - best[1][0]) / n0,
        ]
    };
    let mut out = Vec::with_capacity(symbols.len() * 4);
    for s in symbols {
        out.extend_from_slice(&axis(s.re));
        out.extend_from_slice(&axis(s.im));
    }
    out
}

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Complementary error function (Chebyshev fit, fractional error below 1.2e-7).
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t
        * (-z * z - 1.265_512_23
            + t * (1.000_023_68
                + t * (0.374_091_96
                    + t * (0.096_784_18
                        + t * (-0.186_288_06
                            + t * (0.278_868_07
                                + t * (-1.135_203_98
                                    + t * (1.488_515_87
                                        + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
            .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Exact bit error rate of Gray 16-QAM over AWGN at the given Eb/N0 (linear).
///
/// With `d = sqrt(4/5 · Eb/N0)` the half-spacing in per-axis noise standard
/// deviations, the sign bit errs with `½[Q(d) + Q(3d)]` and the inner/outer
/// bit with `½[2Q(d) + Q(3d) − Q(5d)]`, so
/// `BER = ¾Q(d) + ½Q(3d) − ¼Q(5d)`.
pub fn qam16_ber_awgn(ebn0: f64) -> f64 {
    let d = (0.8 * ebn0).sqrt();
    0.75 * q_function(d) + 0.5 * q_function(3.0 * d) - 0.25 * q_function(5.0 * d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_bits_map_to_corner() {
        let s = map_qam16(&[0, 0, 0, 0]).unwrap()[0];
        assert!((s - Complex64::new(-3.0, -3.0) * QAM16_SCALE).norm() < 1e-15);
    }

    #[test]
    fn constellation_unit_energy() {
        let bits: Vec<u8> = (0..16u8)
            .flat_map(|v| (0..4).map(move |i| (v >> (3 - i)) & 1))
            .collect();
        let syms = map_qam16(&bits).unwrap();
        let e = syms.iter().map(|s| s.norm_sqr()).sum::<f64>() / 16.0;
        assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gray_neighbours_differ_by_one_bit() {
        for w in LEVELS.windows(2) {
            let (a0, a1) = level_to_bits(w[0]);
            let (b0, b1) = level_to_bits(w[1]);
            assert_eq!((a0 ^ b0) + (a1 ^ b1), 1);
        }
    }

    #[test]
    fn rejects_partial_symbols() {
        assert!(map_qam16(&[0, 1, 1]).is_err());
    }

    #[test]
    fn llr_signs_match_hard_decision() {
        let bits = vec![0, 1, 1, 0, 1, 1, 0, 0];
        let syms = map_qam16(&bits).unwrap();
        let llr = demap_qam16_llr(&syms, 0.1);
        let hard: Vec<u8> = llr.iter().map(|&l| (l < 0.0) as u8).collect();
        assert_eq!(hard, bits);
    }

    #[test]
    fn erfc_reference_values() {
        // erfc(0)=1, erfc(1)=0.157299207050285, erfc(2)=0.004677734981047
        assert!((erfc(0.0) - 1.0).abs() < 1e-7);
        assert!((erfc(1.0) - 0.157_299_207_050_285).abs() < 1e-7);
        assert!((erfc(2.0) - 0.004_677_734_981_047).abs() / 0.004_677_734_981_047 < 1e-6);
        assert!((erfc(-1.0) - 1.842_700_792_949_715).abs() < 1e-7);
    }
}

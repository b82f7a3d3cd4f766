//! Prototype frame: a 600-sample preamble, one header OFDM symbol and 40
//! data OFDM symbols on the 256-point layout (13,720 samples in total).
//!
//! The preamble is a 256-sample pseudo-noise segment sent twice followed by
//! 88 silent guard samples. The header carries 16 metadata bits, each
//! repeated four times, as BPSK on the first 64 data subcarriers.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::phy::{
    ls_estimate, ls_estimate_multi, ofdm_demodulate, ofdm_modulate, zf_detect, CsiReport,
    OfdmConfig,
};
use crate::rng::NoiseRng;

pub const PN_LEN: usize = 256;
pub const SYNC_GUARD: usize = 88;
pub const SYNC_LEN: usize = 2 * PN_LEN + SYNC_GUARD;
pub const DATA_SYMBOLS: usize = 40;
pub const HEADER_BITS: usize = 16;
pub const HEADER_REPEAT: usize = 4;
/// Prototype sample rate in samples per second.
pub const SAMPLE_RATE: f64 = 1e6;
/// Normalized preamble metric needed to declare a frame.
pub const SYNC_THRESHOLD: f64 = 0.5;
const PN_SEED: u64 = 0x5345_4d4c_5053_594e;

pub fn frame_config() -> OfdmConfig {
    OfdmConfig::icp256()
}

pub fn frame_len() -> usize {
    SYNC_LEN + (DATA_SYMBOLS + 1) * frame_config().symbol_len()
}

pub fn frame_capacity() -> usize {
    DATA_SYMBOLS * frame_config().data_subcarriers
}

pub fn frames_for_symbols(n: usize) -> usize {
    n.div_ceil(frame_capacity()).max(1)
}

/// Frame duration in seconds, with or without the preamble.
pub fn frame_duration(include_sync: bool) -> f64 {
    let ofdm = (DATA_SYMBOLS + 1) * frame_config().symbol_len();
    (ofdm + if include_sync { SYNC_LEN } else { 0 }) as f64 / SAMPLE_RATE
}

/// 16-QAM payload bits per frame over the frame duration.
pub fn effective_data_rate_bps(include_sync: bool) -> f64 {
    (frame_capacity() * 4) as f64 / frame_duration(include_sync)
}

/// Unit-power QPSK pseudo-noise segment.
pub fn pn_segment() -> Vec<Complex64> {
    let mut rng = NoiseRng::new(PN_SEED);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..PN_LEN)
        .map(|_| {
            let re = if rng.bit() == 1 { s } else { -s };
            let im = if rng.bit() == 1 { s } else { -s };
            Complex64::new(re, im)
        })
        .collect()
}

pub fn preamble() -> Vec<Complex64> {
    let pn = pn_segment();
    let mut p = Vec::with_capacity(SYNC_LEN);
    p.extend_from_slice(&pn);
    p.extend_from_slice(&pn);
    p.resize(SYNC_LEN, Complex64::new(0.0, 0.0));
    p
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameMeta {
    /// 4 bits.
    pub payload_type: u8,
    /// 4 bits.
    pub mr_index: u8,
    pub frame_seq: u8,
}

impl FrameMeta {
    pub fn to_bits(&self) -> Result<[u8; HEADER_BITS]> {
        if self.payload_type > 15 || self.mr_index > 15 {
            return Err(Error::OutOfRange(format!(
                "header fields {self:?} exceed 4 bits"
            )));
        }
        let word = ((self.payload_type as u16) << 12)
            | ((self.mr_index as u16) << 8)
            | self.frame_seq as u16;
        let mut bits = [0u8; HEADER_BITS];
        for (i, b) in bits.iter_mut().enumerate() {
            *b = ((word >> (15 - i)) & 1) as u8;
        }
        Ok(bits)
    }

    pub fn from_bits(bits: &[u8; HEADER_BITS]) -> Self {
        let word = bits.iter().fold(0u16, |acc, &b| (acc << 1) | b as u16);
        Self {
            payload_type: (word >> 12) as u8,
            mr_index: ((word >> 8) & 0xF) as u8,
            frame_seq: (word & 0xFF) as u8,
        }
    }
}

fn header_symbols(meta: &FrameMeta, cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    let bits = meta.to_bits()?;
    let mut s = vec![Complex64::new(0.0, 0.0); cfg.data_subcarriers];
    for r in 0..HEADER_REPEAT {
        for (i, &b) in bits.iter().enumerate() {
            s[r * HEADER_BITS + i] = Complex64::new(if b == 0 { 1.0 } else { -1.0 }, 0.0);
        }
    }
    Ok(s)
}

/// Preamble, header and 40 data symbols; `syms` is zero-padded to capacity.
pub fn build_frame(syms: &[Complex64], meta: &FrameMeta) -> Result<Vec<Complex64>> {
    let cap = frame_capacity();
    if syms.len() > cap {
        return Err(Error::Capacity(format!(
            "{} symbols exceed the {cap}-symbol frame",
            syms.len()
        )));
    }
    let cfg = frame_config();
    let mut body = header_symbols(meta, &cfg)?;
    body.extend_from_slice(syms);
    body.resize(
        cfg.data_subcarriers * (DATA_SYMBOLS + 1),
        Complex64::new(0.0, 0.0),
    );
    let mut out = preamble();
    out.extend(ofdm_modulate(&body, &cfg)?);
    Ok(out)
}

/// Splits a symbol stream over as many frames as needed.
pub fn build_frames(
    syms: &[Complex64],
    payload_type: u8,
    mr_index: u8,
) -> Result<Vec<Vec<Complex64>>> {
    let n = frames_for_symbols(syms.len());
    (0..n)
        .map(|i| {
            let chunk = &syms[(i * frame_capacity()).min(syms.len())
                ..((i + 1) * frame_capacity()).min(syms.len())];
            build_frame(
                chunk,
                &FrameMeta {
                    payload_type,
                    mr_index,
                    frame_seq: i as u8,
                },
            )
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ParsedFrame {
    pub meta: FrameMeta,
    /// Equalized data symbols, full frame capacity.
    pub symbols: Vec<Complex64>,
    pub erased: Vec<bool>,
    pub csi: CsiReport,
}

/// Demodulates a frame starting at sample 0 of `samples`.
pub fn parse_frame(samples: &[Complex64]) -> Result<ParsedFrame> {
    let len = frame_len();
    if samples.len() < len {
        return Err(Error::InvalidInput(format!(
            "{} samples, frame needs {len}",
            samples.len()
        )));
    }
    let cfg = frame_config();
    let grid = ofdm_demodulate(&samples[SYNC_LEN..len], &cfg)?;
    let csi = ls_estimate_multi(&grid, &cfg)?;
    let gains = csi.data_gains(&cfg);
    let header_csi = ls_estimate(&grid.pilots(0, &cfg), &cfg)?;
    let hdr = zf_detect(&grid_data_row(&grid, &cfg, 0), &header_csi.data_gains(&cfg))?;
    let mut bits = [0u8; HEADER_BITS];
    for (i, b) in bits.iter_mut().enumerate() {
        let soft: f64 = (0..HEADER_REPEAT)
            .map(|r| hdr.symbols[r * HEADER_BITS + i].re)
            .sum();
        *b = (soft < 0.0) as u8;
    }
    let data: Vec<Complex64> = (1..=DATA_SYMBOLS)
        .flat_map(|t| grid_data_row(&grid, &cfg, t))
        .collect();
    let det = zf_detect(&data, &gains)?;
    Ok(ParsedFrame {
        meta: FrameMeta::from_bits(&bits),
        symbols: det.symbols,
        erased: det.erased,
        csi,
    })
}

fn grid_data_row(grid: &crate::phy::ReceivedGrid, cfg: &OfdmConfig, t: usize) -> Vec<Complex64> {
    let row = grid.symbol(t);
    cfg.data_positions.iter().map(|&p| row[p]).collect()
}

/// Preamble search over start offsets `0..=max_offset`: a repetition metric
/// `|P(d)|² / R(d)²` finds the coarse position, then correlation with the
/// known segment picks the exact sample. Returns `NotFound` if the metric
/// never reaches [`SYNC_THRESHOLD`].
pub fn synchronize(stream: &[Complex64], max_offset: usize) -> Result<usize> {
    if stream.len() < 2 * PN_LEN {
        return Err(Error::NotFound("stream shorter than the preamble".into()));
    }
    let last = max_offset.min(stream.len() - 2 * PN_LEN);
    let mut p: Complex64 = (0..PN_LEN)
        .map(|m| stream[m].conj() * stream[m + PN_LEN])
        .sum();
    let mut r: f64 = (0..PN_LEN).map(|m| stream[m + PN_LEN].norm_sqr()).sum();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for d in 0..=last {
        if d > 0 {
            let (a, b) = (d - 1, d - 1 + PN_LEN);
            p -= stream[a].conj() * stream[b];
            p += stream[a + PN_LEN].conj() * stream[b + PN_LEN];
            r -= stream[b].norm_sqr();
            r += stream[b + PN_LEN].norm_sqr();
        }
        let metric = if r > 1e-12 {
            p.norm_sqr() / (r * r)
        } else {
            0.0
        };
        if metric > best.0 {
            best = (metric, d);
        }
    }
    if best.0 < SYNC_THRESHOLD {
        return Err(Error::NotFound(format!(
            "no preamble (best metric {:.3} below {SYNC_THRESHOLD})",
            best.0.max(0.0)
        )));
    }
    let pn = pn_segment();
    let lo = best.1.saturating_sub(PN_LEN / 2);
    let hi = (best.1 + PN_LEN / 2).min(last);
    let mut fine = (f64::NEG_INFINITY, best.1);
    for d in lo..=hi {
        let c: Complex64 = (0..PN_LEN)
            .map(|m| pn[m].conj() * (stream[d + m] + stream[d + m + PN_LEN]))
            .sum();
        if c.norm_sqr() > fine.0 {
            fine = (c.norm_sqr(), d);
        }
    }
    Ok(fine.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::map_qam16;

    #[test]
    fn frame_geometry() {
        assert_eq!(frame_len(), 13_720);
        assert_eq!(frame_capacity(), 5000);
        assert_eq!(frames_for_symbols(9408), 2);
        assert_eq!(frames_for_symbols(768), 1);
        let r13 = effective_data_rate_bps(false);
        let r14 = effective_data_rate_bps(true);
        assert!((r13 - 20_000.0 / 0.01312).abs() < 1e-6);
        assert!((r14 - 20_000.0 / 0.01372).abs() < 1e-6);
    }

    #[test]
    fn build_parse_round_trip() {
        let syms = map_qam16(&NoiseRng::new(4).bits(4 * 5000)).unwrap();
        let meta = FrameMeta {
            payload_type: 3,
            mr_index: 7,
            frame_seq: 200,
        };
        let f = build_frame(&syms, &meta).unwrap();
        assert_eq!(f.len(), 13_720);
        let parsed = parse_frame(&f).unwrap();
        assert_eq!(parsed.meta, meta);
        for (a, b) in syms.iter().zip(&parsed.symbols) {
            assert!((a - b).norm() < 1e-9);
        }
        assert!(build_frame(&vec![Complex64::new(0.0, 0.0); 5001], &meta).is_err());
    }

    #[test]
    fn sync_clean_offset() {
        let f = build_frame(
            &[],
            &FrameMeta {
                payload_type: 0,
                mr_index: 0,
                frame_seq: 0,
            },
        )
        .unwrap();
        assert_eq!(synchronize(&f, 100).unwrap(), 0);
        let mut s = vec![Complex64::new(0.0, 0.0); 1234];
        s.extend_from_slice(&f);
        assert_eq!(synchronize(&s, 5000).unwrap(), 1234);
    }

    #[test]
    fn sync_rejects_noise() {
        let mut rng = NoiseRng::new(5);
        let s: Vec<Complex64> = (0..8000).map(|_| rng.complex_gaussian(1.0)).collect();
        assert!(matches!(synchronize(&s, 5000), Err(Error::NotFound(_))));
    }
}

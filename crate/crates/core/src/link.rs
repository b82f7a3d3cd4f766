//! One-shot symbol transport over an OFDM link.
//!
//! A stream of unit-energy symbols is laid onto data subcarriers, optionally
//! ranked by a channel probe and power-scaled, passed through a channel
//! realization, estimated, zero-forced and put back in stream order.

use num_complex::Complex64;

use crate::channel::{apply, apply_time_domain, realize, ChannelRealization, ChannelSpec};
use crate::error::{Error, Result};
use crate::phy::{
    build_grid, ls_estimate, ls_estimate_multi, ofdm_demodulate, ofdm_modulate, zf_detect,
    CsiReport, OfdmConfig, ReceivedGrid,
};
use crate::power::{order_subchannels, PowerAllocator, SubchannelOrder};
use crate::rng::{split_seed, NoiseRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsiMode {
    /// Receiver and transmitter know the true response.
    Perfect,
    /// Least-squares from pilots.
    LeastSquares,
}

/// How stream symbols are assigned to (OFDM symbol, data subcarrier) slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    /// Stream index `s` goes to symbol `s / K`, position `s % K`.
    Natural,
    /// Stream index `s` goes to rank `s / n_sym` of symbol `s % n_sym`, so
    /// the head of the stream lands on the strongest subchannels.
    RankOrdered,
}

#[derive(Clone, Debug)]
pub struct LinkConfig {
    pub ofdm: OfdmConfig,
    pub channel: ChannelSpec,
    pub csi: CsiMode,
    /// Run the time-domain path (IFFT, CP, convolution, FFT) instead of the
    /// per-subcarrier equivalent.
    pub time_domain: bool,
}

impl LinkConfig {
    pub fn new(ofdm: OfdmConfig, channel: ChannelSpec) -> Self {
        Self {
            ofdm,
            channel,
            csi: CsiMode::LeastSquares,
            time_domain: false,
        }
    }

    pub fn with_csi(mut self, csi: CsiMode) -> Self {
        self.csi = csi;
        self
    }
}

#[derive(Clone, Debug)]
pub struct LinkOutput {
    /// Equalized symbols, stream order, power scaling removed.
    pub symbols: Vec<Complex64>,
    pub erased: Vec<bool>,
    /// Receiver estimate used for equalization.
    pub csi: CsiReport,
    /// Rank order shared by both ends.
    pub order: SubchannelOrder,
    pub realization: ChannelRealization,
    pub isi_warning: bool,
}

const PROBE_STREAM: u64 = 0x7072_6f62;

/// Slot index (symbol-major) of every stream position.
pub fn slot_map(n: usize, k: usize, placement: Placement, order: &SubchannelOrder) -> Vec<usize> {
    let n_sym = n.div_ceil(k).max(1);
    (0..n)
        .map(|s| match placement {
            Placement::Natural => s,
            Placement::RankOrdered => {
                let rank = s / n_sym;
                let t = s % n_sym;
                t * k + order.order[rank]
            }
        })
        .collect()
}

fn true_csi(ch: &ChannelRealization, cfg: &OfdmConfig) -> CsiReport {
    CsiReport {
        gains: ch.response_at(&cfg.used_bins),
        snr_db: ch.spec.snr_db,
    }
}

/// Passes full grids through the channel and returns used-bin observations.
fn pass(
    grid_tx: &[Complex64],
    cfg: &OfdmConfig,
    ch: &ChannelRealization,
    time_domain: bool,
    noise: &mut NoiseRng,
) -> Result<(ReceivedGrid, bool)> {
    let n_sym = grid_tx.len() / cfg.fft_size;
    if time_domain {
        let fft = crate::phy::UnitaryFft::new(cfg.fft_size);
        let mut samples = Vec::with_capacity(n_sym * cfg.symbol_len());
        for row in grid_tx.chunks_exact(cfg.fft_size) {
            let mut buf = row.to_vec();
            fft.inverse(&mut buf);
            samples.extend_from_slice(&buf[cfg.fft_size - cfg.cp_len..]);
            samples.extend_from_slice(&buf);
        }
        let out = apply_time_domain(&samples, ch, cfg.cp_len, noise);
        Ok((ofdm_demodulate(&out.samples, cfg)?, out.isi_warning))
    } else {
        let rx = apply(grid_tx, ch, noise)?;
        let mut values = Vec::with_capacity(n_sym * cfg.used_subcarriers());
        for row in rx.chunks_exact(cfg.fft_size) {
            values.extend(cfg.used_bins.iter().map(|&b| row[b]));
        }
        Ok((
            ReceivedGrid {
                n_symbols: n_sym,
                used: cfg.used_subcarriers(),
                values,
            },
            false,
        ))
    }
}

/// Rank order from a pilot-only probe through the same realization (both
/// ends then share it), or from the true response under perfect CSI.
pub fn probe_order(
    link: &LinkConfig,
    ch: &ChannelRealization,
    seed: u64,
) -> Result<SubchannelOrder> {
    let cfg = &link.ofdm;
    let csi = match link.csi {
        CsiMode::Perfect => true_csi(ch, cfg),
        CsiMode::LeastSquares => {
            let zeros = vec![Complex64::new(0.0, 0.0); cfg.data_subcarriers];
            let grid = build_grid(&zeros, cfg)?;
            let mut noise = NoiseRng::new(split_seed(seed, PROBE_STREAM, 1));
            let (rx, _) = pass(&grid, cfg, ch, link.time_domain, &mut noise)?;
            ls_estimate(&rx.pilots(0, cfg), cfg)?
        }
    };
    order_subchannels(&csi, cfg)
}

/// Transmits `stream` once. `allocator` of `None` means unit gain.
pub fn transmit(
    stream: &[Complex64],
    link: &LinkConfig,
    placement: Placement,
    allocator: Option<&PowerAllocator>,
    seed: u64,
) -> Result<LinkOutput> {
    let cfg = &link.ofdm;
    let ch = realize(&link.channel, cfg.fft_size, seed)?;
    transmit_over(stream, link, &ch, placement, allocator, seed)
}

/// As [`transmit`] with a given realization.
pub fn transmit_over(
    stream: &[Complex64],
    link: &LinkConfig,
    ch: &ChannelRealization,
    placement: Placement,
    allocator: Option<&PowerAllocator>,
    seed: u64,
) -> Result<LinkOutput> {
    let cfg = &link.ofdm;
    let k = cfg.data_subcarriers;
    if stream.is_empty() {
        return Err(Error::InvalidInput("empty symbol stream".into()));
    }
    let needs_order = placement == Placement::RankOrdered || allocator.is_some();
    let order = if needs_order {
        probe_order(link, ch, seed)?
    } else {
        SubchannelOrder::natural(k)
    };
    let n_sym = stream.len().div_ceil(k);
    let slots = slot_map(stream.len(), k, placement, &order);
    let mut block = vec![Complex64::new(0.0, 0.0); n_sym * k];
    for (s, &slot) in slots.iter().enumerate() {
        block[slot] = stream[s];
    }
    if let Some(a) = allocator {
        block = a.allocate(&block, &order)?;
    }
    let grid = build_grid(&block, cfg)?;
    let mut noise = ch.noise_rng();
    let (rx, isi_warning) = pass(&grid, cfg, ch, link.time_domain, &mut noise)?;
    let csi = match link.csi {
        CsiMode::Perfect => true_csi(ch, cfg),
        CsiMode::LeastSquares => ls_estimate_multi(&rx, cfg)?,
    };
    let det = zf_detect(&rx.data(cfg), &csi.data_gains(cfg))?;
    let mut eq = det.symbols;
    if let Some(a) = allocator {
        eq = a.invert(&eq, &order)?;
    }
    Ok(LinkOutput {
        symbols: slots.iter().map(|&slot| eq[slot]).collect(),
        erased: slots.iter().map(|&slot| det.erased[slot]).collect(),
        csi,
        order,
        realization: ch.clone(),
        isi_warning,
    })
}

/// Time-domain samples for a symbol stream with natural placement (used by
/// the framing layer and the emulator client).
pub fn modulate_stream(stream: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    let n_sym = stream.len().div_ceil(cfg.data_subcarriers).max(1);
    let mut block = stream.to_vec();
    block.resize(n_sym * cfg.data_subcarriers, Complex64::new(0.0, 0.0));
    ofdm_modulate(&block, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::map_qam16;

    fn stream(n: usize, seed: u64) -> Vec<Complex64> {
        map_qam16(&NoiseRng::new(seed).bits(4 * n)).unwrap()
    }

    #[test]
    fn noiseless_awgn_round_trip() {
        let link = LinkConfig::new(OfdmConfig::sim64(), ChannelSpec::noiseless());
        let s = stream(100, 1);
        for placement in [Placement::Natural, Placement::RankOrdered] {
            let out = transmit(&s, &link, placement, None, 7).unwrap();
            for (a, b) in s.iter().zip(&out.symbols) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn time_domain_matches_frequency_domain_within_cp() {
        let spec = ChannelSpec::multipath(5, f64::INFINITY);
        let mut link = LinkConfig::new(OfdmConfig::sim64(), spec).with_csi(CsiMode::Perfect);
        let s = stream(110, 2);
        let a = transmit(&s, &link, Placement::Natural, None, 3).unwrap();
        link.time_domain = true;
        let b = transmit(&s, &link, Placement::Natural, None, 3).unwrap();
        assert!(!b.isi_warning);
        for ((x, y), z) in a.symbols.iter().zip(&b.symbols).zip(&s) {
            assert!((x - y).norm() < 1e-9);
            assert!((x - z).norm() < 1e-9);
        }
    }

    #[test]
    fn rank_ordered_puts_head_on_best_subchannel() {
        let order = SubchannelOrder {
            order: vec![2, 0, 1],
            power: vec![0.5, 0.1, 2.0],
        };
        // 7 symbols over K = 3 -> 3 OFDM symbols
        let m = slot_map(7, 3, Placement::RankOrdered, &order);
        assert_eq!(&m[..3], &[2, 5, 8]);
        assert_eq!(&m[3..6], &[0, 3, 6]);
        assert_eq!(m[6], 1);
    }

    #[test]
    fn allocator_round_trip_noiseless() {
        let spec = ChannelSpec::multipath(5, f64::INFINITY);
        let link = LinkConfig::new(OfdmConfig::sim64(), spec).with_csi(CsiMode::Perfect);
        let ch = realize(&spec, 64, 9).unwrap();
        let order = probe_order(&link, &ch, 9).unwrap();
        let alloc = PowerAllocator::matched(&order).unwrap();
        let s = stream(55 * 3, 4);
        let out = transmit(&s, &link, Placement::RankOrdered, Some(&alloc), 9).unwrap();
        for (a, b) in s.iter().zip(&out.symbols) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}

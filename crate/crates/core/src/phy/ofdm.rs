use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{shape_err, Error, Result};

/// Subcarrier layout of one OFDM system.
///
/// Used subcarriers are listed in ascending frequency. With no guard band
/// every FFT bin is used in natural order; otherwise the used band sits
/// symmetrically around DC, which is left empty and counts as a guard.
/// Pilots form a comb over the used band; the remaining used positions carry
/// data in ascending frequency order.
#[derive(Clone, Debug, PartialEq)]
pub struct OfdmConfig {
    pub fft_size: usize,
    pub data_subcarriers: usize,
    pub pilot_subcarriers: usize,
    pub guard_subcarriers: usize,
    pub cp_len: usize,
    pub pilot_value: Complex64,
    /// FFT bin of each used position.
    pub used_bins: Vec<usize>,
    /// Used positions carrying pilots.
    pub pilot_positions: Vec<usize>,
    /// Used positions carrying data.
    pub data_positions: Vec<usize>,
}

impl OfdmConfig {
    pub fn new(fft_size: usize, data: usize, pilots: usize, cp_len: usize) -> Result<Self> {
        if data + pilots > fft_size || data == 0 || pilots == 0 {
            return Err(Error::Config(format!(
                "{data} data + {pilots} pilot subcarriers do not fit a {fft_size}-point FFT"
            )));
        }
        if cp_len >= fft_size {
            return Err(Error::Config(format!(
                "cp {cp_len} must be shorter than fft {fft_size}"
            )));
        }
        let used = data + pilots;
        let guard = fft_size - used;
        let used_bins: Vec<usize> = if guard == 0 {
            (0..fft_size).collect()
        } else {
            if used >= fft_size {
                return Err(Error::Config("no room for the DC guard".into()));
            }
            let below = used / 2;
            let above = used - below;
            (0..below)
                .map(|i| fft_size - below + i)
                .chain(1..=above)
                .collect()
        };
        let spacing = used / pilots;
        let offset = (used - 1 - (pilots - 1) * spacing) / 2;
        let pilot_positions: Vec<usize> = (0..pilots).map(|i| offset + i * spacing).collect();
        let data_positions: Vec<usize> =
            (0..used).filter(|u| !pilot_positions.contains(u)).collect();
        Ok(Self {
            fft_size,
            data_subcarriers: data,
            pilot_subcarriers: pilots,
            guard_subcarriers: guard,
            cp_len,
            pilot_value: Complex64::new(1.0, 1.0) / 2f64.sqrt(),
            used_bins,
            pilot_positions,
            data_positions,
        })
    }

    /// 64-point simulation layout: 55 data, 9 comb pilots, CP 16.
    pub fn sim64() -> Self {
        Self::new(64, 55, 9, 16).expect("valid layout")
    }

    /// 256-point prototype layout: 125 data, 25 pilots, 106 guards, CP 64.
    pub fn icp256() -> Self {
        Self::new(256, 125, 25, 64).expect("valid layout")
    }

    pub fn used_subcarriers(&self) -> usize {
        self.used_bins.len()
    }

    pub fn symbol_len(&self) -> usize {
        self.fft_size + self.cp_len
    }

    /// FFT bins of the pilot comb.
    pub fn pilot_bins(&self) -> Vec<usize> {
        self.pilot_positions
            .iter()
            .map(|&p| self.used_bins[p])
            .collect()
    }

    pub fn data_bins(&self) -> Vec<usize> {
        self.data_positions
            .iter()
            .map(|&p| self.used_bins[p])
            .collect()
    }

    pub fn ofdm_symbols_for(&self, n_data_symbols: usize) -> usize {
        n_data_symbols.div_ceil(self.data_subcarriers)
    }
}

/// Forward/inverse unitary FFT pair for one size.
#[derive(Clone)]
pub struct UnitaryFft {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl UnitaryFft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            scale: 1.0 / (n as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.fwd.process(buf);
        buf.iter_mut().for_each(|v| *v *= self.scale);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.inv.process(buf);
        buf.iter_mut().for_each(|v| *v *= self.scale);
    }
}

/// Frequency-domain grid, `n_symbols × fft_size`, before the IFFT.
pub fn build_grid(syms: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    if !syms.len().is_multiple_of(cfg.data_subcarriers) {
        return Err(Error::InvalidInput(format!(
            "{} symbols is not a multiple of {} data subcarriers",
            syms.len(),
            cfg.data_subcarriers
        )));
    }
    let n_sym = syms.len() / cfg.data_subcarriers;
    let mut grid = vec![Complex64::new(0.0, 0.0); n_sym * cfg.fft_size];
    for (t, chunk) in syms.chunks_exact(cfg.data_subcarriers).enumerate() {
        let row = &mut grid[t * cfg.fft_size..(t + 1) * cfg.fft_size];
        for &p in &cfg.pilot_positions {
            row[cfg.used_bins[p]] = cfg.pilot_value;
        }
        for (&p, &s) in cfg.data_positions.iter().zip(chunk) {
            row[cfg.used_bins[p]] = s;
        }
    }
    Ok(grid)
}

/// Inserts pilots, applies the unitary IFFT and prepends the cyclic prefix.
pub fn ofdm_modulate(syms: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    let grid = build_grid(syms, cfg)?;
    let fft = UnitaryFft::new(cfg.fft_size);
    let mut out = Vec::with_capacity(grid.len() / cfg.fft_size * cfg.symbol_len());
    for row in grid.chunks_exact(cfg.fft_size) {
        let mut buf = row.to_vec();
        fft.inverse(&mut buf);
        out.extend_from_slice(&buf[cfg.fft_size - cfg.cp_len..]);
        out.extend_from_slice(&buf);
    }
    Ok(out)
}

/// Received values on the used subcarriers, `n_symbols × used`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceivedGrid {
    pub n_symbols: usize,
    pub used: usize,
    pub values: Vec<Complex64>,
}

impl ReceivedGrid {
    pub fn symbol(&self, t: usize) -> &[Complex64] {
        &self.values[t * self.used..(t + 1) * self.used]
    }

    pub fn pilots(&self, t: usize, cfg: &OfdmConfig) -> Vec<Complex64> {
        let row = self.symbol(t);
        cfg.pilot_positions.iter().map(|&p| row[p]).collect()
    }

    /// Data-position values of every symbol, concatenated.
    pub fn data(&self, cfg: &OfdmConfig) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.n_symbols * cfg.data_subcarriers);
        for t in 0..self.n_symbols {
            let row = self.symbol(t);
            out.extend(cfg.data_positions.iter().map(|&p| row[p]));
        }
        out
    }

    /// Pilot observations of every symbol, `n_symbols × pilots`.
    pub fn all_pilots(&self, cfg: &OfdmConfig) -> Vec<Vec<Complex64>> {
        (0..self.n_symbols).map(|t| self.pilots(t, cfg)).collect()
    }
}

/// Strips the cyclic prefix, applies the unitary FFT and keeps used bins.
pub fn ofdm_demodulate(samples: &[Complex64], cfg: &OfdmConfig) -> Result<ReceivedGrid> {
    let sl = cfg.symbol_len();
    if !samples.len().is_multiple_of(sl) {
        return Err(Error::InvalidInput(format!(
            "{} samples is not a multiple of the {sl}-sample OFDM symbol",
            samples.len()
        )));
    }
    let fft = UnitaryFft::new(cfg.fft_size);
    let n_symbols = samples.len() / sl;
    let used = cfg.used_subcarriers();
    let mut values = Vec::with_capacity(n_symbols * used);
    for sym in samples.chunks_exact(sl) {
        let mut buf = sym[cfg.cp_len..].to_vec();
        fft.forward(&mut buf);
        values.extend(cfg.used_bins.iter().map(|&b| buf[b]));
    }
    Ok(ReceivedGrid {
        n_symbols,
        used,
        values,
    })
}

/// Per-used-subcarrier channel estimate plus an overall SNR figure.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiReport {
    pub gains: Vec<Complex64>,
    pub snr_db: f64,
}

impl CsiReport {
    /// Estimates at the data positions, in data order.
    pub fn data_gains(&self, cfg: &OfdmConfig) -> Vec<Complex64> {
        cfg.data_positions.iter().map(|&p| self.gains[p]).collect()
    }
}

fn interpolate(cfg: &OfdmConfig, at_pilots: &[Complex64]) -> Vec<Complex64> {
    let used = cfg.used_subcarriers();
    let pp = &cfg.pilot_positions;
    let mut out = vec![Complex64::new(0.0, 0.0); used];
    for (u, slot) in out.iter_mut().enumerate() {
        *slot = if u <= pp[0] {
            at_pilots[0]
        } else if u >= pp[pp.len() - 1] {
            at_pilots[pp.len() - 1]
        } else {
            let j = pp.partition_point(|&p| p <= u) - 1;
            let t = (u - pp[j]) as f64 / (pp[j + 1] - pp[j]) as f64;
            at_pilots[j] * (1.0 - t) + at_pilots[j + 1] * t
        };
    }
    out
}

/// Least-squares estimate from one symbol's pilots, linearly interpolated
/// across data positions and held constant beyond the outermost pilots.
///
/// `snr_db` is left as NaN; a single observation cannot separate noise
/// from channel (see [`ls_estimate_multi`]).
pub fn ls_estimate(rx_pilots: &[Complex64], cfg: &OfdmConfig) -> Result<CsiReport> {
    if rx_pilots.len() != cfg.pilot_subcarriers {
        return shape_err(cfg.pilot_subcarriers, rx_pilots.len());
    }
    if cfg.pilot_value.norm() == 0.0 {
        return Err(Error::Config("pilot value is zero".into()));
    }
    let at: Vec<Complex64> = rx_pilots.iter().map(|y| y / cfg.pilot_value).collect();
    Ok(CsiReport {
        gains: interpolate(cfg, &at),
        snr_db: f64::NAN,
    })
}

/// Least-squares estimate averaged over several symbols with a constant
/// channel; the spread across symbols yields the noise variance and hence
/// the overall SNR.
pub fn ls_estimate_multi(grid: &ReceivedGrid, cfg: &OfdmConfig) -> Result<CsiReport> {
    if grid.n_symbols == 0 {
        return Err(Error::InvalidInput("no OFDM symbols".into()));
    }
    if cfg.pilot_value.norm() == 0.0 {
        return Err(Error::Config("pilot value is zero".into()));
    }
    let obs = grid.all_pilots(cfg);
    let n = obs.len() as f64;
    let np = cfg.pilot_subcarriers;
    let mut mean = vec![Complex64::new(0.0, 0.0); np];
    for row in &obs {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / cfg.pilot_value;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let snr_db = if obs.len() >= 2 {
        let mut var = 0.0;
        for row in &obs {
            for (m, v) in mean.iter().zip(row) {
                var += (v / cfg.pilot_value - m).norm_sqr();
            }
        }
        // per-observation noise variance scaled back to received units
        let noise = var / ((n - 1.0) * np as f64) * cfg.pilot_value.norm_sqr();
        let signal = mean.iter().map(|m| m.norm_sqr()).sum::<f64>() / np as f64;
        10.0 * (signal / noise.max(1e-300)).log10()
    } else {
        f64::NAN
    };
    Ok(CsiReport {
        gains: interpolate(cfg, &mean),
        snr_db,
    })
}

/// Equalized symbols; `erased[i]` marks bins whose estimate was ~0.
#[derive(Clone, Debug, PartialEq)]
pub struct Detected {
    pub symbols: Vec<Complex64>,
    pub erased: Vec<bool>,
}

pub const ERASURE_THRESHOLD: f64 = 1e-12;

/// Zero-forcing: per-bin division by the estimate of that data subcarrier.
/// `rx_data` is `n_symbols × data_subcarriers`, in data order.
pub fn zf_detect(rx_data: &[Complex64], data_gains: &[Complex64]) -> Result<Detected> {
    let k = data_gains.len();
    if k == 0 || !rx_data.len().is_multiple_of(k) {
        return shape_err(format!("multiple of {k}"), rx_data.len());
    }
    let mut symbols = Vec::with_capacity(rx_data.len());
    let mut erased = Vec::with_capacity(rx_data.len());
    for row in rx_data.chunks_exact(k) {
        for (y, h) in row.iter().zip(data_gains) {
            if h.norm() < ERASURE_THRESHOLD {
                symbols.push(Complex64::new(0.0, 0.0));
                erased.push(true);
            } else {
                symbols.push(y / h);
                erased.push(false);
            }
        }
    }
    Ok(Detected { symbols, erased })
}

/// `10·log10(Σ|h_k x_k|² / (K σ²))`.
pub fn measure_snr(tx: &[Complex64], h: &[Complex64], noise_var: f64) -> Result<f64> {
    if noise_var <= 0.0 {
        return Err(Error::OutOfRange(format!(
            "noise variance {noise_var} must be positive"
        )));
    }
    if tx.len() != h.len() {
        return shape_err(tx.len(), h.len());
    }
    if tx.is_empty() {
        return Err(Error::InvalidInput("empty block".into()));
    }
    let p: f64 = tx.iter().zip(h).map(|(x, h)| (h * x).norm_sqr()).sum();
    Ok(10.0 * (p / (tx.len() as f64 * noise_var)).log10())
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

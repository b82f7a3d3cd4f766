//! Seedable stochastic channels.
//!
//! A [`ChannelRealization`] is drawn once per image and stays constant while
//! the image is transmitted; noise comes from a separate per-use stream.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{shape_err, Error, Result};
use crate::phy::{db_to_linear, UnitaryFft};
use crate::rng::{split_seed, NoiseRng, GENERATOR_ID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Awgn,
    RayleighFlat,
    Multipath,
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::RayleighFlat => "rayleigh_flat",
            ChannelKind::Multipath => "multipath",
        })
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "awgn" => Ok(ChannelKind::Awgn),
            "rayleigh" | "rayleigh_flat" => Ok(ChannelKind::RayleighFlat),
            "multipath" => Ok(ChannelKind::Multipath),
            other => Err(Error::Config(format!("unknown channel kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    pub num_paths: usize,
    /// Exponential power-delay-profile constant: `p_l ∝ exp(-l / decay)`.
    pub decay: f64,
    /// `+inf` means noiseless.
    pub snr_db: f64,
}

impl ChannelSpec {
    pub fn awgn(snr_db: f64) -> Self {
        Self {
            kind: ChannelKind::Awgn,
            num_paths: 1,
            decay: 1.0,
            snr_db,
        }
    }

    pub fn rayleigh_flat(snr_db: f64) -> Self {
        Self {
            kind: ChannelKind::RayleighFlat,
            num_paths: 1,
            decay: 1.0,
            snr_db,
        }
    }

    pub fn multipath(num_paths: usize, snr_db: f64) -> Self {
        Self {
            kind: ChannelKind::Multipath,
            num_paths,
            decay: 1.0,
            snr_db,
        }
    }

    pub fn noiseless() -> Self {
        Self::awgn(f64::INFINITY)
    }

    pub fn with_snr(mut self, snr_db: f64) -> Self {
        self.snr_db = snr_db;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_paths == 0 {
            return Err(Error::Config("num_paths must be at least 1".into()));
        }
        if self.kind != ChannelKind::Multipath && self.num_paths != 1 {
            return Err(Error::Config(format!(
                "{} channels have one path",
                self.kind
            )));
        }
        if !(self.decay > 0.0) {
            return Err(Error::Config(format!(
                "decay {} must be positive",
                self.decay
            )));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("snr_db is NaN".into()));
        }
        Ok(())
    }

    /// Normalized power delay profile.
    pub fn power_profile(&self) -> Vec<f64> {
        match self.kind {
            ChannelKind::Multipath => {
                let raw: Vec<f64> = (0..self.num_paths)
                    .map(|l| (-(l as f64) / self.decay).exp())
                    .collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|p| p / total).collect()
            }
            _ => vec![1.0],
        }
    }

    /// Noise variance giving `snr_db` for unit-power input.
    pub fn noise_variance(&self) -> f64 {
        if self.snr_db == f64::INFINITY {
            0.0
        } else {
            1.0 / db_to_linear(self.snr_db)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub spec: ChannelSpec,
    pub taps: Vec<Complex64>,
    pub freq_response: Vec<Complex64>,
    pub noise_variance: f64,
    pub seed: u64,
}

const TAP_STREAM: u64 = 0x7461_7073;
const NOISE_STREAM: u64 = 0x6e6f_6973;

/// Draws taps and derives the per-subcarrier response over `fft_size` bins.
pub fn realize(spec: &ChannelSpec, fft_size: usize, seed: u64) -> Result<ChannelRealization> {
    spec.validate()?;
    let mut rng = NoiseRng::new(split_seed(seed, TAP_STREAM, 0));
    let taps: Vec<Complex64> = match spec.kind {
        ChannelKind::Awgn => vec![Complex64::new(1.0, 0.0)],
        _ => spec
            .power_profile()
            .into_iter()
            .map(|p| rng.complex_gaussian(p))
            .collect(),
    };
    Ok(ChannelRealization {
        spec: *spec,
        freq_response: frequency_response(&taps, fft_size),
        taps,
        noise_variance: spec.noise_variance(),
        seed,
    })
}

/// DFT of the zero-padded taps: `H_k = Σ_l h_l e^{-j2πkl/N}`.
pub fn frequency_response(taps: &[Complex64], fft_size: usize) -> Vec<Complex64> {
    (0..fft_size)
        .map(|k| {
            taps.iter()
                .enumerate()
                .map(|(l, &t)| {
                    t * Complex64::from_polar(
                        1.0,
                        -2.0 * std::f64::consts::PI * (k * l % fft_size) as f64 / fft_size as f64,
                    )
                })
                .sum()
        })
        .collect()
}

impl ChannelRealization {
    /// Fresh noise stream for this realization.
    pub fn noise_rng(&self) -> NoiseRng {
        NoiseRng::new(split_seed(self.seed, NOISE_STREAM, 0))
    }

    pub fn with_noise_variance(mut self, noise_variance: f64) -> Self {
        self.noise_variance = noise_variance;
        self
    }

    /// Channel memory in samples.
    pub fn memory(&self) -> usize {
        self.taps.len().saturating_sub(1)
    }

    /// Response at the given FFT bins.
    pub fn response_at(&self, bins: &[usize]) -> Vec<Complex64> {
        bins.iter().map(|&b| self.freq_response[b]).collect()
    }

    /// Audit dump: metadata comment lines then `tap,re,im` rows.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# generator={GENERATOR_ID}\n# seed={}\n# kind={}\n# noise_variance={:e}\ntap,re,im\n",
            self.seed, self.spec.kind, self.noise_variance
        );
        for (l, t) in self.taps.iter().enumerate() {
            s.push_str(&format!("{l},{:e},{:e}\n", t.re, t.im));
        }
        s
    }
}

/// `y = h ⊙ x + z` with `h` repeating every `gains.len()` symbols.
pub fn apply_gains(
    x: &[Complex64],
    gains: &[Complex64],
    noise_variance: f64,
    noise: &mut NoiseRng,
) -> Result<Vec<Complex64>> {
    if gains.is_empty() || !x.len().is_multiple_of(gains.len()) {
        return shape_err(format!("multiple of {}", gains.len()), x.len());
    }
    let mut y = Vec::with_capacity(x.len());
    for row in x.chunks_exact(gains.len()) {
        for (xv, h) in row.iter().zip(gains) {
            let mut v = h * xv;
            if noise_variance > 0.0 {
                v += noise.complex_gaussian(noise_variance);
            }
            y.push(v);
        }
    }
    Ok(y)
}

/// Frequency-domain channel over full FFT grids (`n × fft_size`).
pub fn apply(
    x: &[Complex64],
    ch: &ChannelRealization,
    noise: &mut NoiseRng,
) -> Result<Vec<Complex64>> {
    apply_gains(x, &ch.freq_response, ch.noise_variance, noise)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeDomainOutput {
    pub samples: Vec<Complex64>,
    /// Set when the channel memory exceeds the cyclic prefix.
    pub isi_warning: bool,
}

/// Linear convolution with the taps (truncated to the input length) plus
/// white noise of the realization's variance per sample.
pub fn apply_time_domain(
    samples: &[Complex64],
    ch: &ChannelRealization,
    cp_len: usize,
    noise: &mut NoiseRng,
) -> TimeDomainOutput {
    let isi_warning = ch.memory() > cp_len;
    if isi_warning {
        log::warn!(
            "channel memory {} exceeds cyclic prefix {cp_len}; expect inter-symbol interference",
            ch.memory()
        );
    }
    let mut out = Vec::with_capacity(samples.len());
    for n in 0..samples.len() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (l, t) in ch.taps.iter().enumerate() {
            if l > n {
                break;
            }
            acc += t * samples[n - l];
        }
        if ch.noise_variance > 0.0 {
            acc += noise.complex_gaussian(ch.noise_variance);
        }
        out.push(acc);
    }
    TimeDomainOutput {
        samples: out,
        isi_warning,
    }
}

/// Unitary-FFT helper so callers can move between domains without planning.
pub fn to_frequency(samples: &[Complex64]) -> Vec<Complex64> {
    let fft = UnitaryFft::new(samples.len());
    let mut buf = samples.to_vec();
    fft.forward(&mut buf);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn awgn_realization_is_identity() {
        let ch = realize(&ChannelSpec::awgn(10.0), 64, 1).unwrap();
        assert_eq!(ch.taps, vec![Complex64::new(1.0, 0.0)]);
        assert!(ch
            .freq_response
            .iter()
            .all(|h| *h == Complex64::new(1.0, 0.0)));
        assert!((ch.noise_variance - 0.1).abs() < 1e-15);
    }

    #[test]
    fn multipath_profile_normalized() {
        let spec = ChannelSpec::multipath(3, 10.0);
        let p = spec.power_profile();
        let z: f64 = [0.0f64, -1.0, -2.0].iter().map(|v| v.exp()).sum();
        for (l, v) in p.iter().enumerate() {
            assert!((v - (-(l as f64)).exp() / z).abs() < 1e-15);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(ChannelSpec::multipath(0, 1.0).validate().is_err());
        let mut s = ChannelSpec::awgn(1.0);
        s.num_paths = 3;
        assert!(s.validate().is_err());
        assert!(ChannelSpec::awgn(f64::NAN).validate().is_err());
        assert_eq!(
            "rayleigh".parse::<ChannelKind>().unwrap(),
            ChannelKind::RayleighFlat
        );
        assert!("foo".parse::<ChannelKind>().is_err());
    }

    #[test]
    fn noiseless_apply_exact() {
        let mut rng = NoiseRng::new(0);
        let ch = realize(&ChannelSpec::noiseless(), 4, 0).unwrap();
        let x: Vec<Complex64> = (0..8)
            .map(|i| Complex64::new(i as f64, -(i as f64)))
            .collect();
        assert_eq!(apply(&x, &ch, &mut rng).unwrap(), x);
        let ch = realize(&ChannelSpec::multipath(3, f64::INFINITY), 4, 5).unwrap();
        let y = apply(&x, &ch, &mut rng).unwrap();
        for (i, (a, b)) in y.iter().zip(&x).enumerate() {
            let h = ch.freq_response[i % 4];
            assert!((a / h - b).norm() < 1e-12);
        }
        assert!(apply(&x[..7], &ch, &mut rng).is_err());
    }

    #[test]
    fn realization_deterministic() {
        let s = ChannelSpec::multipath(5, 3.0);
        assert_eq!(realize(&s, 64, 9).unwrap(), realize(&s, 64, 9).unwrap());
        assert_ne!(
            realize(&s, 64, 9).unwrap().taps,
            realize(&s, 64, 10).unwrap().taps
        );
    }

    #[test]
    fn single_tap_time_domain_is_scaled_copy() {
        let mut ch = realize(&ChannelSpec::rayleigh_flat(f64::INFINITY), 8, 4).unwrap();
        ch.noise_variance = 0.0;
        let x: Vec<Complex64> = (0..20).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let out = apply_time_domain(&x, &ch, 0, &mut ch.noise_rng());
        assert!(!out.isi_warning);
        for (a, b) in out.samples.iter().zip(&x) {
            assert!((a - ch.taps[0] * b).norm() < 1e-12);
        }
    }

    #[test]
    fn csv_dump_lists_taps() {
        let ch = realize(&ChannelSpec::multipath(3, 5.0), 16, 2).unwrap();
        let csv = ch.to_csv();
        assert!(csv.contains("seed=2"));
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 4);
    }
}

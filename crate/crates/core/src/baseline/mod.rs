//! Separable reference chain: block-DCT source coding at a fixed bit budget,
//! per-block CRC-32, rate-1/2 convolutional coding and 16-QAM over the same
//! link and symbol budget as the learned codec. Any failed CRC discards the
//! whole image.

mod bits;
mod conv;
mod crc;
mod dct;

pub use bits::*;
pub use conv::*;
pub use crc::*;
pub use dct::*;

use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::link::{transmit, LinkConfig, LinkOutput, Placement};
use crate::phy::{demap_qam16, demap_qam16_llr, map_qam16};

/// Largest information block (payload plus CRC) handed to the encoder.
pub const MAX_INFO_BITS: usize = 1440;
pub const CRC_BITS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub symbols: usize,
    pub blocks: usize,
    /// Information bits per block, CRC included.
    pub info_bits: usize,
    /// Source bits per block.
    pub payload_bits: usize,
    /// Zero bits appended after the last coded block.
    pub pad_bits: usize,
}

impl BlockLayout {
    /// Fewest blocks whose information size stays within
    /// [`MAX_INFO_BITS`] while the coded total fits `4 × symbols` bits.
    pub fn for_symbols(symbols: usize) -> Result<Self> {
        let coded = 4 * symbols;
        for blocks in 1..=coded.max(1) {
            let per = coded / (2 * blocks);
            if per < TAIL + CRC_BITS + 1 {
                break;
            }
            let info = per - TAIL;
            if info <= MAX_INFO_BITS {
                return Ok(Self {
                    symbols,
                    blocks,
                    info_bits: info,
                    payload_bits: info - CRC_BITS,
                    pad_bits: coded - blocks * 2 * per,
                });
            }
        }
        Err(Error::Capacity(format!(
            "{symbols} symbols cannot carry a coded block"
        )))
    }

    pub fn source_bits(&self) -> usize {
        self.blocks * self.payload_bits
    }

    pub fn coded_bits(&self) -> usize {
        self.blocks * 2 * (self.info_bits + TAIL)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Hard,
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineStatus {
    Ok,
    Failed,
}

impl fmt::Display for BaselineStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineStatus::Ok => "ok",
            BaselineStatus::Failed => "failed",
        })
    }
}

/// Source bits and coded symbols for one image.
pub fn baseline_encode(
    img: &ImageTensor,
    layout: &BlockLayout,
) -> Result<(CompressedImage, Vec<Complex64>)> {
    let c = dct_compress(img, layout.source_bits())?;
    let mut coded = Vec::with_capacity(4 * layout.symbols);
    for chunk in c.bits.chunks(layout.payload_bits) {
        coded.extend(conv_encode(&append_crc(chunk)));
    }
    coded.resize(4 * layout.symbols, 0);
    Ok((c, map_qam16(&coded)?))
}

#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    /// Delivered image: the decode on success, all zeros on failure.
    pub image: ImageTensor,
    /// Best-effort decode of the received stream regardless of CRCs.
    pub raw_image: ImageTensor,
    pub status: BaselineStatus,
    pub failed_blocks: usize,
}

/// Channel decoding, CRC checks and source decoding of equalized symbols.
/// `noise_var` gives the post-equalization noise variance per symbol (only
/// used for soft decisions).
pub fn baseline_decode(
    symbols: &[Complex64],
    noise_var: &[f64],
    layout: &BlockLayout,
    shape: (usize, usize, usize),
    decision: Decision,
) -> Result<BaselineOutcome> {
    if symbols.len() != layout.symbols {
        return crate::error::shape_err(layout.symbols, symbols.len());
    }
    let per = 2 * (layout.info_bits + TAIL);
    let mut source = Vec::with_capacity(layout.source_bits());
    let mut failed_blocks = 0;
    let hard = demap_qam16(symbols);
    let llr: Vec<f64> = match decision {
        Decision::Hard => Vec::new(),
        Decision::Soft => symbols
            .iter()
            .zip(noise_var)
            .flat_map(|(s, &v)| demap_qam16_llr(std::slice::from_ref(s), v))
            .collect(),
    };
    for b in 0..layout.blocks {
        let range = b * per..(b + 1) * per;
        let info = match decision {
            Decision::Hard => viterbi_hard(&hard[range]),
            Decision::Soft => viterbi_soft(&llr[range]),
        };
        match check_crc(&info) {
            Some(payload) => source.extend_from_slice(payload),
            None => {
                failed_blocks += 1;
                source.extend_from_slice(&info[..layout.payload_bits]);
            }
        }
    }
    let (h, w, c) = shape;
    let raw_image = dct_decompress_lenient(&source, h, w, c);
    let (image, status) = if failed_blocks == 0 {
        match dct_decompress(&CompressedImage {
            quality: 0,
            bits: source,
        }) {
            Ok(img) if img.height() == h && img.width() == w && img.channels() == c => {
                (img, BaselineStatus::Ok)
            }
            _ => (ImageTensor::zeros(h, w, c), BaselineStatus::Failed),
        }
    } else {
        (ImageTensor::zeros(h, w, c), BaselineStatus::Failed)
    };
    Ok(BaselineOutcome {
        image,
        raw_image,
        status,
        failed_blocks,
    })
}

/// Full baseline over a link with natural placement and no power shaping.
pub fn run_baseline(
    img: &ImageTensor,
    link: &LinkConfig,
    symbol_budget: usize,
    decision: Decision,
    seed: u64,
) -> Result<(BaselineOutcome, LinkOutput)> {
    let layout = BlockLayout::for_symbols(symbol_budget)?;
    let (_, symbols) = baseline_encode(img, &layout)?;
    let out = transmit(&symbols, link, Placement::Natural, None, seed)?;
    let noise = post_eq_noise(&out, link);
    let outcome = baseline_decode(
        &out.symbols,
        &noise,
        &layout,
        (img.height(), img.width(), img.channels()),
        decision,
    )?;
    Ok((outcome, out))
}

/// `σ² / |ĥ_k|²` for every stream symbol under natural placement.
fn post_eq_noise(out: &LinkOutput, link: &LinkConfig) -> Vec<f64> {
    let gains = out.csi.data_gains(&link.ofdm);
    let k = gains.len();
    let sigma2 = out.realization.noise_variance;
    (0..out.symbols.len())
        .map(|s| sigma2 / gains[s % k].norm_sqr().max(1e-300))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelSpec;
    use crate::phy::OfdmConfig;

    #[test]
    fn layouts_for_both_image_sizes() {
        let a = BlockLayout::for_symbols(768).unwrap();
        assert_eq!((a.blocks, a.info_bits, a.pad_bits), (2, 762, 0));
        assert_eq!(a.coded_bits(), 3072);
        let b = BlockLayout::for_symbols(9408).unwrap();
        assert_eq!((b.blocks, b.info_bits), (14, 1338));
        assert_eq!(b.coded_bits(), 4 * 9408);
        assert!(BlockLayout::for_symbols(5).is_err());
    }

    #[test]
    fn noiseless_link_delivers() {
        let img = ImageTensor::from_fn(64, 64, 3, |y, x, c| (y * 3 + x + c * 40) as u8);
        let link = LinkConfig::new(OfdmConfig::sim64(), ChannelSpec::noiseless());
        for d in [Decision::Hard, Decision::Soft] {
            let (o, _) = run_baseline(&img, &link, 768, d, 1).unwrap();
            assert_eq!(o.status, BaselineStatus::Ok);
            assert_eq!(o.image, o.raw_image);
        }
    }

    #[test]
    fn hopeless_link_fails_to_zero() {
        let img = ImageTensor::from_fn(64, 64, 3, |y, x, _| (y + x) as u8);
        let link = LinkConfig::new(OfdmConfig::sim64(), ChannelSpec::awgn(-5.0));
        let (o, _) = run_baseline(&img, &link, 768, Decision::Hard, 3).unwrap();
        assert_eq!(o.status, BaselineStatus::Failed);
        assert!(o.image.pixels().iter().all(|&p| p == 0));
    }
}

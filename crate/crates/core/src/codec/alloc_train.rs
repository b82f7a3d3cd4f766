//! Learning per-rank power gains with the codec frozen.
//!
//! Hard decisions have no useful derivative, so the gain gradient comes from
//! the expected dequantized value of each received level under Gaussian
//! post-equalization noise, differentiated with respect to the gain.

use rayon::prelude::*;

use super::model::*;
use super::quant::{level_center, LatentBlock};
use super::send_latents;
use super::train::{random_mask, Sample};
use crate::channel::{realize, ChannelSpec};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::link::{CsiMode, LinkConfig, Placement};
use crate::phy::OfdmConfig;
use crate::power::{non_increasing, order_by_gain, project_gains, PowerAllocator, SubchannelOrder};
use crate::rng::{split_seed, NoiseRng};

#[derive(Clone, Debug)]
pub struct AllocTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_mask_ratio: f64,
    pub channel: ChannelSpec,
    pub ofdm: OfdmConfig,
    /// Smallest gain allowed before renormalisation.
    pub floor: f64,
    pub seed: u64,
}

impl Default for AllocTrainConfig {
    fn default() -> Self {
        Self {
            steps: 150,
            lr: 2e-2,
            batch_size: 8,
            max_mask_ratio: crate::preprocess::MAX_MASK_RATIO,
            channel: ChannelSpec::multipath(3, 10.0),
            ofdm: OfdmConfig::sim64(),
            floor: 1e-2,
            seed: 0,
        }
    }
}

const THRESHOLDS: [f64; 3] = [-2.0, 0.0, 2.0];

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `∂E[dequant(slice(v + n))]/∂g` for `n ~ N(0, s²)` where `s ∝ 1/g`.
/// `v` is the transmitted level and `s` the per-axis noise std in level
/// units.
pub fn expected_value_gain_derivative(level: i8, s: f64, g: f64) -> f64 {
    if s <= 0.0 || g <= 0.0 {
        return 0.0;
    }
    let step = level_center(1) - level_center(-1);
    let v = level as f64;
    let acc: f64 = THRESHOLDS
        .iter()
        .map(|&t| {
            let z = (t - v) / s;
            step * std_normal_pdf(z) * z
        })
        .sum();
    -acc / g
}

/// Removes the component of `grad` that would change `(1/K)Σg²`, so a step
/// moves power between ranks instead of scaling every gain up.
pub fn tangent_project(grad: &mut [f64], gains: &[f64]) {
    let norm2: f64 = gains.iter().map(|g| g * g).sum();
    if norm2 <= 0.0 {
        return;
    }
    let radial = grad.iter().zip(gains).map(|(d, g)| d * g).sum::<f64>() / norm2;
    grad.iter_mut()
        .zip(gains)
        .for_each(|(d, g)| *d -= radial * g);
}

/// Averages gradient entries over runs of tied ranks.
pub fn pool_ties(grad: &mut [f64], order: &SubchannelOrder) {
    for r in order.tie_groups() {
        let mean = grad[r.clone()].iter().sum::<f64>() / r.len() as f64;
        grad[r].iter_mut().for_each(|g| *g = mean);
    }
}

/// Loss and `dLoss/dg_r` for one sample under perfect CSI.
fn sample_gain_gradient(
    model: &CodecModel,
    gains: &[f64],
    s: &Sample<'_>,
    link: &LinkConfig,
) -> Result<(f64, Vec<f64>)> {
    let dims = model.dims;
    let cfg = &link.ofdm;
    let k = cfg.data_subcarriers;
    let ch = realize(&link.channel, cfg.fft_size, s.seed)?;
    let h = ch.response_at(&cfg.data_bins());
    let order = order_by_gain(&h)?;
    let mut alloc = PowerAllocator::uniform(k);
    alloc.gains_by_rank = gains.to_vec();

    let grid = model.check_image(s.image)?;
    let mut x = image_to_patches(s.image, &grid);
    for (mut row, &m) in x.rows_mut().into_iter().zip(&s.mask) {
        if m == 0 {
            row.fill(0.0);
        }
    }
    let opts = PassOptions { mixing: true };
    let enc = encoder_forward(&model.params, x.clone(), &s.mask, opts);
    let l = LatentBlock {
        values: flatten(&enc.latent),
    };
    let t = send_latents(
        &l,
        &dims,
        link,
        Placement::RankOrdered,
        Some(&alloc),
        s.seed,
    )?;
    let received = unflatten(&t.latent.values, dims.n_patches, dims.latent)?;
    let dec = decoder_forward(&model.params, received, &s.mask, opts);
    let (loss, d_out) = loss_and_grad(&x, &dec.output, &s.mask, LossKind::KeptOnly)?;
    let mut scratch = CodecParams::zeros(&dims);
    let d_latent = decoder_backward(&model.params, &dec, &d_out, &mut scratch);
    let d_flat = flatten(&d_latent);

    let sigma2 = link.channel.noise_variance();
    let mut grad = vec![0.0; k];
    let n_sym = dims.symbol_count().div_ceil(k);
    for (stream_pos, &sym) in dims.significance_order().iter().enumerate() {
        let rank = stream_pos / n_sym;
        let pos = order.order[rank];
        let g = gains[rank];
        // per-axis noise std after ZF and gain inversion, in level units
        let s_axis = (sigma2 / 2.0).sqrt() / (g * h[pos].norm()) * 10f64.sqrt();
        for axis in 0..2 {
            let idx = 2 * sym + axis;
            grad[rank] +=
                d_flat[idx] * expected_value_gain_derivative(t.sent.levels[idx], s_axis, g);
        }
    }
    pool_ties(&mut grad, &order);
    Ok((loss, grad))
}

#[derive(Clone, Debug)]
pub struct AllocTrainReport {
    pub losses: Vec<f64>,
    /// `(1/K)Σg²` after each step's projection.
    pub mean_power: Vec<f64>,
}

/// Trains per-rank gains from uniform; gains stay non-increasing in rank
/// with unit mean power after every step.
pub fn train_allocator(
    model: &CodecModel,
    images: &[ImageTensor],
    cfg: &AllocTrainConfig,
) -> Result<(PowerAllocator, AllocTrainReport)> {
    if images.is_empty() {
        return Err(Error::InvalidInput("no training images".into()));
    }
    let k = cfg.ofdm.data_subcarriers;
    let link = LinkConfig::new(cfg.ofdm.clone(), cfg.channel).with_csi(CsiMode::Perfect);
    let mut gains = vec![1.0; k];
    let (mut m, mut v) = (vec![0.0; k], vec![0.0; k]);
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut rng = NoiseRng::new(split_seed(cfg.seed, 0x616c_6c6f, u64::MAX));
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut mean_power = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<Sample<'_>> = (0..cfg.batch_size)
            .map(|b| Sample {
                image: &images[rng.below(images.len())],
                mask: random_mask(model.dims.n_patches, cfg.max_mask_ratio, &mut rng),
                snr_db: cfg.channel.snr_db,
                seed: split_seed(cfg.seed, step as u64, b as u64),
            })
            .collect();
        let parts: Vec<Result<(f64, Vec<f64>)>> = batch
            .par_iter()
            .map(|s| sample_gain_gradient(model, &gains, s, &link))
            .collect();
        let mut grad = vec![0.0; k];
        let mut loss = 0.0;
        for p in parts {
            let (l, g) = p?;
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let n = batch.len() as f64;
        loss /= n;
        grad.iter_mut().for_each(|g| *g /= n);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step,
                detail: format!("allocator loss {loss}"),
            });
        }
        tangent_project(&mut grad, &gains);
        let t = (step + 1) as i32;
        for r in 0..k {
            m[r] = b1 * m[r] + (1.0 - b1) * grad[r];
            v[r] = b2 * v[r] + (1.0 - b2) * grad[r] * grad[r];
            let mh = m[r] / (1.0 - b1.powi(t));
            let vh = v[r] / (1.0 - b2.powi(t));
            gains[r] -= cfg.lr * mh / (vh.sqrt() + eps);
        }
        gains = project_gains(&gains, cfg.floor)?;
        losses.push(loss);
        mean_power.push(crate::power::mean_power(&gains));
        log::debug!("allocator step {step} loss {loss:.6}");
    }
    debug_assert!(non_increasing(&gains) == gains);
    Ok((
        PowerAllocator::learned(gains)?,
        AllocTrainReport { losses, mean_power },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_matches_finite_difference() {
        // E[value] as a function of g with s = c / g
        let c = 0.9;
        let expect = |level: i8, g: f64| {
            let s = c / g;
            let q = |z: f64| 0.5 * crate::phy::erfc(z / 2f64.sqrt());
            level_center(-3)
                + THRESHOLDS
                    .iter()
                    .map(|&t| 0.25 * q((t - level as f64) / s))
                    .sum::<f64>()
        };
        for level in [-3i8, -1, 1, 3] {
            for g in [0.5, 1.0, 1.7] {
                let h = 1e-4;
                let fd = (expect(level, g + h) - expect(level, g - h)) / (2.0 * h);
                let an = expected_value_gain_derivative(level, c / g, g);
                assert!((fd - an).abs() < 1e-5, "level {level} g {g}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn tangent_projection_is_orthogonal_to_gains() {
        let gains = [1.4, 1.0, 0.3];
        let mut grad = vec![-2.0, -1.0, -5.0];
        tangent_project(&mut grad, &gains);
        let dot: f64 = grad.iter().zip(&gains).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-12);
        let mut flat = vec![-1.0; 3];
        tangent_project(&mut flat, &[1.0; 3]);
        assert!(flat.iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn tie_pooling_flattens_groups() {
        let order = SubchannelOrder {
            order: vec![0, 1, 2],
            power: vec![1.0, 1.0, 0.5],
        };
        let mut g = vec![1.0, 3.0, 5.0];
        pool_ties(&mut g, &order);
        assert_eq!(g, vec![2.0, 2.0, 5.0]);
    }
}

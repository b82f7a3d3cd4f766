use ndarray::Array2;
use rayon::prelude::*;

use super::model::*;
use super::quant::LatentBlock;
use super::send_latents;
use crate::channel::ChannelSpec;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::link::{CsiMode, LinkConfig, Placement};
use crate::phy::OfdmConfig;
use crate::preprocess::{masked_patch_count, MAX_MASK_RATIO};
use crate::rng::{split_seed, NoiseRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Embedding and compression maps on plain reconstruction; no mask,
    /// mixing, quantization or channel.
    Reconstruction,
    /// Mixing maps only, random masks, quantization, AWGN.
    Mixing,
    /// Everything, random masks, quantization, configured channel.
    Joint,
}

impl Stage {
    fn groups(self) -> &'static [usize] {
        match self {
            Stage::Reconstruction => &ENCODER_DECODER,
            Stage::Mixing => &MIXING,
            Stage::Joint => &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11],
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub stage_steps: [usize; 3],
    pub lr: f64,
    pub fine_tune_lr: f64,
    pub batch_size: usize,
    pub max_mask_ratio: f64,
    /// Channel for the joint stage; the mixing stage uses AWGN at the same SNR.
    pub channel: ChannelSpec,
    /// When set, each batch item draws its SNR uniformly from this range.
    pub snr_range: Option<(f64, f64)>,
    pub csi: CsiMode,
    pub ofdm: OfdmConfig,
    /// Target standard deviation of each latent pre-activation after the
    /// reconstruction stage; `None` skips the re-standardization.
    pub latent_spread: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage_steps: [400, 200, 200],
            lr: 2e-4,
            fine_tune_lr: 2e-5,
            batch_size: 8,
            max_mask_ratio: MAX_MASK_RATIO,
            channel: ChannelSpec::awgn(10.0),
            snr_range: None,
            csi: CsiMode::Perfect,
            ofdm: OfdmConfig::sim64(),
            latent_spread: Some(2.0),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: CodecParams,
    pub v: CodecParams,
}

impl Adam {
    pub fn new(dims: &CodecDims) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: CodecParams::zeros(dims),
            v: CodecParams::zeros(dims),
        }
    }

    /// One update of the tensors listed in `groups`.
    pub fn update(
        &mut self,
        params: &mut CodecParams,
        grads: &CodecParams,
        lr: f64,
        groups: &[usize],
    ) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let p = params.tensors_mut();
        let m = self.m.tensors_mut();
        let v = self.v.tensors_mut();
        let g = grads.tensors();
        for &i in groups {
            ndarray::Zip::from(&mut *p[i])
                .and(&mut *m[i])
                .and(&mut *v[i])
                .and(g[i])
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }

    pub fn permute_latents(&mut self, perm: &[usize]) {
        permute_latent_channels(&mut self.m, perm);
        permute_latent_channels(&mut self.v, perm);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub stage: Stage,
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub losses: Vec<StepLoss>,
    /// Latent permutation applied after training.
    pub latent_order: Vec<usize>,
}

/// One batch item: image, patch mask, channel and noise seed.
#[derive(Clone, Debug)]
pub struct Sample<'a> {
    pub image: &'a ImageTensor,
    pub mask: Vec<u8>,
    pub snr_db: f64,
    pub seed: u64,
}

/// Random patch mask with ratio drawn uniformly from `[0, max_ratio]`.
pub fn random_mask(n: usize, max_ratio: f64, rng: &mut NoiseRng) -> Vec<u8> {
    let ratio = rng.uniform_range(0.0, max_ratio);
    let k = masked_patch_count(n, ratio).min(n.saturating_sub(1));
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let mut mask = vec![1u8; n];
    for &i in &idx[..k] {
        mask[i] = 0;
    }
    mask
}

fn masked_patches(model: &CodecModel, img: &ImageTensor, mask: &[u8]) -> Result<Array2<f64>> {
    let grid = model.check_image(img)?;
    let mut x = image_to_patches(img, &grid);
    for (mut row, &m) in x.rows_mut().into_iter().zip(mask) {
        if m == 0 {
            row.fill(0.0);
        }
    }
    Ok(x)
}

/// Everything needed to run one stage-style forward pass.
#[derive(Clone, Debug)]
pub struct PassSetup {
    pub opts: PassOptions,
    pub loss: LossKind,
    /// `None` feeds the sigmoid output straight to the decoder.
    pub link: Option<LinkConfig>,
}

impl PassSetup {
    pub fn for_stage(stage: Stage, cfg: &TrainConfig) -> Self {
        match stage {
            Stage::Reconstruction => Self {
                opts: PassOptions { mixing: false },
                loss: LossKind::Full,
                link: None,
            },
            Stage::Mixing => Self {
                opts: PassOptions { mixing: true },
                loss: LossKind::KeptOnly,
                link: Some(
                    LinkConfig::new(cfg.ofdm.clone(), ChannelSpec::awgn(cfg.channel.snr_db))
                        .with_csi(cfg.csi),
                ),
            },
            Stage::Joint => Self {
                opts: PassOptions { mixing: true },
                loss: LossKind::KeptOnly,
                link: Some(LinkConfig::new(cfg.ofdm.clone(), cfg.channel).with_csi(cfg.csi)),
            },
        }
    }
}

/// Loss and parameter gradient for one sample. Quantization uses the
/// straight-through rule: the decoder's latent gradient is handed to the
/// encoder unchanged.
pub fn sample_gradient(
    model: &CodecModel,
    s: &Sample<'_>,
    setup: &PassSetup,
) -> Result<(f64, CodecParams)> {
    let p = &model.params;
    let x = masked_patches(model, s.image, &s.mask)?;
    let enc = encoder_forward(p, x.clone(), &s.mask, setup.opts);
    let received = match &setup.link {
        None => enc.latent.clone(),
        Some(link) => {
            let mut link = link.clone();
            link.channel = link.channel.with_snr(s.snr_db);
            let l = LatentBlock {
                values: flatten(&enc.latent),
            };
            let t = send_latents(&l, &model.dims, &link, Placement::Natural, None, s.seed)?;
            unflatten(&t.latent.values, model.dims.n_patches, model.dims.latent)?
        }
    };
    let dec = decoder_forward(p, received, &s.mask, setup.opts);
    let (loss, d_out) = loss_and_grad(&x, &dec.output, &s.mask, setup.loss)?;
    let mut g = CodecParams::zeros(&model.dims);
    let d_latent = decoder_backward(p, &dec, &d_out, &mut g);
    encoder_backward(p, &enc, &d_latent, &mut g);
    Ok((loss, g))
}

/// Mean loss and gradient over a batch; per-item gradients are summed in
/// index order so results do not depend on thread scheduling.
pub fn batch_gradient(
    model: &CodecModel,
    batch: &[Sample<'_>],
    setup: &PassSetup,
) -> Result<(f64, CodecParams)> {
    let parts: Vec<Result<(f64, CodecParams)>> = batch
        .par_iter()
        .map(|s| sample_gradient(model, s, setup))
        .collect();
    let mut total = CodecParams::zeros(&model.dims);
    let mut loss = 0.0;
    for r in parts {
        let (l, g) = r?;
        loss += l;
        total.add_assign(&g);
    }
    let k = 1.0 / batch.len() as f64;
    total.scale(k);
    Ok((loss * k, total))
}

/// Mean loss over samples without updating anything.
pub fn evaluate(model: &CodecModel, samples: &[Sample<'_>], setup: &PassSetup) -> Result<f64> {
    let losses: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| sample_gradient(model, s, setup).map(|r| r.0))
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / samples.len() as f64)
}

fn draw_batch<'a>(
    images: &'a [ImageTensor],
    order: &mut Vec<usize>,
    cursor: &mut usize,
    stage: Stage,
    cfg: &TrainConfig,
    n_patches: usize,
    rng: &mut NoiseRng,
    step_seed: u64,
) -> Vec<Sample<'a>> {
    (0..cfg.batch_size)
        .map(|b| {
            if *cursor >= order.len() {
                rng.shuffle(order);
                *cursor = 0;
            }
            let image = &images[order[*cursor]];
            *cursor += 1;
            let mask = match stage {
                Stage::Reconstruction => vec![1; n_patches],
                _ => random_mask(n_patches, cfg.max_mask_ratio, rng),
            };
            let snr_db = match cfg.snr_range {
                Some((lo, hi)) => rng.uniform_range(lo, hi),
                None => cfg.channel.snr_db,
            };
            Sample {
                image,
                mask,
                snr_db,
                seed: split_seed(step_seed, b as u64, 0),
            }
        })
        .collect()
}

/// Runs `steps` updates of one stage.
pub fn train_stage(
    model: &mut CodecModel,
    adam: &mut Adam,
    images: &[ImageTensor],
    stage: Stage,
    steps: usize,
    lr: f64,
    cfg: &TrainConfig,
    report: &mut TrainReport,
) -> Result<()> {
    if images.is_empty() {
        return Err(Error::InvalidInput("no training images".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let setup = PassSetup::for_stage(stage, cfg);
    let stage_tag = stage as u64 + 1;
    let mut rng = NoiseRng::new(split_seed(cfg.seed, stage_tag, u64::MAX));
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut cursor = usize::MAX;
    for step in 0..steps {
        let step_seed = split_seed(cfg.seed, stage_tag, step as u64);
        let batch = draw_batch(
            images,
            &mut order,
            &mut cursor,
            stage,
            cfg,
            model.dims.n_patches,
            &mut rng,
            step_seed,
        );
        let (loss, grads) = batch_gradient(model, &batch, &setup)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("{stage:?} loss {loss}"),
            });
        }
        adam.update(&mut model.params, &grads, lr, stage.groups());
        if !model.params.all_finite() {
            return Err(Error::Diverged {
                step,
                detail: "non-finite parameters".into(),
            });
        }
        log::debug!("{stage:?} step {step} loss {loss:.6}");
        report.losses.push(StepLoss { stage, step, loss });
    }
    Ok(())
}

/// Pre-activation spread of each latent channel over a set of images.
pub fn measure_spread(model: &CodecModel, images: &[ImageTensor]) -> Result<Vec<f64>> {
    let ones = vec![1u8; model.dims.n_patches];
    let mut pre = Vec::with_capacity(images.len());
    for img in images {
        let x = masked_patches(model, img, &ones)?;
        pre.push(encoder_forward(&model.params, x, &ones, PassOptions { mixing: true }).pre);
    }
    Ok(latent_spread(&pre, model.dims.latent))
}

/// Mean and standard deviation of each latent pre-activation on the
/// unmixed path.
pub fn latent_moments(model: &CodecModel, images: &[ImageTensor]) -> Result<(Vec<f64>, Vec<f64>)> {
    let q = model.dims.latent;
    let ones = vec![1u8; model.dims.n_patches];
    let (mut sum, mut sq, mut n) = (vec![0.0; q], vec![0.0; q], 0usize);
    for img in images {
        let x = masked_patches(model, img, &ones)?;
        let enc = encoder_forward(&model.params, x, &ones, PassOptions { mixing: false });
        for row in enc.pre.rows() {
            for j in 0..q {
                sum[j] += row[j];
                sq[j] += row[j] * row[j];
            }
        }
        n += enc.pre.nrows();
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / n as f64 - m * m).max(0.0).sqrt())
        .collect();
    Ok((mean, std))
}

/// Three-stage schedule followed by a significance sort of the latents.
pub fn train_staged(
    model: &mut CodecModel,
    images: &[ImageTensor],
    cfg: &TrainConfig,
) -> Result<(TrainReport, Adam)> {
    let mut adam = Adam::new(&model.dims);
    let mut report = TrainReport::default();
    let stages = [Stage::Reconstruction, Stage::Mixing, Stage::Joint];
    for (i, stage) in stages.into_iter().enumerate() {
        let lr = if stage == Stage::Joint {
            cfg.fine_tune_lr
        } else {
            cfg.lr
        };
        train_stage(
            model,
            &mut adam,
            images,
            stage,
            cfg.stage_steps[i],
            lr,
            cfg,
            &mut report,
        )?;
        if let (Stage::Reconstruction, Some(target)) = (stage, cfg.latent_spread) {
            let (mean, std) = latent_moments(model, images)?;
            let scale: Vec<f64> = std.iter().map(|s| target / s.max(1e-9)).collect();
            rescale_latent_channels(&mut model.params, &mean, &scale);
            // moment estimates refer to the old coordinates
            adam = Adam {
                step: adam.step,
                ..Adam::new(&model.dims)
            };
        }
    }
    let spread = measure_spread(model, images)?;
    report.latent_order = model.sort_latents_by_significance(&spread)?;
    adam.permute_latents(&report.latent_order);
    Ok((report, adam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic_corpus;
    use crate::preprocess::MAX_MASK_RATIO;

    #[test]
    fn random_mask_keeps_a_patch() {
        let mut rng = NoiseRng::new(1);
        for n in 1..40 {
            let m = random_mask(n, MAX_MASK_RATIO, &mut rng);
            let masked = m.iter().filter(|&&b| b == 0).count();
            assert!(masked <= masked_patch_count(n, MAX_MASK_RATIO));
            assert!(m.contains(&1));
        }
    }

    #[test]
    fn adam_touches_only_listed_groups() {
        let dims = CodecDims::for_image(8, 8, 3, 4, 8, 0.25).unwrap();
        let mut p = CodecParams::zeros(&dims);
        let mut g = CodecParams::zeros(&dims);
        for t in g.tensors_mut() {
            t.fill(1.0);
        }
        let mut adam = Adam::new(&dims);
        adam.update(&mut p, &g, 0.01, &ENCODER_DECODER);
        // bias-corrected first step moves by lr·g/(|g|+eps)
        assert!((p.we1[[0, 0]] + 0.01).abs() < 1e-9);
        assert!(p.me.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_training_is_deterministic_and_lowers_loss() {
        let imgs: Vec<ImageTensor> = synthetic_corpus(4, 32, 32, 9)
            .into_iter()
            .map(|c| c.image)
            .collect();
        let dims = CodecDims::for_image(32, 32, 3, 8, 32, 1.0 / 16.0).unwrap();
        let cfg = TrainConfig {
            stage_steps: [40, 10, 10],
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = CodecModel::new(dims, 2).unwrap();
            let (rep, _) = train_staged(&mut m, &imgs, &cfg).unwrap();
            (m, rep)
        };
        let (a, rep) = run();
        let (b, _) = run();
        assert_eq!(a.params.we1, b.params.we1);
        assert!(a.params.all_finite());
        let first = rep.losses.first().unwrap().loss;
        let last = rep.losses.last().unwrap().loss;
        assert!(last < first, "{first} -> {last}");
        let mut order = rep.latent_order.clone();
        order.sort_unstable();
        assert_eq!(order, (0..dims.latent).collect::<Vec<_>>());
    }
}

use ndarray::{Array1, Array2, Axis};

use crate::error::{shape_err, Error, Result};
use crate::image::{unit_to_u8, ImageTensor};
use crate::preprocess::PatchGrid;
use crate::rng::NoiseRng;

/// Sizes of the patch autoencoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodecDims {
    pub patch_size: usize,
    pub channels: usize,
    pub n_patches: usize,
    /// Width of the per-patch embedding.
    pub hidden: usize,
    /// Latent values per patch (two per channel use).
    pub latent: usize,
}

impl CodecDims {
    /// Dimensions for an image, with the latent width chosen so that channel
    /// uses / source values equals `bandwidth_ratio`.
    pub fn for_image(
        height: usize,
        width: usize,
        channels: usize,
        patch_size: usize,
        hidden: usize,
        bandwidth_ratio: f64,
    ) -> Result<Self> {
        let grid = crate::preprocess::partition_dims(height, width, patch_size)?;
        let patch_dim = patch_size * patch_size * channels;
        let latent = (2.0 * patch_dim as f64 * bandwidth_ratio).round() as usize;
        let d = Self {
            patch_size,
            channels,
            n_patches: grid.count(),
            hidden,
            latent,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0
            || self.channels == 0
            || self.n_patches == 0
            || self.hidden == 0
            || self.latent == 0
        {
            return Err(Error::Config(format!(
                "degenerate codec dimensions {self:?}"
            )));
        }
        if !(self.n_patches * self.latent).is_multiple_of(2) {
            return Err(Error::Config(
                "latent count must be even to pair into symbols".into(),
            ));
        }
        Ok(())
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn latent_len(&self) -> usize {
        self.n_patches * self.latent
    }

    pub fn symbol_count(&self) -> usize {
        self.latent_len() / 2
    }

    pub fn bandwidth_ratio(&self) -> f64 {
        self.symbol_count() as f64 / (self.n_patches * self.patch_dim()) as f64
    }

    /// Symbol indices sorted by significance: latent pair index first, then
    /// patch. Requires latents ordered most significant first within a patch.
    pub fn significance_order(&self) -> Vec<usize> {
        let pairs = self.latent / 2;
        let mut idx = Vec::with_capacity(self.symbol_count());
        if self.latent.is_multiple_of(2) {
            for i in 0..pairs {
                for n in 0..self.n_patches {
                    idx.push(n * pairs + i);
                }
            }
        } else {
            idx.extend(0..self.symbol_count());
        }
        idx
    }
}

/// All learnable tensors. Biases are stored as single-row matrices.
///
/// Encoder: `H = X·We1ᵀ + be1`, `Z = H·We2ᵀ + be2`, masked rows of `Z`
/// zeroed, `U = Zm + Me·Zm + ce`, `L = sigmoid(U)`.
/// Decoder: `V = logit(L̂)`, `W = V + Md·V + cd`, masked rows zeroed,
/// `G = Wm·Wd2ᵀ + bd2`, `Y = G·Wd1ᵀ + bd1`.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecParams {
    pub we1: Array2<f64>,
    pub be1: Array2<f64>,
    pub we2: Array2<f64>,
    pub be2: Array2<f64>,
    pub me: Array2<f64>,
    pub ce: Array2<f64>,
    pub md: Array2<f64>,
    pub cd: Array2<f64>,
    pub wd2: Array2<f64>,
    pub bd2: Array2<f64>,
    pub wd1: Array2<f64>,
    pub bd1: Array2<f64>,
}

pub const PARAM_COUNT: usize = 12;

/// Which tensors belong to which training group, in canonical order.
pub const ENCODER_DECODER: [usize; 8] = [0, 1, 2, 3, 8, 9, 10, 11];
pub const MIXING: [usize; 4] = [4, 5, 6, 7];

impl CodecParams {
    pub fn zeros(d: &CodecDims) -> Self {
        let (n, p, h, q) = (d.n_patches, d.patch_dim(), d.hidden, d.latent);
        Self {
            we1: Array2::zeros((h, p)),
            be1: Array2::zeros((1, h)),
            we2: Array2::zeros((q, h)),
            be2: Array2::zeros((1, q)),
            me: Array2::zeros((n, n)),
            ce: Array2::zeros((n, q)),
            md: Array2::zeros((n, n)),
            cd: Array2::zeros((n, q)),
            wd2: Array2::zeros((h, q)),
            bd2: Array2::zeros((1, h)),
            wd1: Array2::zeros((p, h)),
            bd1: Array2::zeros((1, p)),
        }
    }

    pub fn tensors(&self) -> [&Array2<f64>; PARAM_COUNT] {
        [
            &self.we1, &self.be1, &self.we2, &self.be2, &self.me, &self.ce, &self.md, &self.cd,
            &self.wd2, &self.bd2, &self.wd1, &self.bd1,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; PARAM_COUNT] {
        [
            &mut self.we1,
            &mut self.be1,
            &mut self.we2,
            &mut self.be2,
            &mut self.me,
            &mut self.ce,
            &mut self.md,
            &mut self.cd,
            &mut self.wd2,
            &mut self.bd2,
            &mut self.wd1,
            &mut self.bd1,
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &CodecParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.mapv_inplace(|v| v * k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug)]
pub struct CodecModel {
    pub dims: CodecDims,
    pub params: CodecParams,
}

impl CodecModel {
    /// Scaled Gaussian weights, zero biases, zero mixing (identity residual).
    pub fn new(dims: CodecDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut p = CodecParams::zeros(&dims);
        let mut rng = NoiseRng::new(seed);
        let mut fill = |t: &mut Array2<f64>| {
            let s = 1.0 / (t.ncols() as f64).sqrt();
            t.mapv_inplace(|_| rng.gaussian() * s);
        };
        fill(&mut p.we1);
        fill(&mut p.we2);
        fill(&mut p.wd2);
        fill(&mut p.wd1);
        Ok(Self { dims, params: p })
    }

    /// Identity maps end to end (requires `hidden == latent == patch_dim`).
    pub fn identity(dims: CodecDims) -> Result<Self> {
        dims.validate()?;
        let pd = dims.patch_dim();
        if dims.hidden != pd || dims.latent != pd {
            return Err(Error::Config(
                "identity codec needs hidden == latent == patch_dim".into(),
            ));
        }
        let mut p = CodecParams::zeros(&dims);
        for t in [&mut p.we1, &mut p.we2, &mut p.wd2, &mut p.wd1] {
            *t = Array2::eye(pd);
        }
        Ok(Self { dims, params: p })
    }

    pub fn check_image(&self, img: &ImageTensor) -> Result<PatchGrid> {
        let grid = crate::preprocess::partition_patches(img, self.dims.patch_size)?;
        if grid.count() != self.dims.n_patches || img.channels() != self.dims.channels {
            return shape_err(
                format!(
                    "{} patches x {} channels",
                    self.dims.n_patches, self.dims.channels
                ),
                format!("{} patches x {} channels", grid.count(), img.channels()),
            );
        }
        Ok(grid)
    }

    /// Permutes latent channels so that index 0 has the largest effect on the
    /// reconstruction. `spread[j]` is the typical magnitude of latent `j`'s
    /// pre-activation; the output function is unchanged.
    pub fn sort_latents_by_significance(&mut self, spread: &[f64]) -> Result<Vec<usize>> {
        let q = self.dims.latent;
        if spread.len() != q {
            return shape_err(q, spread.len());
        }
        let out_map = self.params.wd1.dot(&self.params.wd2);
        let score: Vec<f64> = (0..q)
            .map(|j| out_map.column(j).iter().map(|v| v * v).sum::<f64>().sqrt() * spread[j])
            .collect();
        let mut perm: Vec<usize> = (0..q).collect();
        perm.sort_by(|&a, &b| score[b].total_cmp(&score[a]));
        permute_latent_channels(&mut self.params, &perm);
        Ok(perm)
    }
}

/// Affine reparametrization of the latent pre-activation:
/// `U'_j = (U_j - mean_j)·scale_j`, compensated in the decoder. Exact for
/// the unmixed path (identity mixing maps).
pub fn rescale_latent_channels(p: &mut CodecParams, mean: &[f64], scale: &[f64]) {
    for j in 0..scale.len() {
        let s = scale[j];
        p.we2.row_mut(j).mapv_inplace(|v| v * s);
        p.be2[[0, j]] = (p.be2[[0, j]] - mean[j]) * s;
        let col = p.wd2.column(j).to_owned();
        for i in 0..col.len() {
            p.bd2[[0, i]] += col[i] * mean[j];
        }
        p.wd2.column_mut(j).mapv_inplace(|v| v / s);
    }
}

/// Reorders latent channels: new channel `j` is old channel `perm[j]`.
pub fn permute_latent_channels(p: &mut CodecParams, perm: &[usize]) {
    p.we2 = p.we2.select(Axis(0), perm);
    p.be2 = p.be2.select(Axis(1), perm);
    p.ce = p.ce.select(Axis(1), perm);
    p.cd = p.cd.select(Axis(1), perm);
    p.wd2 = p.wd2.select(Axis(1), perm);
}

/// Patches as rows, values in `[0, 1]`, in-patch order `(y, x, c)`.
pub fn image_to_patches(img: &ImageTensor, grid: &PatchGrid) -> Array2<f64> {
    let ps = grid.patch_size;
    let c = img.channels();
    let mut x = Array2::zeros((grid.count(), ps * ps * c));
    for k in 0..grid.count() {
        let (y0, x0) = grid.origin(k);
        let mut row = x.row_mut(k);
        let mut i = 0;
        for dy in 0..ps {
            for dx in 0..ps {
                for ch in 0..c {
                    row[i] = img.get(y0 + dy, x0 + dx, ch) as f64 / 255.0;
                    i += 1;
                }
            }
        }
    }
    x
}

/// Inverse of [`image_to_patches`] with clamping and 8-bit rounding.
pub fn patches_to_image(y: &Array2<f64>, grid: &PatchGrid, channels: usize) -> ImageTensor {
    let ps = grid.patch_size;
    let mut img = ImageTensor::zeros(grid.height(), grid.width(), channels);
    for k in 0..grid.count() {
        let (y0, x0) = grid.origin(k);
        let row = y.row(k);
        let mut i = 0;
        for dy in 0..ps {
            for dx in 0..ps {
                for ch in 0..channels {
                    img.set(y0 + dy, x0 + dx, ch, unit_to_u8(row[i]));
                    i += 1;
                }
            }
        }
    }
    img
}

/// Options shaping one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PassOptions {
    /// Apply the mask operation and cross-patch mixing. When off the latent
    /// goes straight from compression to the sigmoid.
    pub mixing: bool,
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub const LOGIT_CLAMP: f64 = 1e-12;

#[inline]
fn logit(p: f64) -> f64 {
    let p = p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
    (p / (1.0 - p)).ln()
}

fn mask_rows(a: &mut Array2<f64>, mask: &[u8]) {
    for (mut row, &m) in a.rows_mut().into_iter().zip(mask) {
        if m == 0 {
            row.fill(0.0);
        }
    }
}

/// Repetition map of the mask operation: masked row `j` carries a copy of
/// the kept row `src[j]`. Masked rows are assigned to kept rows in index
/// order, wrapping around when there are more masked than kept patches.
pub fn copy_sources(mask: &[u8]) -> Vec<Option<usize>> {
    let kept: Vec<usize> = (0..mask.len()).filter(|&i| mask[i] != 0).collect();
    let mut t = 0;
    mask.iter()
        .map(|&m| {
            if m != 0 || kept.is_empty() {
                return None;
            }
            t += 1;
            Some(kept[(t - 1) % kept.len()])
        })
        .collect()
}

fn fill_copies(z: &mut Array2<f64>, src: &[Option<usize>]) {
    for (j, s) in src.iter().enumerate() {
        if let Some(i) = *s {
            let r = z.row(i).to_owned();
            z.row_mut(j).assign(&r);
        }
    }
}

/// Replaces each kept row by the mean of itself and its received copies.
fn combine_copies(v: &mut Array2<f64>, src: &[Option<usize>]) {
    let mut count = vec![1.0; v.nrows()];
    let mut acc = v.clone();
    for (j, s) in src.iter().enumerate() {
        if let Some(i) = *s {
            let r = v.row(j).to_owned();
            let mut t = acc.row_mut(i);
            t += &r;
            count[i] += 1.0;
        }
    }
    for (i, c) in count.iter().enumerate() {
        if *c > 1.0 {
            let r = acc.row(i).mapv(|x| x / c);
            v.row_mut(i).assign(&r);
        }
    }
}

fn combine_copies_backward(d: &mut Array2<f64>, src: &[Option<usize>]) {
    let mut count = vec![1.0; d.nrows()];
    for &i in src.iter().flatten() {
        count[i] += 1.0;
    }
    let scaled: Array2<f64> = Array2::from_shape_fn(d.raw_dim(), |(r, c)| d[[r, c]] / count[r]);
    for (r, c) in count.iter().enumerate() {
        if *c > 1.0 {
            d.row_mut(r).assign(&scaled.row(r));
        }
    }
    for (j, s) in src.iter().enumerate() {
        if let Some(i) = *s {
            let r = scaled.row(i).to_owned();
            let mut t = d.row_mut(j);
            t += &r;
        }
    }
}

fn col_sum(a: &Array2<f64>) -> Array2<f64> {
    a.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// Encoder intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    x: Array2<f64>,
    h: Array2<f64>,
    zm: Array2<f64>,
    /// Pre-activation `U`.
    pub pre: Array2<f64>,
    /// Sigmoid output `L`.
    pub latent: Array2<f64>,
    mask: Vec<u8>,
    opts: PassOptions,
}

pub fn encoder_forward(
    p: &CodecParams,
    x: Array2<f64>,
    mask: &[u8],
    opts: PassOptions,
) -> EncoderCache {
    let h = x.dot(&p.we1.t()) + &p.be1;
    let mut z = h.dot(&p.we2.t()) + &p.be2;
    let pre = if opts.mixing {
        mask_rows(&mut z, mask);
        fill_copies(&mut z, &copy_sources(mask));
        &z + &p.me.dot(&z) + &p.ce
    } else {
        z.clone()
    };
    let latent = pre.mapv(sigmoid);
    EncoderCache {
        x,
        h,
        zm: z,
        pre,
        latent,
        mask: mask.to_vec(),
        opts,
    }
}

/// Gradient of the encoder parameters given `dLoss/dL`.
pub fn encoder_backward(
    p: &CodecParams,
    c: &EncoderCache,
    d_latent: &Array2<f64>,
    g: &mut CodecParams,
) {
    let du = d_latent * &c.latent.mapv(|l| l * (1.0 - l));
    let dz = if c.opts.mixing {
        g.me += &du.dot(&c.zm.t());
        g.ce += &du;
        let mut dzm = &du + &p.me.t().dot(&du);
        for (j, src) in copy_sources(&c.mask).into_iter().enumerate() {
            if let Some(i) = src {
                let r = dzm.row(j).to_owned();
                let mut t = dzm.row_mut(i);
                t += &r;
            }
        }
        mask_rows(&mut dzm, &c.mask);
        dzm
    } else {
        du
    };
    g.we2 += &dz.t().dot(&c.h);
    g.be2 += &col_sum(&dz);
    let dh = dz.dot(&p.we2);
    g.we1 += &dh.t().dot(&c.x);
    g.be1 += &col_sum(&dh);
}

#[derive(Clone, Debug)]
pub struct DecoderCache {
    latent: Array2<f64>,
    v: Array2<f64>,
    wm: Array2<f64>,
    gh: Array2<f64>,
    /// Unclamped reconstruction, patches as rows.
    pub output: Array2<f64>,
    mask: Vec<u8>,
    opts: PassOptions,
}

pub fn decoder_forward(
    p: &CodecParams,
    latent: Array2<f64>,
    mask: &[u8],
    opts: PassOptions,
) -> DecoderCache {
    let mut v = latent.mapv(logit);
    if opts.mixing {
        combine_copies(&mut v, &copy_sources(mask));
    }
    let wm = if opts.mixing {
        let mut w = &v + &p.md.dot(&v) + &p.cd;
        mask_rows(&mut w, mask);
        w
    } else {
        v.clone()
    };
    let gh = wm.dot(&p.wd2.t()) + &p.bd2;
    let output = gh.dot(&p.wd1.t()) + &p.bd1;
    DecoderCache {
        latent,
        v,
        wm,
        gh,
        output,
        mask: mask.to_vec(),
        opts,
    }
}

/// Accumulates decoder gradients given `dLoss/dY`; returns `dLoss/dL̂`.
pub fn decoder_backward(
    p: &CodecParams,
    c: &DecoderCache,
    d_out: &Array2<f64>,
    g: &mut CodecParams,
) -> Array2<f64> {
    g.wd1 += &d_out.t().dot(&c.gh);
    g.bd1 += &col_sum(d_out);
    let dg = d_out.dot(&p.wd1);
    g.wd2 += &dg.t().dot(&c.wm);
    g.bd2 += &col_sum(&dg);
    let mut dw = dg.dot(&p.wd2);
    let dv = if c.opts.mixing {
        mask_rows(&mut dw, &c.mask);
        g.md += &dw.dot(&c.v.t());
        g.cd += &dw;
        let mut dv = &dw + &p.md.t().dot(&dw);
        combine_copies_backward(&mut dv, &copy_sources(&c.mask));
        dv
    } else {
        dw
    };
    let mut dl = dv;
    for (d, &l) in dl.iter_mut().zip(c.latent.iter()) {
        let lc = l.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
        *d /= lc * (1.0 - lc);
    }
    dl
}

/// Which reconstruction loss drives the gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Plain MSE over every value.
    Full,
    /// MSE against the masked output, scaled by `N_T / N_U`.
    KeptOnly,
}

/// Loss value and `dLoss/dY` for one image. `target` rows are the
/// (already masked) source patches.
pub fn loss_and_grad(
    target: &Array2<f64>,
    output: &Array2<f64>,
    mask: &[u8],
    kind: LossKind,
) -> Result<(f64, Array2<f64>)> {
    let n = target.nrows();
    let total = target.len() as f64;
    let (scale, use_mask) = match kind {
        LossKind::Full => (1.0 / total, false),
        LossKind::KeptOnly => {
            let kept = mask.iter().filter(|&&m| m != 0).count();
            if kept == 0 {
                return Err(Error::InvalidInput("every patch is masked; N_U = 0".into()));
            }
            (n as f64 / (kept as f64 * total), true)
        }
    };
    let mut grad = Array2::zeros(output.raw_dim());
    let mut loss = 0.0;
    for k in 0..n {
        let m = if use_mask { mask[k] as f64 } else { 1.0 };
        let (t, o) = (target.row(k), output.row(k));
        let mut gr = grad.row_mut(k);
        for i in 0..t.len() {
            let e = t[i] - o[i] * m;
            loss += e * e;
            gr[i] = -2.0 * e * m * scale;
        }
    }
    Ok((loss * scale, grad))
}

/// Latents for one image as a flat patch-major vector.
pub fn flatten(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

pub fn unflatten(v: &[f64], rows: usize, cols: usize) -> Result<Array2<f64>> {
    Array2::from_shape_vec((rows, cols), v.to_vec()).map_err(|e| Error::ShapeMismatch {
        expected: format!("{rows}x{cols}"),
        got: e.to_string(),
    })
}

/// Mean absolute deviation of each latent column's pre-activation over a
/// set of encoder passes.
pub fn latent_spread(pre: &[Array2<f64>], q: usize) -> Vec<f64> {
    let mut acc = Array1::<f64>::zeros(q);
    let mut count = 0usize;
    for u in pre {
        let mean = u.mean_axis(Axis(0)).unwrap();
        for row in u.rows() {
            acc += &(&row - &mean).mapv(f64::abs);
        }
        count += u.nrows();
    }
    if count > 0 {
        acc /= count as f64;
    }
    acc.to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::partition_dims;

    fn scene() -> ImageTensor {
        ImageTensor::from_fn(8, 8, 3, |y, x, c| (20 + y * 25 + x * 3 + c * 9) as u8)
    }

    #[test]
    fn patches_round_trip() {
        let img = scene();
        let grid = partition_dims(8, 8, 4).unwrap();
        let x = image_to_patches(&img, &grid);
        assert_eq!(x.dim(), (4, 48));
        assert_eq!(patches_to_image(&x, &grid, 3), img);
    }

    #[test]
    fn identity_codec_reconstructs() {
        let dims = CodecDims::for_image(8, 8, 3, 4, 48, 0.5).unwrap();
        let m = CodecModel::identity(dims).unwrap();
        let grid = m.check_image(&scene()).unwrap();
        let x = image_to_patches(&scene(), &grid);
        let mask = vec![1u8; 4];
        for mixing in [false, true] {
            let opts = PassOptions { mixing };
            let enc = encoder_forward(&m.params, x.clone(), &mask, opts);
            let dec = decoder_forward(&m.params, enc.latent, &mask, opts);
            let err = (&dec.output - &x)
                .mapv(f64::abs)
                .fold(0.0f64, |a, &b| a.max(b));
            assert!(err < 1e-9, "mixing {mixing}: {err}");
        }
        assert!(CodecModel::identity(CodecDims::for_image(8, 8, 3, 4, 16, 1.0).unwrap()).is_err());
    }

    #[test]
    fn masked_rows_do_not_leak() {
        let dims = CodecDims::for_image(8, 8, 3, 4, 16, 0.25).unwrap();
        let m = CodecModel::new(dims, 3).unwrap();
        let grid = m.check_image(&scene()).unwrap();
        let x = image_to_patches(&scene(), &grid);
        let mask = [1u8, 0, 1, 1];
        let opts = PassOptions { mixing: true };
        let dec = decoder_forward(
            &m.params,
            encoder_forward(&m.params, x, &mask, opts).latent,
            &mask,
            opts,
        );
        // masked rows decode from the biases alone
        let bias_only = m.params.bd2.dot(&m.params.wd1.t()) + &m.params.bd1;
        assert_eq!(dec.output.row(1), bias_only.row(0));
    }

    #[test]
    fn rescale_and_permute_preserve_output() {
        let dims = CodecDims::for_image(8, 8, 3, 4, 16, 0.25).unwrap();
        let m = CodecModel::new(dims, 5).unwrap();
        let grid = m.check_image(&scene()).unwrap();
        let x = image_to_patches(&scene(), &grid);
        let mask = vec![1u8; 4];
        let opts = PassOptions { mixing: false };
        let run = |p: &CodecParams| {
            let u = encoder_forward(p, x.clone(), &mask, opts).pre;
            decoder_forward(p, u.mapv(sigmoid), &mask, opts).output
        };
        let before = run(&m.params);
        let q = dims.latent;
        let mut p = m.params.clone();
        let mean: Vec<f64> = (0..q).map(|j| 0.1 * j as f64).collect();
        let scale: Vec<f64> = (0..q).map(|j| 0.5 + 0.25 * j as f64).collect();
        rescale_latent_channels(&mut p, &mean, &scale);
        let perm: Vec<usize> = (0..q).rev().collect();
        permute_latent_channels(&mut p, &perm);
        let err = (&run(&p) - &before)
            .mapv(f64::abs)
            .fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-9, "{err}");

        let mut sorted = m.clone();
        let spread = vec![1.0; q];
        sorted.sort_latents_by_significance(&spread).unwrap();
        let err = (&run(&sorted.params) - &before)
            .mapv(f64::abs)
            .fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-9);
        let norms: Vec<f64> = {
            let om = sorted.params.wd1.dot(&sorted.params.wd2);
            (0..q)
                .map(|j| om.column(j).iter().map(|v| v * v).sum::<f64>())
                .collect()
        };
        assert!(norms.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn copies_wrap_over_kept_rows() {
        assert_eq!(
            copy_sources(&[1, 0, 1, 0, 0, 0]),
            [None, Some(0), None, Some(2), Some(0), Some(2)]
        );
        assert_eq!(copy_sources(&[1, 1]), [None, None]);
        assert_eq!(copy_sources(&[0, 0]), [None, None]);
        let mut v = Array2::from_shape_vec((3, 1), vec![1.0, 3.0, 8.0]).unwrap();
        combine_copies(&mut v, &copy_sources(&[1, 0, 1]));
        assert_eq!(v.column(0).to_vec(), [2.0, 3.0, 8.0]);
    }

    #[test]
    fn kept_only_loss_ignores_masked_output() {
        let t = Array2::from_shape_fn((3, 2), |(i, j)| (i + j) as f64 * 0.1);
        let o = Array2::from_elem((3, 2), 0.5);
        let mask = [1u8, 0, 1];
        let (_, g) = loss_and_grad(&t, &o, &mask, LossKind::KeptOnly).unwrap();
        assert!(g.row(1).iter().all(|&v| v == 0.0));
        assert!(loss_and_grad(&t, &o, &[0, 0, 0], LossKind::KeptOnly).is_err());
        let (full, _) = loss_and_grad(&t, &t, &mask, LossKind::Full).unwrap();
        assert_eq!(full, 0.0);
    }
}

//! Reconstruction quality: PSNR, SSIM, a region-weighted SSIM proxy for
//! detection quality, and the combined scores.

use crate::error::{Error, Result};
use crate::image::{ImageTensor, RegionAnnotation};

/// PSNR ceiling in dB; identical images report this value.
pub const PSNR_CAP_DB: f64 = 50.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// PSNR over 8-bit values, capped at [`PSNR_CAP_DB`].
pub fn psnr(p: &ImageTensor, p_hat: &ImageTensor) -> Result<f64> {
    p.check_same_shape(p_hat)?;
    if p.is_empty() {
        return Err(Error::InvalidInput("empty image".into()));
    }
    let mse = p
        .pixels()
        .iter()
        .zip(p_hat.pixels())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / p.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn window_1d() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Valid-mode separable filtering of a `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// SSIM map averaged over channels, one value per valid window position
/// (`(H-10) × (W-10)`, row-major).
pub fn ssim_map(p: &ImageTensor, p_hat: &ImageTensor) -> Result<(Vec<f64>, usize, usize)> {
    p.check_same_shape(p_hat)?;
    let (h, w, c) = (p.height(), p.width(), p.channels());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let k = window_1d();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut acc = vec![0.0; oh * ow];
    for ch in 0..c {
        let a: Vec<f64> = (0..h * w).map(|i| p.pixels()[i * c + ch] as f64).collect();
        let b: Vec<f64> = (0..h * w)
            .map(|i| p_hat.pixels()[i * c + ch] as f64)
            .collect();
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let mu_a = filter_valid(&a, h, w, &k);
        let mu_b = filter_valid(&b, h, w, &k);
        let e_aa = filter_valid(&aa, h, w, &k);
        let e_bb = filter_valid(&bb, h, w, &k);
        let e_ab = filter_valid(&ab, h, w, &k);
        for i in 0..oh * ow {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            acc[i] += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
                / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        }
    }
    acc.iter_mut().for_each(|v| *v /= c as f64);
    Ok((acc, oh, ow))
}

pub fn ssim(p: &ImageTensor, p_hat: &ImageTensor) -> Result<f64> {
    let (m, _, _) = ssim_map(p, p_hat)?;
    Ok(m.iter().sum::<f64>() / m.len() as f64)
}

/// Mean SSIM over window centres inside each box, averaged over boxes.
/// Boxes reaching past the valid centre range are clipped to it; with no
/// boxes this is the whole-image SSIM.
pub fn cs_proxy(p: &ImageTensor, p_hat: &ImageTensor, regions: &RegionAnnotation) -> Result<f64> {
    let (map, oh, ow) = ssim_map(p, p_hat)?;
    if regions.is_empty() {
        return Ok(map.iter().sum::<f64>() / map.len() as f64);
    }
    regions.validate(p.height(), p.width())?;
    let half = SSIM_WINDOW / 2;
    let clip = |v: usize, n: usize| v.clamp(half, half + n - 1) - half;
    let mut total = 0.0;
    for b in &regions.boxes {
        let (y0, y1) = (clip(b.y, oh), clip(b.y + b.h - 1, oh));
        let (x0, x1) = (clip(b.x, ow), clip(b.x + b.w - 1, ow));
        let mut s = 0.0;
        for y in y0..=y1 {
            for x in x0..=x1 {
                s += map[y * ow + x];
            }
        }
        total += s / ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
    }
    Ok(total / regions.boxes.len() as f64)
}

pub fn combine_psnr_cs(psnr_db: f64, cs: f64) -> f64 {
    0.5 * (psnr_db / PSNR_CAP_DB) + 0.5 * cs
}

pub fn combine_ssim_cs(ssim: f64, cs: f64) -> f64 {
    0.5 * ssim.clamp(0.0, 1.0) + 0.5 * cs
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QualityReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub cs_proxy: f64,
    pub psnr_cs: f64,
    pub ssim_cs: f64,
}

impl QualityReport {
    /// Scores of a transmission that delivered nothing usable.
    pub fn failed() -> Self {
        Self {
            psnr_db: 0.0,
            ssim: 0.0,
            cs_proxy: 0.0,
            psnr_cs: 0.0,
            ssim_cs: 0.0,
        }
    }
}

pub fn evaluate(
    p: &ImageTensor,
    p_hat: &ImageTensor,
    regions: &RegionAnnotation,
) -> Result<QualityReport> {
    let psnr_db = psnr(p, p_hat)?;
    let ssim = ssim(p, p_hat)?;
    let cs = cs_proxy(p, p_hat, regions)?;
    Ok(QualityReport {
        psnr_db,
        ssim,
        cs_proxy: cs,
        psnr_cs: combine_psnr_cs(psnr_db, cs),
        ssim_cs: combine_ssim_cs(ssim, cs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::BoundingBox;

    fn ramp() -> ImageTensor {
        ImageTensor::from_fn(32, 32, 3, |y, x, c| (y * 6 + x * 2 + c * 20) as u8)
    }

    #[test]
    fn identical_images() {
        let a = ramp();
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let r = evaluate(&a, &a, &RegionAnnotation::empty()).unwrap();
        assert!((r.psnr_cs - 1.0).abs() < 1e-12);
        assert!((r.ssim_cs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_known_value() {
        let a = ImageTensor::zeros(4, 4, 1);
        let b = ImageTensor::from_fn(4, 4, 1, |_, _, _| 10);
        // mse 100 -> 10 log10(65025 / 100)
        assert!((psnr(&a, &b).unwrap() - 10.0 * 650.25f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn small_image_rejected() {
        let a = ImageTensor::zeros(10, 20, 1);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn proxy_uses_box_region() {
        let a = ramp();
        let mut b = a.clone();
        for y in 20..32 {
            for x in 20..32 {
                b.set(y, x, 0, 255 - a.get(y, x, 0));
            }
        }
        let clean = RegionAnnotation::new(vec![BoundingBox {
            class_id: 1,
            x: 0,
            y: 0,
            w: 12,
            h: 12,
        }]);
        let dirty = RegionAnnotation::new(vec![BoundingBox {
            class_id: 1,
            x: 20,
            y: 20,
            w: 12,
            h: 12,
        }]);
        let pc = cs_proxy(&a, &b, &clean).unwrap();
        let pd = cs_proxy(&a, &b, &dirty).unwrap();
        assert!(pc > pd);
        assert!((pc - 1.0).abs() < 1e-12);
    }
}

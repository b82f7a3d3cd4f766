//! Metrics against direct, unoptimised reimplementations.

use proptest::prelude::*;
use semtx::image::ImageTensor;
use semtx::metrics::{psnr, ssim, PSNR_CAP_DB};

fn naive_psnr(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let mut se = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            for c in 0..a.channels() {
                let d = a.get(y, x, c) as f64 - b.get(y, x, c) as f64;
                se += d * d;
            }
        }
    }
    let mse = se / a.len() as f64;
    if mse == 0.0 {
        return PSNR_CAP_DB;
    }
    (20.0 * 255f64.log10() - 10.0 * mse.log10()).min(PSNR_CAP_DB)
}

/// 11×11 Gaussian window (σ 1.5) built in two dimensions, statistics taken
/// position by position.
fn naive_ssim(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let n = 11;
    let mut w = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut sum = 0.0;
    let mut count = 0;
    for y in 0..=a.height() - n {
        for x in 0..=a.width() - n {
            let mut per_channel = 0.0;
            for c in 0..a.channels() {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let k = w[i][j] / total;
                        let p = a.get(y + i, x + j, c) as f64;
                        let q = b.get(y + i, x + j, c) as f64;
                        ma += k * p;
                        mb += k * q;
                        saa += k * p * p;
                        sbb += k * q * q;
                        sab += k * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                per_channel += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
            sum += per_channel / a.channels() as f64;
            count += 1;
        }
    }
    sum / count as f64
}

fn image(h: usize, w: usize, c: usize, px: &[u8]) -> ImageTensor {
    ImageTensor::new(
        h,
        w,
        c,
        px.iter().cycle().take(h * w * c).copied().collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn psnr_and_ssim_match_naive(
        h in 11usize..20, w in 11usize..20, c in prop::sample::select(vec![1usize, 3]),
        a in prop::collection::vec(any::<u8>(), 64..400),
        b in prop::collection::vec(any::<u8>(), 64..400),
    ) {
        let x = image(h, w, c, &a);
        let y = image(h, w, c, &b);
        prop_assert!((psnr(&x, &y).unwrap() - naive_psnr(&x, &y)).abs() < 1e-9);
        prop_assert!((ssim(&x, &y).unwrap() - naive_ssim(&x, &y)).abs() < 1e-9);
        prop_assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP_DB);
    }
}

#[test]
fn smooth_pair_matches_naive() {
    let a = ImageTensor::from_fn(32, 24, 3, |y, x, c| (y * 7 + x * 5 + c * 30) as u8);
    let b = ImageTensor::from_fn(32, 24, 3, |y, x, c| {
        ((y * 7 + x * 5 + c * 30) as u8).wrapping_add(((x * y) % 13) as u8)
    });
    assert!((ssim(&a, &b).unwrap() - naive_ssim(&a, &b)).abs() < 1e-9);
    assert!((psnr(&a, &b).unwrap() - naive_psnr(&a, &b)).abs() < 1e-9);
}

use crate::error::{shape_err, Error, Result};
use crate::image::ImageTensor;
use crate::preprocess::MaskMatrix;

/// Mean squared error over all `H × W × C` values (inputs in `[0, 1]`).
pub fn mse(p: &[f64], p_hat: &[f64]) -> Result<f64> {
    if p.len() != p_hat.len() {
        return shape_err(p.len(), p_hat.len());
    }
    if p.is_empty() {
        return Err(Error::InvalidInput("empty input".into()));
    }
    Ok(p.iter()
        .zip(p_hat)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / p.len() as f64)
}

/// MSE of `p` against `p̂ ⊙ m`, rescaled by `N_T / N_U`. `pixel_mask` holds
/// the expanded 0/1 mask, one entry per value.
pub fn mse_unmasked(
    p: &[f64],
    p_hat: &[f64],
    pixel_mask: &[u8],
    n_total: usize,
    n_kept: usize,
) -> Result<f64> {
    if p.len() != p_hat.len() {
        return shape_err(p.len(), p_hat.len());
    }
    if pixel_mask.len() != p.len() {
        return shape_err(p.len(), pixel_mask.len());
    }
    if n_kept == 0 {
        return Err(Error::InvalidInput("every patch is masked; N_U = 0".into()));
    }
    let s: f64 = p
        .iter()
        .zip(p_hat)
        .zip(pixel_mask)
        .map(|((a, b), &m)| (a - b * m as f64).powi(2))
        .sum();
    // ratio first so an all-ones mask reduces to plain MSE bit for bit
    let scale = n_total as f64 / n_kept as f64;
    Ok(s / p.len() as f64 * scale)
}

pub fn loss_mse(p: &ImageTensor, p_hat: &ImageTensor) -> Result<f64> {
    p.check_same_shape(p_hat)?;
    mse(&p.to_unit(), &p_hat.to_unit())
}

pub fn loss_mse_unmasked(p: &ImageTensor, p_hat: &ImageTensor, m: &MaskMatrix) -> Result<f64> {
    p.check_same_shape(p_hat)?;
    if m.grid.height() != p.height() || m.grid.width() != p.width() {
        return shape_err(
            format!("{}x{}", p.height(), p.width()),
            format!("{}x{}", m.grid.height(), m.grid.width()),
        );
    }
    mse_unmasked(
        &p.to_unit(),
        &p_hat.to_unit(),
        &m.expand(p.channels()),
        m.grid.count(),
        m.kept_count(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::partition_dims;

    #[test]
    fn mse_examples() {
        let a = ImageTensor::zeros(8, 8, 3);
        let b = ImageTensor::from_fn(8, 8, 3, |_, _, _| 255);
        assert_eq!(loss_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(loss_mse(&a, &b).unwrap(), 1.0);
        assert!(loss_mse(&a, &ImageTensor::zeros(8, 8, 1)).is_err());
    }

    #[test]
    fn all_ones_mask_equals_mse() {
        let g = partition_dims(32, 32, 16).unwrap();
        let a = ImageTensor::from_fn(32, 32, 3, |y, x, c| (y * 5 + x * 3 + c) as u8);
        let b = ImageTensor::from_fn(32, 32, 3, |y, x, c| (y * 2 + x * 7 + c * 9) as u8);
        let m = MaskMatrix::all_ones(g);
        assert_eq!(
            loss_mse_unmasked(&a, &b, &m).unwrap(),
            loss_mse(&a, &b).unwrap()
        );
    }

    #[test]
    fn half_masked_doubles_kept_region_error() {
        let g = partition_dims(32, 32, 16).unwrap();
        let m = MaskMatrix::from_bits(g, vec![1, 0, 0, 1]).unwrap();
        let src = ImageTensor::from_fn(32, 32, 1, |y, x, _| (y * 4 + x) as u8);
        let p = crate::preprocess::apply_mask(&src, &m).unwrap();
        let p_hat = ImageTensor::from_fn(32, 32, 1, |y, x, _| (y * 4 + x + 10) as u8);
        let kept_sq: f64 = (0..32)
            .flat_map(|y| (0..32).map(move |x| (y, x)))
            .filter(|&(y, x)| m.pixel_bit(y, x) == 1)
            .map(|(y, x)| ((p.get(y, x, 0) as f64 - p_hat.get(y, x, 0) as f64) / 255.0).powi(2))
            .sum();
        let kept_mse = kept_sq / 512.0;
        let v = loss_mse_unmasked(&p, &p_hat, &m).unwrap();
        assert!((v - kept_mse).abs() < 1e-15);
        // kept-region MSE over the whole image doubles under the N_T/N_U factor
        assert!((v - 2.0 * kept_sq / 1024.0).abs() < 1e-15);
    }

    #[test]
    fn all_masked_rejected() {
        let g = partition_dims(16, 16, 16).unwrap();
        let m = MaskMatrix::from_bits(g, vec![0]).unwrap();
        let a = ImageTensor::zeros(16, 16, 1);
        assert!(loss_mse_unmasked(&a, &a, &m).is_err());
    }
}

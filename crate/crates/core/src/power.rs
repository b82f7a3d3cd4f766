//! Subchannel ranking and per-rank power allocation.
//!
//! Data subcarriers are ranked by estimated gain `|ĥ|²` (rank 0 strongest).
//! An allocator holds one amplitude gain per rank, normalised so that
//! `(1/K) Σ g_r² = 1`; the receiver undoes the scaling using only the shared
//! order and gains.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{shape_err, Error, Result};
use crate::phy::{CsiReport, OfdmConfig};

/// Relative tolerance under which two subchannel powers count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct SubchannelOrder {
    /// `order[r]` is the data position with rank `r`.
    pub order: Vec<usize>,
    /// `|ĥ|²` per data position.
    pub power: Vec<f64>,
}

impl SubchannelOrder {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Inverse permutation: rank of each data position.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.order.len()];
        for (rank, &k) in self.order.iter().enumerate() {
            r[k] = rank;
        }
        r
    }

    /// Identity order (used when no CSI is available).
    pub fn natural(k: usize) -> Self {
        Self {
            order: (0..k).collect(),
            power: vec![1.0; k],
        }
    }

    /// Runs of consecutive ranks whose powers are equal within
    /// [`TIE_TOLERANCE`].
    pub fn tie_groups(&self) -> Vec<std::ops::Range<usize>> {
        let mut groups = Vec::new();
        let mut start = 0;
        for r in 1..=self.order.len() {
            let split = r == self.order.len() || {
                let a = self.power[self.order[start]];
                let b = self.power[self.order[r]];
                (a - b).abs() > TIE_TOLERANCE * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
            };
            if split {
                groups.push(start..r);
                start = r;
            }
        }
        groups
    }
}

/// Stable descending sort of the data subcarriers by `|ĥ|²`.
pub fn order_by_gain(data_gains: &[Complex64]) -> Result<SubchannelOrder> {
    if data_gains.is_empty() {
        return Err(Error::InvalidInput("no data subcarriers".into()));
    }
    let power: Vec<f64> = data_gains.iter().map(|h| h.norm_sqr()).collect();
    if power.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("non-finite channel estimate".into()));
    }
    let mut order: Vec<usize> = (0..power.len()).collect();
    order.sort_by(|&a, &b| power[b].total_cmp(&power[a]));
    Ok(SubchannelOrder { order, power })
}

pub fn order_subchannels(csi: &CsiReport, cfg: &OfdmConfig) -> Result<SubchannelOrder> {
    if csi.gains.len() != cfg.used_subcarriers() {
        return shape_err(cfg.used_subcarriers(), csi.gains.len());
    }
    order_by_gain(&csi.data_gains(cfg))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AllocationMode {
    Uniform,
    Matched,
    Learned,
}

impl fmt::Display for AllocationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AllocationMode::Uniform => "uniform",
            AllocationMode::Matched => "matched",
            AllocationMode::Learned => "learned",
        })
    }
}

impl FromStr for AllocationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "matched" => Ok(Self::Matched),
            "learned" => Ok(Self::Learned),
            _ => Err(Error::Config(format!("unknown allocation mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerAllocator {
    pub gains_by_rank: Vec<f64>,
    pub mode: AllocationMode,
}

impl PowerAllocator {
    pub fn uniform(k: usize) -> Self {
        Self {
            gains_by_rank: vec![1.0; k],
            mode: AllocationMode::Uniform,
        }
    }

    /// Amplitude proportional to `√|ĥ|` of the subchannel at each rank.
    pub fn matched(order: &SubchannelOrder) -> Result<Self> {
        let raw: Vec<f64> = order
            .order
            .iter()
            .map(|&k| order.power[k].sqrt().sqrt())
            .collect();
        Ok(Self {
            gains_by_rank: normalize(&raw)?,
            mode: AllocationMode::Matched,
        })
    }

    /// Wraps externally trained gains after checking the power constraint.
    pub fn learned(gains: Vec<f64>) -> Result<Self> {
        let a = Self {
            gains_by_rank: gains,
            mode: AllocationMode::Learned,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn len(&self) -> usize {
        self.gains_by_rank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains_by_rank.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.gains_by_rank)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gains_by_rank.is_empty() {
            return Err(Error::InvalidInput("allocator has no ranks".into()));
        }
        if let Some(g) = self
            .gains_by_rank
            .iter()
            .find(|g| !g.is_finite() || **g <= 0.0)
        {
            return Err(Error::OutOfRange(format!(
                "gain {g} must be positive and finite"
            )));
        }
        let p = self.mean_power();
        if (p - 1.0).abs() > 1e-6 {
            return Err(Error::OutOfRange(format!(
                "mean power {p} violates the unit budget"
            )));
        }
        Ok(())
    }

    /// Per data position amplitude, given the rank order.
    pub fn gains_by_position(&self, order: &SubchannelOrder) -> Result<Vec<f64>> {
        if order.len() != self.len() {
            return shape_err(self.len(), order.len());
        }
        let mut g = vec![0.0; order.len()];
        for (rank, &k) in order.order.iter().enumerate() {
            g[k] = self.gains_by_rank[rank];
        }
        Ok(g)
    }

    /// Scales a `n × K` block (data-position order per row).
    pub fn allocate(
        &self,
        symbols: &[Complex64],
        order: &SubchannelOrder,
    ) -> Result<Vec<Complex64>> {
        let g = self.gains_by_position(order)?;
        scale_rows(symbols, &g, false)
    }

    /// Undoes [`allocate`](Self::allocate) on equalized symbols.
    pub fn invert(&self, symbols: &[Complex64], order: &SubchannelOrder) -> Result<Vec<Complex64>> {
        let g = self.gains_by_position(order)?;
        scale_rows(symbols, &g, true)
    }
}

fn scale_rows(symbols: &[Complex64], g: &[f64], invert: bool) -> Result<Vec<Complex64>> {
    if !symbols.len().is_multiple_of(g.len()) {
        return shape_err(format!("multiple of {}", g.len()), symbols.len());
    }
    Ok(symbols
        .chunks_exact(g.len())
        .flat_map(|row| {
            row.iter()
                .zip(g)
                .map(move |(s, &a)| if invert { s / a } else { s * a })
        })
        .collect())
}

pub fn mean_power(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>() / g.len() as f64
}

/// Rescales to unit mean power.
pub fn normalize(g: &[f64]) -> Result<Vec<f64>> {
    let p = mean_power(g);
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::OutOfRange(format!(
            "cannot normalise gains with mean power {p}"
        )));
    }
    let s = p.sqrt();
    Ok(g.iter().map(|v| v / s).collect())
}

/// Least-squares projection onto non-increasing sequences (pool adjacent
/// violators).
pub fn non_increasing(g: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(g.len());
    for &v in g {
        blocks.push((v, 1));
        while blocks.len() >= 2 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a >= b {
                break;
            }
            blocks.pop();
            let n = na + nb;
            *blocks.last_mut().unwrap() = ((a * na as f64 + b * nb as f64) / n as f64, n);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, n)| std::iter::repeat_n(v, n))
        .collect()
}

/// Projection applied after every allocator update: monotone in rank,
/// floored away from zero, then unit mean power.
pub fn project_gains(g: &[f64], floor: f64) -> Result<Vec<f64>> {
    let mono: Vec<f64> = non_increasing(g)
        .into_iter()
        .map(|v| v.max(floor))
        .collect();
    normalize(&mono)
}

/// CSV rows `subcarrier_index,rank,mean_power` for one allocation.
pub fn power_profile_rows(
    alloc: &PowerAllocator,
    order: &SubchannelOrder,
) -> Result<Vec<(usize, usize, f64)>> {
    let g = alloc.gains_by_position(order)?;
    let ranks = order.ranks();
    Ok((0..g.len()).map(|k| (k, ranks[k], g[k] * g[k])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn orders_descending_and_stable() {
        let o = order_by_gain(&[c(0.5), c(2.0), c(0.5), c(1.0)]).unwrap();
        assert_eq!(o.order, vec![1, 3, 0, 2]);
        assert_eq!(o.ranks(), vec![2, 0, 3, 1]);
        assert_eq!(o.tie_groups(), vec![0..1, 1..2, 2..4]);
    }

    #[test]
    fn flat_channel_is_one_tie_group() {
        let o = order_by_gain(&vec![c(1.0); 55]).unwrap();
        assert_eq!(o.tie_groups(), vec![0..55]);
        assert_eq!(o.order, (0..55).collect::<Vec<_>>());
    }

    #[test]
    fn allocate_then_invert_is_identity() {
        let o = order_by_gain(&[c(0.3), c(1.2), c(0.8)]).unwrap();
        let a = PowerAllocator::matched(&o).unwrap();
        assert!((a.mean_power() - 1.0).abs() < 1e-12);
        let x: Vec<Complex64> = (0..6).map(|i| Complex64::new(i as f64, -1.0)).collect();
        let y = a.allocate(&x, &o).unwrap();
        let z = a.invert(&y, &o).unwrap();
        for (p, q) in x.iter().zip(&z) {
            assert!((p - q).norm() < 1e-12);
        }
        assert!(a.allocate(&x[..5], &o).is_err());
    }

    #[test]
    fn pava_matches_hand_example() {
        assert_eq!(non_increasing(&[3.0, 1.0, 2.0]), vec![3.0, 1.5, 1.5]);
        assert_eq!(non_increasing(&[1.0, 2.0, 3.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(non_increasing(&[3.0, 2.0, 1.0]), vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn projection_meets_budget() {
        let p = project_gains(&[0.5, 2.0, 1.0, 0.1], 1e-3).unwrap();
        assert!((mean_power(&p) - 1.0).abs() < 1e-12);
        assert!(p.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn learned_rejects_bad_budget() {
        assert!(PowerAllocator::learned(vec![1.0, 2.0]).is_err());
        assert!(PowerAllocator::learned(vec![1.0, -1.0]).is_err());
        assert!(PowerAllocator::learned(vec![1.0, 1.0]).is_ok());
    }

    #[test]
    fn mode_round_trip() {
        for m in [
            AllocationMode::Uniform,
            AllocationMode::Matched,
            AllocationMode::Learned,
        ] {
            assert_eq!(m.to_string().parse::<AllocationMode>().unwrap(), m);
        }
    }
}

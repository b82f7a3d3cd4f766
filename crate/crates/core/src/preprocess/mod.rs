//! Importance-driven patch masking.
//!
//! The transmitter splits the image into square patches, ranks them (object
//! patches first, then by keypoint density), picks a mask ratio from the
//! channel SNR and object area, and zeroes the least important patches.

mod keypoints;

pub use keypoints::{
    detect_keypoint_locations, detect_keypoints, gaussian_kernel, DogParams, Keypoint,
};

use crate::error::{shape_err, Error, Result};
use crate::image::{ImageTensor, RegionAnnotation};

/// Upper bound on the mask ratio.
pub const MAX_MASK_RATIO: f64 = 0.7;

/// Row-major grid of square patches over an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn patch_of(&self, y: usize, x: usize) -> usize {
        (y / self.patch_size) * self.cols + x / self.patch_size
    }

    /// Top-left pixel of patch `k`.
    pub fn origin(&self, k: usize) -> (usize, usize) {
        (
            (k / self.cols) * self.patch_size,
            (k % self.cols) * self.patch_size,
        )
    }

    pub fn height(&self) -> usize {
        self.rows * self.patch_size
    }

    pub fn width(&self) -> usize {
        self.cols * self.patch_size
    }

    /// 4-connected neighbours of patch `k`.
    pub fn neighbors(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        let (r, c) = (k / self.cols, k % self.cols);
        let mut out = Vec::with_capacity(4);
        if r > 0 {
            out.push(k - self.cols);
        }
        if r + 1 < self.rows {
            out.push(k + self.cols);
        }
        if c > 0 {
            out.push(k - 1);
        }
        if c + 1 < self.cols {
            out.push(k + 1);
        }
        out.into_iter()
    }
}

pub fn partition_patches(img: &ImageTensor, patch_size: usize) -> Result<PatchGrid> {
    partition_dims(img.height(), img.width(), patch_size)
}

pub fn partition_dims(height: usize, width: usize, patch_size: usize) -> Result<PatchGrid> {
    if patch_size == 0 || !height.is_multiple_of(patch_size) || !width.is_multiple_of(patch_size) {
        return Err(Error::InvalidInput(format!(
            "{height}x{width} image is not divisible into {patch_size}-pixel patches"
        )));
    }
    Ok(PatchGrid {
        patch_size,
        rows: height / patch_size,
        cols: width / patch_size,
    })
}

/// Patch ranking, most important first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImportanceOrder {
    pub patch_indices: Vec<usize>,
    pub keypoint_counts: Vec<u32>,
    pub object_flags: Vec<bool>,
}

impl ImportanceOrder {
    pub fn len(&self) -> usize {
        self.patch_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patch_indices.is_empty()
    }

    /// `rank[patch]` = position of the patch in the order.
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.patch_indices.len()];
        for (r, &p) in self.patch_indices.iter().enumerate() {
            ranks[p] = r;
        }
        ranks
    }

    pub fn object_patch_count(&self) -> usize {
        self.object_flags.iter().filter(|&&f| f).count()
    }
}

/// Flags patches that share at least one pixel with any box.
pub fn object_flags(grid: &PatchGrid, regions: &RegionAnnotation) -> Vec<bool> {
    (0..grid.count())
        .map(|k| {
            let (y0, x0) = grid.origin(k);
            regions
                .boxes
                .iter()
                .any(|b| b.intersects(y0, x0, grid.patch_size, grid.patch_size))
        })
        .collect()
}

/// Object patches first; within each group, descending keypoint count with
/// ascending patch index breaking ties.
pub fn build_importance_order(counts: &[u32], flags: &[bool]) -> Result<ImportanceOrder> {
    if counts.len() != flags.len() {
        return shape_err(flags.len(), counts.len());
    }
    let mut idx: Vec<usize> = (0..counts.len()).collect();
    idx.sort_by(|&a, &b| {
        flags[b]
            .cmp(&flags[a])
            .then(counts[b].cmp(&counts[a]))
            .then(a.cmp(&b))
    });
    Ok(ImportanceOrder {
        patch_indices: idx,
        keypoint_counts: counts.to_vec(),
        object_flags: flags.to_vec(),
    })
}

/// Convenience: flags from `regions`, then [`build_importance_order`].
pub fn importance_order_for(
    counts: &[u32],
    grid: &PatchGrid,
    regions: &RegionAnnotation,
) -> Result<ImportanceOrder> {
    if counts.len() != grid.count() {
        return shape_err(grid.count(), counts.len());
    }
    build_importance_order(counts, &object_flags(grid, regions))
}

/// Bilinear mask-ratio lookup over (SNR, object area).
///
/// Rows are object-area fractions, columns SNR in dB. Stored values are the
/// unclamped optima; lookups are clamped to `[0, MAX_MASK_RATIO]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskRatioTable {
    pub snr_grid: Vec<f64>,
    pub area_grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Default for MaskRatioTable {
    fn default() -> Self {
        Self {
            snr_grid: vec![-5.0, 0.0, 5.0, 10.0, 15.0],
            area_grid: vec![0.0, 0.1, 0.3, 0.5],
            values: vec![
                vec![0.8, 0.7, 0.3, 0.0, 0.0],
                vec![0.8, 0.7, 0.3, 0.0, 0.0],
                vec![0.7, 0.5, 0.2, 0.0, 0.0],
                vec![0.5, 0.3, 0.1, 0.0, 0.0],
            ],
        }
    }
}

fn bracket(grid: &[f64], v: f64) -> (usize, usize, f64) {
    let v = v.clamp(grid[0], grid[grid.len() - 1]);
    for i in 0..grid.len() - 1 {
        if v <= grid[i + 1] {
            let t = (v - grid[i]) / (grid[i + 1] - grid[i]);
            return (i, i + 1, t);
        }
    }
    let n = grid.len() - 1;
    (n, n, 0.0)
}

impl MaskRatioTable {
    pub fn unclamped(&self, snr_db: f64, area: f64) -> f64 {
        let (s0, s1, ts) = bracket(&self.snr_grid, snr_db);
        let (a0, a1, ta) = bracket(&self.area_grid, area);
        let v = |a: usize, s: usize| self.values[a][s];
        let lo = v(a0, s0) * (1.0 - ts) + v(a0, s1) * ts;
        let hi = v(a1, s0) * (1.0 - ts) + v(a1, s1) * ts;
        lo * (1.0 - ta) + hi * ta
    }

    pub fn lookup(&self, snr_db: f64, area: f64) -> f64 {
        self.unclamped(snr_db, area).clamp(0.0, MAX_MASK_RATIO)
    }
}

pub fn decide_mask_ratio(snr_db: f64, object_area_fraction: f64) -> f64 {
    MaskRatioTable::default().lookup(snr_db, object_area_fraction)
}

/// Per-patch keep/mask bits plus the ratio that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskMatrix {
    pub grid: PatchGrid,
    /// 1 = kept, 0 = masked.
    pub patch_mask: Vec<u8>,
    pub mask_ratio: f64,
}

impl MaskMatrix {
    pub fn all_ones(grid: PatchGrid) -> Self {
        Self {
            grid,
            patch_mask: vec![1; grid.count()],
            mask_ratio: 0.0,
        }
    }

    pub fn from_bits(grid: PatchGrid, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != grid.count() {
            return shape_err(grid.count(), bits.len());
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidInput("mask bits must be 0 or 1".into()));
        }
        let zeros = bits.iter().filter(|&&b| b == 0).count();
        Ok(Self {
            grid,
            mask_ratio: zeros as f64 / bits.len() as f64,
            patch_mask: bits,
        })
    }

    pub fn kept_count(&self) -> usize {
        self.patch_mask.iter().filter(|&&b| b == 1).count()
    }

    pub fn masked_count(&self) -> usize {
        self.patch_mask.len() - self.kept_count()
    }

    #[inline]
    pub fn is_kept(&self, patch: usize) -> bool {
        self.patch_mask[patch] == 1
    }

    /// Bit for pixel `(y, x)` (every channel shares it).
    #[inline]
    pub fn pixel_bit(&self, y: usize, x: usize) -> u8 {
        self.patch_mask[self.grid.patch_of(y, x)]
    }

    /// Expansion to an `H × W × C` 0/1 array.
    pub fn expand(&self, channels: usize) -> Vec<u8> {
        let (h, w) = (self.grid.height(), self.grid.width());
        let mut out = Vec::with_capacity(h * w * channels);
        for y in 0..h {
            for x in 0..w {
                let b = self.pixel_bit(y, x);
                out.extend(std::iter::repeat_n(b, channels));
            }
        }
        out
    }
}

/// Masks the `floor(mask_ratio × N_T)` least important patches.
pub fn generate_mask(
    order: &ImportanceOrder,
    grid: PatchGrid,
    mask_ratio: f64,
) -> Result<MaskMatrix> {
    if !(0.0..=MAX_MASK_RATIO + 1e-12).contains(&mask_ratio) {
        return Err(Error::OutOfRange(format!(
            "mask ratio {mask_ratio} outside [0, {MAX_MASK_RATIO}]"
        )));
    }
    generate_mask_unchecked(order, grid, mask_ratio)
}

/// As [`generate_mask`] but accepts ratios up to 1; used by MR sweeps that
/// probe beyond the operating cap.
pub fn generate_mask_unchecked(
    order: &ImportanceOrder,
    grid: PatchGrid,
    mask_ratio: f64,
) -> Result<MaskMatrix> {
    let n = grid.count();
    if order.len() != n {
        return shape_err(n, order.len());
    }
    if !(0.0..=1.0).contains(&mask_ratio) {
        return Err(Error::OutOfRange(format!("mask ratio {mask_ratio}")));
    }
    let zeros = masked_patch_count(n, mask_ratio);
    let mut bits = vec![1u8; n];
    for &p in &order.patch_indices[n - zeros..] {
        bits[p] = 0;
    }
    Ok(MaskMatrix {
        grid,
        patch_mask: bits,
        mask_ratio,
    })
}

/// `floor(ratio × n)`, robust to representation error such as `0.7 × 10`.
pub fn masked_patch_count(n: usize, ratio: f64) -> usize {
    let exact = ratio * n as f64;
    let rounded = exact.round();
    let z = if (exact - rounded).abs() < 1e-9 {
        rounded
    } else {
        exact.floor()
    };
    (z as usize).min(n)
}

pub fn apply_mask(img: &ImageTensor, m: &MaskMatrix) -> Result<ImageTensor> {
    check_mask_shape(img, m)?;
    let mut out = img.clone();
    let c = img.channels();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if m.pixel_bit(y, x) == 0 {
                for ch in 0..c {
                    out.set(y, x, ch, 0);
                }
            }
        }
    }
    Ok(out)
}

fn check_mask_shape(img: &ImageTensor, m: &MaskMatrix) -> Result<()> {
    if img.height() != m.grid.height() || img.width() != m.grid.width() {
        return shape_err(
            format!("{}x{}", m.grid.height(), m.grid.width()),
            format!("{}x{}", img.height(), img.width()),
        );
    }
    Ok(())
}

/// Fills masked patches with the per-channel mean colour of their
/// 4-connected available neighbours, sweeping until every patch is filled.
///
/// Each sweep reads only patches available at the start of the sweep. If no
/// patch is kept at all, the image is returned unchanged.
pub fn infill_masked(img: &ImageTensor, m: &MaskMatrix) -> Result<ImageTensor> {
    check_mask_shape(img, m)?;
    let grid = m.grid;
    let n = grid.count();
    let c = img.channels();
    let p = grid.patch_size;
    let mut out = img.clone();
    let mut available: Vec<bool> = (0..n).map(|k| m.is_kept(k)).collect();
    if !available.iter().any(|&a| a) {
        return Ok(out);
    }
    // per-patch per-channel pixel sums of the current image
    let patch_sum = |im: &ImageTensor, k: usize| -> Vec<u64> {
        let (y0, x0) = grid.origin(k);
        let mut s = vec![0u64; c];
        for y in y0..y0 + p {
            for x in x0..x0 + p {
                for (ch, acc) in s.iter_mut().enumerate() {
                    *acc += im.get(y, x, ch) as u64;
                }
            }
        }
        s
    };
    while available.iter().any(|&a| !a) {
        let snapshot = available.clone();
        let mut fills: Vec<(usize, Vec<u8>)> = Vec::new();
        for k in 0..n {
            if snapshot[k] {
                continue;
            }
            let srcs: Vec<usize> = grid.neighbors(k).filter(|&j| snapshot[j]).collect();
            if srcs.is_empty() {
                continue;
            }
            let denom = (srcs.len() * p * p) as u64;
            let mut colour = vec![0u8; c];
            let mut totals = vec![0u64; c];
            for &j in &srcs {
                for (t, v) in totals.iter_mut().zip(patch_sum(&out, j)) {
                    *t += v;
                }
            }
            for (col, t) in colour.iter_mut().zip(totals) {
                *col = ((t * 2 + denom) / (2 * denom)) as u8;
            }
            fills.push((k, colour));
        }
        for (k, colour) in fills {
            let (y0, x0) = grid.origin(k);
            for y in y0..y0 + p {
                for x in x0..x0 + p {
                    for (ch, &v) in colour.iter().enumerate() {
                        out.set(y, x, ch, v);
                    }
                }
            }
            available[k] = true;
        }
    }
    Ok(out)
}

/// Everything the transmitter decides before encoding.
#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub grid: PatchGrid,
    pub order: ImportanceOrder,
    pub mask: MaskMatrix,
    pub masked: ImageTensor,
    pub object_area: f64,
}

/// Keypoints, importance order, mask ratio (adaptive unless overridden) and mask.
pub fn preprocess(
    img: &ImageTensor,
    regions: &RegionAnnotation,
    patch_size: usize,
    snr_db: f64,
    mr_override: Option<f64>,
) -> Result<Preprocessed> {
    let grid = partition_patches(img, patch_size)?;
    regions.validate(img.height(), img.width())?;
    let counts = detect_keypoints(img, &grid, &DogParams::default());
    let order = importance_order_for(&counts, &grid, regions)?;
    let object_area = regions.area_fraction(img.height(), img.width());
    let mr = match mr_override {
        Some(r) => r,
        None => decide_mask_ratio(snr_db, object_area),
    };
    let mask = generate_mask_unchecked(&order, grid, mr)?;
    let masked = apply_mask(img, &mask)?;
    Ok(Preprocessed {
        grid,
        order,
        mask,
        masked,
        object_area,
    })
}

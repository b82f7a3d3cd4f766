//! Deterministic procedural scenes with box annotations, plus a loader for
//! directories of PNM images with optional `.boxes` sidecars.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{BoundingBox, ImageTensor, RegionAnnotation};
use crate::rng::{split_seed, NoiseRng};

#[derive(Clone, Debug)]
pub struct CorpusItem {
    pub name: String,
    pub image: ImageTensor,
    pub regions: RegionAnnotation,
}

/// Smooth background (two-colour gradient with a low-frequency ripple) and
/// one to three filled objects: rectangles or ellipses with a soft shading.
pub fn synthetic_scene(height: usize, width: usize, seed: u64) -> CorpusItem {
    let mut rng = NoiseRng::new(seed);
    let color = |rng: &mut NoiseRng| [0; 3].map(|_: u8| rng.uniform_range(20.0, 235.0));
    let c0 = color(&mut rng);
    let c1 = color(&mut rng);
    let angle = rng.uniform_range(0.0, std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let freq = rng.uniform_range(0.5, 2.0);
    let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
    let mut px = vec![0.0f64; height * width * 3];
    let diag = ((height * height + width * width) as f64).sqrt();
    for y in 0..height {
        for x in 0..width {
            let t = ((x as f64 - width as f64 / 2.0) * ca + (y as f64 - height as f64 / 2.0) * sa)
                / diag
                + 0.5;
            let ripple =
                12.0 * (std::f64::consts::TAU * freq * y as f64 / height as f64 + phase).sin();
            for c in 0..3 {
                px[(y * width + x) * 3 + c] = c0[c] * (1.0 - t) + c1[c] * t + ripple;
            }
        }
    }
    let n_obj = 1 + rng.below(3);
    let mut boxes = Vec::with_capacity(n_obj);
    for _ in 0..n_obj {
        let h = (height as f64 * rng.uniform_range(0.2, 0.45)) as usize;
        let w = (width as f64 * rng.uniform_range(0.2, 0.45)) as usize;
        let y0 = rng.below(height - h + 1);
        let x0 = rng.below(width - w + 1);
        let ellipse = rng.bit() == 1;
        let fill = color(&mut rng);
        let (cy, cx) = (y0 as f64 + h as f64 / 2.0, x0 as f64 + w as f64 / 2.0);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let dy = (y as f64 + 0.5 - cy) / (h as f64 / 2.0);
                let dx = (x as f64 + 0.5 - cx) / (w as f64 / 2.0);
                if ellipse && dy * dy + dx * dx > 1.0 {
                    continue;
                }
                let shade = 1.0 - 0.25 * (dy * dy + dx * dx).min(1.0);
                for c in 0..3 {
                    px[(y * width + x) * 3 + c] = fill[c] * shade;
                }
            }
        }
        boxes.push(BoundingBox {
            class_id: if ellipse { 2 } else { 1 },
            x: x0,
            y: y0,
            w,
            h,
        });
    }
    let pixels = px
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    CorpusItem {
        name: format!("synthetic-{seed:016x}"),
        image: ImageTensor::new(height, width, 3, pixels).expect("consistent size"),
        regions: RegionAnnotation::new(boxes),
    }
}

/// `count` scenes whose seeds derive from `seed` and their index.
pub fn synthetic_corpus(count: usize, height: usize, width: usize, seed: u64) -> Vec<CorpusItem> {
    (0..count)
        .map(|i| synthetic_scene(height, width, split_seed(seed, i as u64, 0)))
        .collect()
}

/// Loads every `.ppm`/`.pgm` in a directory (sorted by file name). A file
/// `name.boxes` next to `name.ppm` supplies annotations.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<CorpusItem>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("ppm" | "pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::NotFound(format!(
            "no PNM images in {}",
            dir.as_ref().display()
        )));
    }
    let mut items = Vec::with_capacity(paths.len());
    for p in paths {
        let image = ImageTensor::read_pnm(&p)?;
        let boxes = p.with_extension("boxes");
        let regions = if boxes.exists() {
            RegionAnnotation::read(&boxes, image.height(), image.width())?
        } else {
            RegionAnnotation::empty()
        };
        items.push(CorpusItem {
            name: p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            image,
            regions,
        });
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_annotated() {
        let a = synthetic_corpus(4, 64, 64, 3);
        let b = synthetic_corpus(4, 64, 64, 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert!(!x.regions.is_empty());
            x.regions.validate(64, 64).unwrap();
        }
        assert_ne!(a[0].image, a[1].image);
    }

    #[test]
    fn load_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let item = synthetic_scene(32, 32, 1);
        item.image.write_pnm(dir.path().join("a.ppm")).unwrap();
        std::fs::write(dir.path().join("a.boxes"), item.regions.to_text()).unwrap();
        let loaded = load_dir(dir.path()).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].image, item.image);
        assert_eq!(loaded[0].regions.boxes, item.regions.boxes);
    }
}

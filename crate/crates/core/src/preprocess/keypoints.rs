//! Difference-of-Gaussians scale-space extrema, counted per patch.
//!
//! Only detection is implemented; there are no orientations or descriptors.
//! Every arithmetic step is written so that a 180° rotation of the input
//! produces bit-identical responses at the mirrored locations: the Gaussian
//! filter sums symmetric tap pairs, decimation is a 2×2 box mean and the
//! Hessian terms combine mirrored samples before subtracting.

use crate::image::ImageTensor;

use super::PatchGrid;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DogParams {
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub sigma0: f64,
    /// Assumed blur already present in the input.
    pub input_sigma: f64,
    pub contrast_threshold: f64,
    pub edge_ratio: f64,
}

impl Default for DogParams {
    fn default() -> Self {
        Self {
            octaves: 3,
            scales_per_octave: 3,
            sigma0: 1.6,
            input_sigma: 0.5,
            contrast_threshold: 0.03,
            edge_ratio: 10.0,
        }
    }
}

/// A detected extremum in full-resolution pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub y: usize,
    pub x: usize,
    pub octave: usize,
    pub scale: usize,
    pub response: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (0..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    // normalize as a full symmetric kernel; k[0] is the centre tap
    let total = k[0] + 2.0 * k[1..].iter().sum::<f64>();
    for v in &mut k {
        *v /= total;
    }
    k
}

fn blur(p: &Plane, sigma: f64) -> Plane {
    let k = gaussian_kernel(sigma);
    let r = k.len() - 1;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; p.h * p.w];
    for y in 0..p.h {
        let row = &p.data[y * p.w..(y + 1) * p.w];
        for x in 0..p.w {
            let mut acc = k[0] * row[x];
            for (t, &kt) in k.iter().enumerate().take(r + 1).skip(1) {
                let a = row[clamp(x as isize - t as isize, p.w)];
                let b = row[clamp(x as isize + t as isize, p.w)];
                acc += kt * (a + b);
            }
            tmp[y * p.w + x] = acc;
        }
    }
    let mut out = vec![0.0; p.h * p.w];
    for y in 0..p.h {
        for x in 0..p.w {
            let mut acc = k[0] * tmp[y * p.w + x];
            for (t, &kt) in k.iter().enumerate().take(r + 1).skip(1) {
                let a = tmp[clamp(y as isize - t as isize, p.h) * p.w + x];
                let b = tmp[clamp(y as isize + t as isize, p.h) * p.w + x];
                acc += kt * (a + b);
            }
            out[y * p.w + x] = acc;
        }
    }
    Plane {
        h: p.h,
        w: p.w,
        data: out,
    }
}

fn decimate(p: &Plane) -> Plane {
    let (h, w) = (p.h / 2, p.w / 2);
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let top = p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1);
            let bottom = p.at(2 * y + 1, 2 * x) + p.at(2 * y + 1, 2 * x + 1);
            data.push((top + bottom) * 0.25);
        }
    }
    Plane { h, w, data }
}

/// Gaussian stack per octave: `scales_per_octave + 3` levels each.
pub(crate) fn gaussian_pyramid(luma: Plane, params: &DogParams) -> Vec<Vec<Plane>> {
    let s = params.scales_per_octave;
    let k = 2f64.powf(1.0 / s as f64);
    let sigmas: Vec<f64> = (0..s + 3)
        .map(|i| params.sigma0 * k.powi(i as i32))
        .collect();
    let mut octaves = Vec::new();
    let init = (params.sigma0.powi(2) - params.input_sigma.powi(2))
        .max(0.01)
        .sqrt();
    let mut base = blur(&luma, init);
    for o in 0..params.octaves {
        if base.h < 3 || base.w < 3 {
            break;
        }
        let mut stack = vec![base.clone()];
        for i in 1..s + 3 {
            let inc = (sigmas[i].powi(2) - sigmas[i - 1].powi(2)).sqrt();
            let next = blur(&stack[i - 1], inc);
            stack.push(next);
        }
        let can_halve =
            base.h.is_multiple_of(2) && base.w.is_multiple_of(2) && base.h >= 6 && base.w >= 6;
        let seed = stack[s].clone();
        octaves.push(stack);
        if o + 1 < params.octaves {
            if !can_halve {
                break;
            }
            base = decimate(&seed);
        }
    }
    octaves
}

pub(crate) fn dog_stack(gauss: &[Plane]) -> Vec<Plane> {
    gauss
        .windows(2)
        .map(|w| Plane {
            h: w[0].h,
            w: w[0].w,
            data: w[1]
                .data
                .iter()
                .zip(&w[0].data)
                .map(|(a, b)| a - b)
                .collect(),
        })
        .collect()
}

fn is_extremum(dogs: &[Plane], i: usize, y: usize, x: usize) -> bool {
    let v = dogs[i].at(y, x);
    let mut is_max = true;
    let mut is_min = true;
    for (di, plane) in dogs[i - 1..=i + 1].iter().enumerate() {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if di == 1 && yy == y && xx == x {
                    continue;
                }
                let n = plane.at(yy, xx);
                if n >= v {
                    is_max = false;
                }
                if n <= v {
                    is_min = false;
                }
            }
        }
        if !is_max && !is_min {
            return false;
        }
    }
    is_max || is_min
}

fn passes_edge_test(d: &Plane, y: usize, x: usize, ratio: f64) -> bool {
    let c = d.at(y, x);
    let dxx = (d.at(y, x + 1) + d.at(y, x - 1)) - 2.0 * c;
    let dyy = (d.at(y + 1, x) + d.at(y - 1, x)) - 2.0 * c;
    let dxy = ((d.at(y + 1, x + 1) + d.at(y - 1, x - 1))
        - (d.at(y + 1, x - 1) + d.at(y - 1, x + 1)))
        * 0.25;
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    det > 0.0 && tr * tr * ratio < (ratio + 1.0).powi(2) * det
}

/// All DoG extrema of the image's luma channel.
pub fn detect_keypoint_locations(img: &ImageTensor, params: &DogParams) -> Vec<Keypoint> {
    let luma = Plane {
        h: img.height(),
        w: img.width(),
        data: img.luma(),
    };
    let pyramid = gaussian_pyramid(luma, params);
    let mut out = Vec::new();
    for (o, gauss) in pyramid.iter().enumerate() {
        let dogs = dog_stack(gauss);
        let (h, w) = (dogs[0].h, dogs[0].w);
        if h < 3 || w < 3 {
            continue;
        }
        for i in 1..dogs.len() - 1 {
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let v = dogs[i].at(y, x);
                    if v.abs() < params.contrast_threshold {
                        continue;
                    }
                    if is_extremum(&dogs, i, y, x)
                        && passes_edge_test(&dogs[i], y, x, params.edge_ratio)
                    {
                        out.push(Keypoint {
                            y: y << o,
                            x: x << o,
                            octave: o,
                            scale: i,
                            response: v,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Number of keypoints falling in each patch (row-major patch order).
pub fn detect_keypoints(img: &ImageTensor, grid: &PatchGrid, params: &DogParams) -> Vec<u32> {
    let mut counts = vec![0u32; grid.count()];
    for kp in detect_keypoint_locations(img, params) {
        counts[grid.patch_of(kp.y, kp.x)] += 1;
    }
    counts
}

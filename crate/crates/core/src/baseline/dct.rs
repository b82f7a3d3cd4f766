//! Fixed-budget 8×8 block-DCT image codec.
//!
//! Colour images go to YCbCr with 2×2 chroma averaging. Coefficients are
//! quantized with the usual luma/chroma tables scaled by a quality index,
//! then written per block in zig-zag order as an Exp-Golomb count of coded
//! coefficients followed by signed Exp-Golomb values (DC as a difference from
//! the previous block of the same plane).
//!
//! Header: height u16, width u16, channels-1 u2, quality u8.

use std::sync::OnceLock;

use super::bits::{BitReader, BitWriter};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

pub const HEADER_BITS: usize = 16 + 16 + 2 + 8;
pub const MAX_QUALITY: u8 = 255;

const LUMA_Q: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., 12., 12., 14., 19., 26., 58., 60., 55., 14., 13., 16.,
    24., 40., 57., 69., 56., 14., 17., 22., 29., 51., 87., 80., 62., 18., 22., 37., 56., 68., 109.,
    103., 77., 24., 35., 55., 64., 81., 104., 113., 92., 49., 64., 78., 87., 103., 121., 120.,
    101., 72., 92., 95., 98., 112., 100., 103., 99.,
];
const CHROMA_Q: [f64; 64] = [
    17., 18., 24., 47., 99., 99., 99., 99., 18., 21., 26., 66., 99., 99., 99., 99., 24., 26., 56.,
    99., 99., 99., 99., 99., 47., 66., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99.,
    99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99., 99.,
    99., 99., 99., 99., 99., 99., 99.,
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedImage {
    pub quality: u8,
    pub bits: Vec<u8>,
}

/// Quantizer step multiplier; halves every 16 quality steps.
pub fn quality_scale(q: u8) -> f64 {
    2f64.powf((128.0 - q as f64) / 16.0)
}

fn zigzag() -> &'static [usize; 64] {
    static Z: OnceLock<[usize; 64]> = OnceLock::new();
    Z.get_or_init(|| {
        let mut z = [0usize; 64];
        let mut i = 0;
        for s in 0..15usize {
            let range: Vec<usize> = (0..8).filter(|&r| s >= r && s - r < 8).collect();
            let rows: Vec<usize> = if s % 2 == 0 {
                range.into_iter().rev().collect()
            } else {
                range
            };
            for r in rows {
                z[i] = r * 8 + (s - r);
                i += 1;
            }
        }
        z
    })
}

fn dct_basis() -> &'static [[f64; 8]; 8] {
    static B: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    B.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (k, row) in b.iter_mut().enumerate() {
            let a = if k == 0 {
                (1.0f64 / 8.0).sqrt()
            } else {
                (2.0f64 / 8.0).sqrt()
            };
            for (n, v) in row.iter_mut().enumerate() {
                *v = a * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
            }
        }
        b
    })
}

/// Orthonormal 2-D DCT-II of an 8×8 block (row-major).
pub fn dct8x8(block: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for k in 0..8 {
            tmp[y * 8 + k] = (0..8).map(|n| b[k][n] * block[y * 8 + n]).sum();
        }
    }
    let mut out = [0.0; 64];
    for k in 0..8 {
        for x in 0..8 {
            out[k * 8 + x] = (0..8).map(|n| b[k][n] * tmp[n * 8 + x]).sum();
        }
    }
    out
}

pub fn idct8x8(coef: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for n in 0..8 {
        for x in 0..8 {
            tmp[n * 8 + x] = (0..8).map(|k| b[k][n] * coef[k * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for n in 0..8 {
            out[y * 8 + n] = (0..8).map(|k| b[k][n] * tmp[y * 8 + k]).sum();
        }
    }
    out
}

struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

fn planes(img: &ImageTensor) -> Vec<Plane> {
    let (h, w) = (img.height(), img.width());
    if img.channels() != 3 {
        return (0..img.channels())
            .map(|c| Plane {
                h,
                w,
                v: (0..h * w)
                    .map(|i| img.pixels()[i * img.channels() + c] as f64)
                    .collect(),
            })
            .collect();
    }
    let px = img.pixels();
    let mut y = vec![0.0; h * w];
    let mut cb = vec![0.0; h * w];
    let mut cr = vec![0.0; h * w];
    for i in 0..h * w {
        let (r, g, b) = (px[3 * i] as f64, px[3 * i + 1] as f64, px[3 * i + 2] as f64);
        y[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        cb[i] = 128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b;
        cr[i] = 128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b;
    }
    let (ch, cw) = (h.div_ceil(2), w.div_ceil(2));
    let sub = |p: &[f64]| {
        let mut out = vec![0.0; ch * cw];
        for yy in 0..ch {
            for xx in 0..cw {
                let mut s = 0.0;
                let mut n = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (sy, sx) = (2 * yy + dy, 2 * xx + dx);
                        if sy < h && sx < w {
                            s += p[sy * w + sx];
                            n += 1.0;
                        }
                    }
                }
                out[yy * cw + xx] = s / n;
            }
        }
        out
    };
    vec![
        Plane { h, w, v: y },
        Plane {
            h: ch,
            w: cw,
            v: sub(&cb),
        },
        Plane {
            h: ch,
            w: cw,
            v: sub(&cr),
        },
    ]
}

fn plane_blocks(p: &Plane) -> (usize, usize) {
    (p.h.div_ceil(8), p.w.div_ceil(8))
}

fn table(plane: usize, channels: usize) -> &'static [f64; 64] {
    if channels == 3 && plane > 0 {
        &CHROMA_Q
    } else {
        &LUMA_Q
    }
}

fn encode_with(img: &ImageTensor, quality: u8) -> Vec<u8> {
    let c = img.channels();
    let mut w = BitWriter::new();
    w.put(img.height() as u64, 16);
    w.put(img.width() as u64, 16);
    w.put((c - 1) as u64, 2);
    w.put(quality as u64, 8);
    let scale = quality_scale(quality);
    let zz = zigzag();
    for (pi, p) in planes(img).iter().enumerate() {
        let q = table(pi, c);
        let (by, bx) = plane_blocks(p);
        let mut prev_dc = 0i64;
        for byi in 0..by {
            for bxi in 0..bx {
                let mut block = [0.0; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        let sy = (byi * 8 + y).min(p.h - 1);
                        let sx = (bxi * 8 + x).min(p.w - 1);
                        block[y * 8 + x] = p.v[sy * p.w + sx] - 128.0;
                    }
                }
                let coef = dct8x8(&block);
                let mut qz = [0i64; 64];
                for i in 0..64 {
                    let z = zz[i];
                    qz[i] = (coef[z] / (q[z] * scale).max(1e-3)).round() as i64;
                }
                let dc = qz[0];
                qz[0] -= prev_dc;
                prev_dc = dc;
                let count = qz.iter().rposition(|&v| v != 0).map_or(0, |i| i + 1);
                w.put_exp_golomb(count as u64);
                for &v in &qz[..count] {
                    w.put_signed(v);
                }
            }
        }
    }
    w.bits
}

/// Picks the finest quality whose stream fits `bit_budget`, then zero-pads
/// the stream to exactly `bit_budget` bits.
pub fn dct_compress(img: &ImageTensor, bit_budget: usize) -> Result<CompressedImage> {
    if img.height() >= 1 << 16 || img.width() >= 1 << 16 || img.channels() > 4 || img.is_empty() {
        return Err(Error::InvalidInput(format!(
            "unsupported image {}",
            img.shape_string()
        )));
    }
    if bit_budget < HEADER_BITS {
        return Err(Error::Capacity(format!(
            "budget {bit_budget} below the {HEADER_BITS}-bit header"
        )));
    }
    let fits = |q: u8| {
        let b = encode_with(img, q);
        (b.len() <= bit_budget).then_some(b)
    };
    let Some(mut best) = fits(0) else {
        return Err(Error::Capacity(format!(
            "no quality fits {bit_budget} bits"
        )));
    };
    let mut best_q = 0u8;
    let (mut lo, mut hi) = (0u16, MAX_QUALITY as u16 + 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        match fits(mid as u8) {
            Some(b) => {
                lo = mid;
                best = b;
                best_q = mid as u8;
            }
            None => hi = mid,
        }
    }
    // stream size is not strictly monotone in quality; probe a few above
    for q in (best_q as u16 + 1)..=(best_q as u16 + 4).min(MAX_QUALITY as u16) {
        if let Some(b) = fits(q as u8) {
            best = b;
            best_q = q as u8;
        }
    }
    best.resize(bit_budget, 0);
    Ok(CompressedImage {
        quality: best_q,
        bits: best,
    })
}

/// Strict decode; any inconsistency is an error.
pub fn dct_decompress(c: &CompressedImage) -> Result<ImageTensor> {
    decompress_bits(&c.bits, None)
}

/// Best-effort decode of a possibly corrupted stream: header fields must be
/// sane, blocks past the first parse error come out flat grey.
pub fn dct_decompress_lenient(
    bits: &[u8],
    height: usize,
    width: usize,
    channels: usize,
) -> ImageTensor {
    match decompress_bits(bits, Some((height, width, channels))) {
        Ok(img) if img.height() == height && img.width() == width && img.channels() == channels => {
            img
        }
        _ => ImageTensor::from_fn(height, width, channels, |_, _, _| 128),
    }
}

/// With `known` set the decode is lenient: the shape comes from the caller
/// (a corrupted header cannot resize the image) and a parse error leaves the
/// remaining blocks flat grey.
fn decompress_bits(bits: &[u8], known: Option<(usize, usize, usize)>) -> Result<ImageTensor> {
    let lenient = known.is_some();
    let mut r = BitReader::new(bits);
    let mut h = r.get(16)? as usize;
    let mut w = r.get(16)? as usize;
    let mut c = r.get(2)? as usize + 1;
    let quality = r.get(8)? as u8;
    if let Some((kh, kw, kc)) = known {
        (h, w, c) = (kh, kw, kc);
    }
    if h == 0 || w == 0 || h * w > 1 << 24 {
        return Err(Error::Malformed(format!("implausible image size {h}x{w}")));
    }
    if c != 1 && c != 3 {
        return Err(Error::Malformed(format!("unsupported channel count {c}")));
    }
    let scale = quality_scale(quality);
    let zz = zigzag();
    let dims: Vec<(usize, usize)> = if c == 3 {
        vec![
            (h, w),
            (h.div_ceil(2), w.div_ceil(2)),
            (h.div_ceil(2), w.div_ceil(2)),
        ]
    } else {
        vec![(h, w); c]
    };
    let mut failed = false;
    let mut out_planes = Vec::with_capacity(c);
    for (pi, &(ph, pw)) in dims.iter().enumerate() {
        let q = table(pi, c);
        let mut v = vec![128.0; ph * pw];
        let (by, bx) = (ph.div_ceil(8), pw.div_ceil(8));
        let mut prev_dc = 0i64;
        for byi in 0..by {
            for bxi in 0..bx {
                if failed {
                    continue;
                }
                let parsed = (|| -> Result<[i64; 64]> {
                    let count = r.get_exp_golomb()? as usize;
                    if count > 64 {
                        return Err(Error::Malformed(format!("block count {count} > 64")));
                    }
                    let mut qz = [0i64; 64];
                    for slot in qz.iter_mut().take(count) {
                        *slot = r.get_signed()?;
                    }
                    Ok(qz)
                })();
                let mut qz = match parsed {
                    Ok(qz) => qz,
                    Err(e) if lenient => {
                        log::debug!("lenient decode stopped: {e}");
                        failed = true;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                qz[0] += prev_dc;
                prev_dc = qz[0];
                let mut coef = [0.0; 64];
                for i in 0..64 {
                    let z = zz[i];
                    coef[z] = qz[i] as f64 * q[z] * scale;
                }
                let px = idct8x8(&coef);
                for y in 0..8 {
                    for x in 0..8 {
                        let (sy, sx) = (byi * 8 + y, bxi * 8 + x);
                        if sy < ph && sx < pw {
                            v[sy * pw + sx] = px[y * 8 + x] + 128.0;
                        }
                    }
                }
            }
        }
        out_planes.push(Plane { h: ph, w: pw, v });
    }
    let mut img = ImageTensor::zeros(h, w, c);
    let to_u8 = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    if c == 3 {
        let (yp, cb, cr) = (&out_planes[0], &out_planes[1], &out_planes[2]);
        for y in 0..h {
            for x in 0..w {
                let l = yp.v[y * w + x];
                let ci = (y / 2) * cb.w + x / 2;
                let (b, r_) = (cb.v[ci] - 128.0, cr.v[ci] - 128.0);
                img.set(y, x, 0, to_u8(l + 1.402 * r_));
                img.set(y, x, 1, to_u8(l - 0.344_136 * b - 0.714_136 * r_));
                img.set(y, x, 2, to_u8(l + 1.772 * b));
            }
        }
    } else {
        for (ch, p) in out_planes.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    img.set(y, x, ch, to_u8(p.v[y * w + x]));
                }
            }
        }
    }
    Ok(img)
}

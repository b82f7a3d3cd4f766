//! 8-bit raster images, PPM/PGM I/O and box annotations.

use std::fs;
use std::path::Path;

use crate::error::{shape_err, Error, Result};

/// Row-major `height × width × channels` 8-bit image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("empty image".into()));
        }
        if pixels.len() != height * width * channels {
            return shape_err(height * width * channels, pixels.len());
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::new(height, width, channels, vec![0; height * width * channels])
            .expect("valid dimensions")
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Self {
        let mut pixels = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, pixels).expect("valid dimensions")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: u8) {
        let i = self.index(y, x, c);
        self.pixels[i] = v;
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            shape_err(self.shape_string(), other.shape_string())
        }
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }

    /// Pixel values scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }

    /// Inverse of [`to_unit`](Self::to_unit): clamps to `[0, 1]` and rounds to 8 bits.
    pub fn from_unit(height: usize, width: usize, channels: usize, values: &[f64]) -> Result<Self> {
        let pixels = values.iter().map(|&v| unit_to_u8(v)).collect();
        Self::new(height, width, channels, pixels)
    }

    pub fn rotate_180(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.set(
                        self.height - 1 - y,
                        self.width - 1 - x,
                        c,
                        self.get(y, x, c),
                    );
                }
            }
        }
        out
    }

    /// Luma in `[0, 1]`, one value per pixel.
    pub fn luma(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.to_unit();
        }
        self.pixels
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
            .collect()
    }

    pub fn parse_pnm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos)?;
        let channels = match magic.as_str() {
            "P6" => 3,
            "P5" => 1,
            other => return Err(Error::Malformed(format!("unsupported PNM magic {other:?}"))),
        };
        let width: usize = parse_num(&next_token(bytes, &mut pos)?)?;
        let height: usize = parse_num(&next_token(bytes, &mut pos)?)?;
        let maxval: usize = parse_num(&next_token(bytes, &mut pos)?)?;
        if maxval != 255 {
            return Err(Error::Malformed(format!(
                "only maxval 255 supported, got {maxval}"
            )));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let need = width * height * channels;
        if bytes.len() < pos + need {
            return Err(Error::Malformed(format!(
                "truncated raster: need {need} bytes, have {}",
                bytes.len().saturating_sub(pos)
            )));
        }
        Self::new(height, width, channels, bytes[pos..pos + need].to_vec())
    }

    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn read_pnm(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_pnm(&fs::read(path)?)
    }

    pub fn write_pnm(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_pnm())?;
        Ok(())
    }
}

#[inline]
pub fn unit_to_u8(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Malformed("unexpected end of PNM header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Malformed(format!("bad number {s:?}")))
}

/// Axis-aligned object box in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundingBox {
    pub class_id: u8,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y && y < self.y + self.h && x >= self.x && x < self.x + self.w
    }

    /// True if the box shares at least one pixel with the rectangle.
    pub fn intersects(&self, y0: usize, x0: usize, h: usize, w: usize) -> bool {
        self.w > 0
            && self.h > 0
            && self.x < x0 + w
            && x0 < self.x + self.w
            && self.y < y0 + h
            && y0 < self.y + self.h
    }
}

/// Object boxes for one image, ingested in place of live detection.
///
/// Detection thresholds are kept as metadata only; they describe how the
/// boxes were produced and are never applied here.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegionAnnotation {
    pub boxes: Vec<BoundingBox>,
    pub iou_threshold: f64,
    pub confidence_threshold: f64,
}

impl RegionAnnotation {
    pub const IOU_THRESHOLD: f64 = 0.3;
    pub const CONFIDENCE_THRESHOLD: f64 = 0.5;

    pub fn new(boxes: Vec<BoundingBox>) -> Self {
        Self {
            boxes,
            iou_threshold: Self::IOU_THRESHOLD,
            confidence_threshold: Self::CONFIDENCE_THRESHOLD,
        }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        for b in &self.boxes {
            if !(1..=80).contains(&b.class_id) {
                return Err(Error::OutOfRange(format!(
                    "class_id {} not in 1..=80",
                    b.class_id
                )));
            }
            if b.x + b.w > width || b.y + b.h > height {
                return Err(Error::OutOfRange(format!(
                    "box {b:?} exceeds {height}x{width} image"
                )));
            }
        }
        Ok(())
    }

    /// Parses `class_id x y w h` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, height: usize, width: usize) -> Result<Self> {
        let mut boxes = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(Error::Malformed(format!(
                    "line {}: expected 5 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let n = |i: usize| -> Result<usize> {
                fields[i].parse().map_err(|_| {
                    Error::Malformed(format!("line {}: bad integer {:?}", lineno + 1, fields[i]))
                })
            };
            let class = n(0)?;
            if class > 255 {
                return Err(Error::OutOfRange(format!("class_id {class}")));
            }
            boxes.push(BoundingBox {
                class_id: class as u8,
                x: n(1)?,
                y: n(2)?,
                w: n(3)?,
                h: n(4)?,
            });
        }
        let ann = Self::new(boxes);
        ann.validate(height, width)?;
        Ok(ann)
    }

    pub fn to_text(&self) -> String {
        self.boxes
            .iter()
            .map(|b| format!("{} {} {} {} {}\n", b.class_id, b.x, b.y, b.w, b.h))
            .collect()
    }

    pub fn read(path: impl AsRef<Path>, height: usize, width: usize) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, height, width)
    }

    /// Fraction of image pixels covered by the union of all boxes.
    pub fn area_fraction(&self, height: usize, width: usize) -> f64 {
        if self.boxes.is_empty() {
            return 0.0;
        }
        let mut covered = 0usize;
        for y in 0..height {
            for x in 0..width {
                if self.boxes.iter().any(|b| b.contains(y, x)) {
                    covered += 1;
                }
            }
        }
        covered as f64 / (height * width) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pnm_round_trip() {
        let img = ImageTensor::from_fn(5, 7, 3, |y, x, c| (y * 31 + x * 7 + c) as u8);
        let back = ImageTensor::parse_pnm(&img.to_pnm()).unwrap();
        assert_eq!(img, back);
        let gray = ImageTensor::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as u8);
        assert_eq!(ImageTensor::parse_pnm(&gray.to_pnm()).unwrap(), gray);
    }

    #[test]
    fn pnm_with_comment() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = ImageTensor::parse_pnm(&bytes).unwrap();
        assert_eq!(img.get(0, 1, 2), 6);
    }

    #[test]
    fn pnm_truncated_rejected() {
        let bytes = b"P6\n2 2\n255\n\x01\x02".to_vec();
        assert!(ImageTensor::parse_pnm(&bytes).is_err());
    }

    #[test]
    fn annotations_parse_and_validate() {
        let ann = RegionAnnotation::parse("17 0 0 16 16\n# dog\n\n1 10 20 5 5\n", 64, 64).unwrap();
        assert_eq!(ann.boxes.len(), 2);
        assert_eq!(ann.boxes[1].y, 20);
        assert!(RegionAnnotation::parse("0 0 0 1 1", 8, 8).is_err());
        assert!(RegionAnnotation::parse("81 0 0 1 1", 8, 8).is_err());
        assert!(RegionAnnotation::parse("5 4 4 8 8", 8, 8).is_err());
        assert!(RegionAnnotation::parse("5 4 4", 8, 8).is_err());
        let text = ann.to_text();
        assert_eq!(
            RegionAnnotation::parse(&text, 64, 64).unwrap().boxes,
            ann.boxes
        );
    }

    #[test]
    fn union_area() {
        let ann = RegionAnnotation::new(vec![
            BoundingBox {
                class_id: 1,
                x: 0,
                y: 0,
                w: 4,
                h: 4,
            },
            BoundingBox {
                class_id: 1,
                x: 2,
                y: 2,
                w: 4,
                h: 4,
            },
        ]);
        assert!((ann.area_fraction(8, 8) - 28.0 / 64.0).abs() < 1e-12);
    }
}

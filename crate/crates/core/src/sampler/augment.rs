//! Search-side augmentation: shift, resize, grayscale and motion blur.

use std::f64::consts::PI;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::BBox;
use crate::error::{Result, TrackError};

#[derive(Debug, Clone, PartialEq)]
pub struct MotionBlurConfig {
    /// Kernel lengths in pixels, drawn uniformly.
    pub lengths: Vec<u32>,
    pub probability: f64,
}

impl Default for MotionBlurConfig {
    fn default() -> Self {
        Self {
            lengths: vec![3, 5, 7, 9],
            probability: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Per-axis shift bound in pixels.
    pub max_translation: f64,
    pub resize_range: (f64, f64),
    pub grayscale_prob: f64,
    pub motion_blur: MotionBlurConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_translation: 12.0,
            resize_range: (0.85, 1.15),
            grayscale_prob: 0.25,
            motion_blur: MotionBlurConfig::default(),
        }
    }
}

fn is_prob(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.resize_range;
        if !(self.max_translation >= 0.0 && self.max_translation.is_finite()) {
            return Err(TrackError::arg("max_translation must be finite and non-negative"));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(TrackError::arg(format!("bad resize range ({lo}, {hi})")));
        }
        if !is_prob(self.grayscale_prob) || !is_prob(self.motion_blur.probability) {
            return Err(TrackError::arg("probabilities must lie in [0, 1]"));
        }
        if self.motion_blur.probability > 0.0
            && (self.motion_blur.lengths.is_empty() || self.motion_blur.lengths.contains(&0))
        {
            return Err(TrackError::arg("motion blur needs positive kernel lengths"));
        }
        Ok(())
    }
}

/// One applied operation with its exact parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugOp {
    Translate { dx: f64, dy: f64 },
    Resize { factor: f64 },
    Grayscale,
    /// Linear box kernel; `angle` in radians from the x axis.
    MotionBlur { length: u32, angle: f64 },
}

impl fmt::Display for AugOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugOp::Translate { dx, dy } => write!(f, "translate={dx},{dy}"),
            AugOp::Resize { factor } => write!(f, "resize={factor}"),
            AugOp::Grayscale => write!(f, "grayscale=1"),
            AugOp::MotionBlur { length, angle } => write!(f, "blur={length},{angle}"),
        }
    }
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| TrackError::arg(format!("bad {what} {s:?}")))
}

fn pair<'a>(v: &'a str, what: &str) -> Result<(&'a str, &'a str)> {
    v.split_once(',')
        .ok_or_else(|| TrackError::arg(format!("{what} expects two values, got {v:?}")))
}

impl AugOp {
    pub fn parse(s: &str) -> Result<Self> {
        let (op, v) = s
            .split_once('=')
            .ok_or_else(|| TrackError::arg(format!("expected op=value, got {s:?}")))?;
        match op {
            "translate" => {
                let (a, b) = pair(v, op)?;
                Ok(AugOp::Translate {
                    dx: num(a, "dx")?,
                    dy: num(b, "dy")?,
                })
            }
            "resize" => Ok(AugOp::Resize { factor: num(v, op)? }),
            "grayscale" if v == "1" => Ok(AugOp::Grayscale),
            "blur" => {
                let (a, b) = pair(v, op)?;
                Ok(AugOp::MotionBlur {
                    length: num(a, "blur length")?,
                    angle: num(b, "blur angle")?,
                })
            }
            _ => Err(TrackError::arg(format!("unknown augmentation {s:?}"))),
        }
    }
}

/// `op=val;op=val`; empty for no operations.
pub fn format_log(ops: &[AugOp]) -> String {
    ops.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

pub fn parse_log(s: &str) -> Result<Vec<AugOp>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(AugOp::parse).collect()
}

/// Draws one augmentation. Shift and resize are always present, grayscale
/// and blur only when drawn.
pub fn draw_augmentation<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Vec<AugOp> {
    let t = cfg.max_translation;
    let (lo, hi) = cfg.resize_range;
    let dx = rng.gen_range(-t..=t);
    let dy = rng.gen_range(-t..=t);
    let factor = rng.gen_range(lo..=hi);
    let mut ops = vec![AugOp::Translate { dx, dy }, AugOp::Resize { factor }];
    if rng.gen_bool(cfg.grayscale_prob) {
        ops.push(AugOp::Grayscale);
    }
    if rng.gen_bool(cfg.motion_blur.probability) {
        let length = *cfg.motion_blur.lengths.choose(rng).expect("validated lengths");
        ops.push(AugOp::MotionBlur {
            length,
            angle: rng.gen_range(0.0..PI),
        });
    }
    ops
}

/// Where a box lands after the geometric part of `ops`, for an image of
/// the given size. Resizing is about the image centre.
pub fn map_box(ops: &[AugOp], bbox: &BBox, width: usize, height: usize) -> BBox {
    let (ox, oy) = (width as f64 / 2.0, height as f64 / 2.0);
    let mut b = *bbox;
    for op in ops {
        match *op {
            AugOp::Translate { dx, dy } => b = b.with_center(b.cx + dx, b.cy + dy),
            AugOp::Resize { factor } => {
                b = BBox {
                    cx: ox + (b.cx - ox) * factor,
                    cy: oy + (b.cy - oy) * factor,
                    w: b.w * factor,
                    h: b.h * factor,
                }
            }
            AugOp::Grayscale | AugOp::MotionBlur { .. } => {}
        }
    }
    b
}

/// Interleaved RGB, row-major, values in whatever range the caller uses.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f32; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(TrackError::dim(format!(
                "image {width}x{height} with {} pixels",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }

    /// Bilinear sample at pixel-centre coordinates, clamped at the border.
    fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        let xmax = (self.width - 1) as f64;
        let ymax = (self.height - 1) as f64;
        let x = x.clamp(0.0, xmax);
        let y = y.clamp(0.0, ymax);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = self.get(x0, y0)[c] * (1.0 - fx) + self.get(x1, y0)[c] * fx;
            let bot = self.get(x0, y1)[c] * (1.0 - fx) + self.get(x1, y1)[c] * fx;
            *o = top * (1.0 - fy) + bot * fy;
        }
        out
    }

    fn warp(&self, f: impl Fn(f64, f64) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                data.push(f(x as f64, y as f64));
            }
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

fn luma(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// Applies `ops` in order; the output keeps the input size.
pub fn apply_augmentation(img: &RgbImage, ops: &[AugOp]) -> RgbImage {
    let (ox, oy) = (img.width as f64 / 2.0, img.height as f64 / 2.0);
    let mut out = img.clone();
    for op in ops {
        out = match *op {
            AugOp::Translate { dx, dy } => out.warp(|x, y| out.sample(x - dx, y - dy)),
            AugOp::Resize { factor } => out.warp(|x, y| {
                // pixel centres sit at +0.5
                let sx = ox + (x + 0.5 - ox) / factor - 0.5;
                let sy = oy + (y + 0.5 - oy) / factor - 0.5;
                out.sample(sx, sy)
            }),
            AugOp::Grayscale => {
                let mut g = out.clone();
                for p in &mut g.data {
                    let l = luma(*p);
                    *p = [l; 3];
                }
                g
            }
            AugOp::MotionBlur { length, angle } => {
                let (c, s) = (angle.cos(), angle.sin());
                let half = (length as f64 - 1.0) / 2.0;
                out.warp(|x, y| {
                    let mut acc = [0.0f32; 3];
                    for k in 0..length {
                        let t = k as f64 - half;
                        let p = out.sample(x + t * c, y + t * s);
                        for i in 0..3 {
                            acc[i] += p[i];
                        }
                    }
                    acc.map(|v| v / length as f32)
                })
            }
        };
    }
    out
}

/// Seeded draw plus application: identical seeds give identical output.
pub fn augment(img: &RgbImage, cfg: &AugmentConfig, seed: u64) -> Result<(RgbImage, Vec<AugOp>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = draw_augmentation(cfg, &mut rng);
    Ok((apply_augmentation(img, &ops), ops))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> RgbImage {
        let data = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f32, (i / w) as f32);
                [x, y, x + y]
            })
            .collect();
        RgbImage::new(w, h, data).unwrap()
    }

    #[test]
    fn log_roundtrip() {
        let ops = vec![
            AugOp::Translate { dx: -3.25, dy: 0.1 },
            AugOp::Resize { factor: 1.0 / 3.0 },
            AugOp::Grayscale,
            AugOp::MotionBlur { length: 7, angle: 2.5 },
        ];
        let s = format_log(&ops);
        assert_eq!(s.split(';').count(), 4);
        assert_eq!(parse_log(&s).unwrap(), ops);
        assert!(parse_log("").unwrap().is_empty());
        assert!(parse_log("spin=3").is_err());
    }

    #[test]
    fn integer_shift_moves_pixels() {
        let img = ramp(8, 6);
        let out = apply_augmentation(&img, &[AugOp::Translate { dx: 2.0, dy: 1.0 }]);
        assert_eq!(out.get(5, 3), img.get(3, 2));
    }

    #[test]
    fn unit_resize_and_unit_blur_are_identity() {
        let img = ramp(9, 7);
        let ops = [
            AugOp::Resize { factor: 1.0 },
            AugOp::MotionBlur { length: 1, angle: 0.3 },
        ];
        assert_eq!(apply_augmentation(&img, &ops), img);
    }

    #[test]
    fn grayscale_equalises_channels() {
        let out = apply_augmentation(&ramp(4, 4), &[AugOp::Grayscale]);
        assert!(out.pixels().iter().all(|p| p[0] == p[1] && p[1] == p[2]));
    }

    #[test]
    fn horizontal_blur_averages_a_row() {
        let img = ramp(10, 3);
        let out = apply_augmentation(&img, &[AugOp::MotionBlur { length: 3, angle: 0.0 }]);
        // linear in x, so the interior is unchanged
        assert!((out.get(5, 1)[0] - 5.0).abs() < 1e-5);
        // clamped border pulls the edge inward
        assert!((out.get(0, 1)[0] - 1.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn box_follows_resize_about_centre() {
        let b = BBox::new(60.0, 50.0, 10.0, 20.0).unwrap();
        let m = map_box(&[AugOp::Resize { factor: 2.0 }], &b, 100, 100);
        assert_eq!((m.cx, m.cy, m.w, m.h), (70.0, 50.0, 20.0, 40.0));
    }

    #[test]
    fn seeded_augment_is_reproducible() {
        let img = ramp(12, 12);
        let cfg = AugmentConfig::default();
        assert_eq!(augment(&img, &cfg, 9).unwrap(), augment(&img, &cfg, 9).unwrap());
        let bad = AugmentConfig {
            resize_range: (1.2, 1.0),
            ..cfg
        };
        assert!(augment(&img, &bad, 9).is_err());
    }
}

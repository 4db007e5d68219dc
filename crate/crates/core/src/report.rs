//! PNG overlays of predictions against ground truth.
//!
//! True positives are drawn orange, false positives red and false negatives
//! green over the grayscale image.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::{Error, Result};

pub const TP_COLOR: [u8; 3] = [255, 165, 0];
pub const FP_COLOR: [u8; 3] = [255, 0, 0];
pub const FN_COLOR: [u8; 3] = [0, 255, 0];
const ALPHA: f32 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    Tp,
    Fp,
    Fn,
    None,
}

fn outcome(pred: u8, gt: u8, class: u8) -> Outcome {
    match (pred == class, gt == class) {
        (true, true) => Outcome::Tp,
        (true, false) => Outcome::Fp,
        (false, true) => Outcome::Fn,
        (false, false) => Outcome::None,
    }
}

fn color(o: Outcome) -> Option<[u8; 3]> {
    match o {
        Outcome::Tp => Some(TP_COLOR),
        Outcome::Fp => Some(FP_COLOR),
        Outcome::Fn => Some(FN_COLOR),
        Outcome::None => None,
    }
}

fn shade(gray: u8, o: Outcome) -> Rgb<u8> {
    match color(o) {
        None => Rgb([gray; 3]),
        Some(c) => Rgb(c.map(|ch| (ALPHA * ch as f32 + (1.0 - ALPHA) * gray as f32).round() as u8)),
    }
}

/// Maps intensities onto `0..=255` with the volume's own min and max.
fn grayscale(image: &[f32]) -> Vec<u8> {
    let (lo, hi) = image.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(f32::EPSILON);
    image.iter().map(|&v| (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8).collect()
}

/// Inputs shared by every overlay.
pub struct OverlayInput<'a> {
    pub shape: [usize; 3],
    pub image: &'a [f32],
    pub pred: &'a [u8],
    pub gt: &'a [u8],
    /// Label code being visualized.
    pub class: u8,
}

impl OverlayInput<'_> {
    fn check(&self) -> Result<()> {
        let n: usize = self.shape.iter().product();
        if self.image.len() != n || self.pred.len() != n || self.gt.len() != n {
            return Err(Error::Shape(format!("overlay arrays do not match shape {:?}", self.shape)));
        }
        Ok(())
    }

    /// Axial slice `z` as a W×H image.
    pub fn slice(&self, z: usize) -> Result<RgbImage> {
        self.check()?;
        let [d, h, w] = self.shape;
        if z >= d {
            return Err(Error::Shape(format!("slice {z} outside depth {d}")));
        }
        let gray = grayscale(self.image);
        Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let i = (z * h + y as usize) * w + x as usize;
            shade(gray[i], outcome(self.pred[i], self.gt[i], self.class))
        }))
    }

    /// Slices tiled left to right, top to bottom, `cols` per row.
    pub fn montage(&self, slices: &[usize], cols: usize) -> Result<RgbImage> {
        let [_, h, w] = self.shape;
        let cols = cols.clamp(1, slices.len().max(1));
        let rows = slices.len().div_ceil(cols).max(1);
        let mut out = RgbImage::new((cols * w) as u32, (rows * h) as u32);
        for (k, &z) in slices.iter().enumerate() {
            let tile = self.slice(z)?;
            let (ox, oy) = ((k % cols * w) as i64, (k / cols * h) as i64);
            image::imageops::replace(&mut out, &tile, ox, oy);
        }
        Ok(out)
    }

    /// Maximum-intensity projection along depth; each ray shows its worst
    /// outcome (FN over FP over TP).
    pub fn mip(&self) -> Result<RgbImage> {
        self.check()?;
        let [d, h, w] = self.shape;
        let gray = grayscale(self.image);
        Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (mut g, mut worst) = (0u8, Outcome::None);
            for z in 0..d {
                let i = (z * h + y as usize) * w + x as usize;
                g = g.max(gray[i]);
                worst = match (worst, outcome(self.pred[i], self.gt[i], self.class)) {
                    (Outcome::Fn, _) | (_, Outcome::Fn) => Outcome::Fn,
                    (Outcome::Fp, _) | (_, Outcome::Fp) => Outcome::Fp,
                    (Outcome::Tp, _) | (_, Outcome::Tp) => Outcome::Tp,
                    _ => Outcome::None,
                };
            }
            shade(g, worst)
        }))
    }

    /// Up to `n` evenly spaced slices among those containing the class.
    pub fn representative_slices(&self, n: usize) -> Vec<usize> {
        let [d, h, w] = self.shape;
        let hits: Vec<usize> = (0..d).filter(|&z| self.gt[z * h * w..(z + 1) * h * w].contains(&self.class)).collect();
        let pool: Vec<usize> = if hits.is_empty() { (0..d).collect() } else { hits };
        let n = n.min(pool.len());
        (0..n).map(|k| pool[(2 * k + 1) * pool.len() / (2 * n)]).collect()
    }
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Pixels drawn with a given overlay color.
pub fn count_color(img: &RgbImage, base: [u8; 3]) -> usize {
    // blended colors are recognizable from the channel ordering alone
    img.pixels()
        .filter(|p| {
            let [r, g, b] = p.0;
            match base {
                FP_COLOR => r > g && r > b && g == b,
                FN_COLOR => g > r && g > b && r == b,
                TP_COLOR => r > g && g > b,
                _ => p.0 == base,
            }
        })
        .count()
}

//! Tone correction, histogram matching and the bilateral filter.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imagecore::{quantize, GrayImage};

/// Spatial and range widths of the bilateral filter.
///
/// `sigma_s` is in pixels. `sigma_r` is on the 8-bit (0-255) intensity
/// scale and is divided by 255 before use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilateralParams {
    pub sigma_s: f64,
    pub sigma_r: f64,
}

impl BilateralParams {
    pub fn new(sigma_s: f64, sigma_r: f64) -> Self {
        Self { sigma_s, sigma_r }
    }

    /// Returns the name of the first invalid field, if any. Widths above the
    /// recommended range (20 and 10) only log a warning.
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.sigma_s.is_finite() && self.sigma_s > 0.0) {
            return Err("sigma_s");
        }
        if !(self.sigma_r.is_finite() && self.sigma_r > 0.0) {
            return Err("sigma_r");
        }
        if self.sigma_s > 20.0 {
            warn!("sigma_s = {} exceeds the recommended maximum of 20", self.sigma_s);
        }
        if self.sigma_r > 10.0 {
            warn!("sigma_r = {} exceeds the recommended maximum of 10", self.sigma_r);
        }
        Ok(())
    }

    /// Half-width of the square window, `ceil(2 sigma_s)`.
    pub fn radius(&self) -> usize {
        (2.0 * self.sigma_s).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneParams {
    pub gamma: f64,
    pub brightness_gain: f64,
}

impl Default for ToneParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            brightness_gain: 1.0,
        }
    }
}

impl ToneParams {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err("gamma");
        }
        if !(self.brightness_gain.is_finite() && self.brightness_gain > 0.0) {
            return Err("brightness_gain");
        }
        Ok(())
    }
}

/// `clamp(v^gamma * gain, 0, 1)` per pixel.
pub fn adjust_tone(img: &GrayImage, p: ToneParams) -> GrayImage {
    let data = img
        .data()
        .iter()
        .map(|&v| (v.powf(p.gamma) * p.brightness_gain).clamp(0.0, 1.0))
        .collect();
    GrayImage::from_raw(img.width(), img.height(), data)
}

fn cdf256(img: &GrayImage) -> [f64; 256] {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[quantize(v) as usize] += 1;
    }
    let n = img.len() as f64;
    let mut cdf = [0.0; 256];
    let mut acc = 0u64;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc as f64 / n;
    }
    cdf
}

/// Monotone quantile mapping of the input's 8-bit histogram onto the
/// reference's: each input level goes to the smallest reference level whose
/// CDF reaches the input level's CDF.
pub fn histogram_match(input: &GrayImage, reference: &GrayImage) -> GrayImage {
    let src = cdf256(input);
    let dst = cdf256(reference);
    let mut lut = [0.0f64; 256];
    let mut k = 0usize;
    for (level, out) in lut.iter_mut().enumerate() {
        // both CDFs are non-decreasing, so k only moves forward
        while k < 255 && dst[k] < src[level] - 1e-12 {
            k += 1;
        }
        *out = k as f64 / 255.0;
    }
    let data = input.data().iter().map(|&v| lut[quantize(v) as usize]).collect();
    GrayImage::from_raw(input.width(), input.height(), data)
}

/// Direct evaluation of the bilateral filter over a square window of radius
/// `ceil(2 sigma_s)`, clipped at the image borders.
pub fn bilateral_filter(img: &GrayImage, p: BilateralParams) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let radius = p.radius() as isize;
    let side = (2 * radius + 1) as usize;
    let two_ss = 2.0 * p.sigma_s * p.sigma_s;
    let sigma_r = p.sigma_r / 255.0;
    let two_sr = 2.0 * sigma_r * sigma_r;
    let spatial: Vec<f64> = (-radius..=radius)
        .flat_map(|dy| {
            (-radius..=radius).map(move |dx| (-((dx * dx + dy * dy) as f64) / two_ss).exp())
        })
        .collect();
    let src = img.data();

    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let y0 = (y as isize - radius).max(0) as usize;
        let y1 = (y as isize + radius).min(h as isize - 1) as usize;
        for (x, slot) in row.iter_mut().enumerate() {
            let x0 = (x as isize - radius).max(0) as usize;
            let x1 = (x as isize + radius).min(w as isize - 1) as usize;
            let center = src[y * w + x];
            let mut num = 0.0;
            let mut den = 0.0;
            for qy in y0..=y1 {
                let krow = (qy as isize - y as isize + radius) as usize * side;
                let srow = &src[qy * w..qy * w + w];
                for qx in x0..=x1 {
                    let v = srow[qx];
                    let d = center - v;
                    let k = spatial[krow + (qx as isize - x as isize + radius) as usize]
                        * (-(d * d) / two_sr).exp();
                    num += k * v;
                    den += k;
                }
            }
            // the centre tap always has weight 1, so den >= 1
            *slot = (num / den).clamp(0.0, 1.0);
        }
    });
    GrayImage::from_raw(w, h, out)
}

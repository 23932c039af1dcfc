//! Grayscale morphology with disk structuring elements.
//!
//! All neighbourhoods are clipped to the image (equivalently: padded with
//! `+inf` for erosion and `-inf` for dilation) and all connectivity is
//! 8-connected.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::imagecore::GrayImage;

/// Disk of integer radius: every offset with `dx^2 + dy^2 <= radius^2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiskStrel {
    radius: usize,
    /// half-width of the disk row at vertical offset |dy|
    half_widths: Vec<usize>,
}

impl DiskStrel {
    /// # Panics
    /// If `radius` is zero.
    pub fn new(radius: usize) -> Self {
        assert!(radius >= 1, "disk radius must be at least 1");
        let r2 = radius * radius;
        let half_widths = (0..=radius)
            .map(|dy| {
                let mut w = 0;
                while (w + 1) * (w + 1) + dy * dy <= r2 {
                    w += 1;
                }
                w
            })
            .collect();
        Self {
            radius,
            half_widths,
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let r = self.radius as isize;
        let mut out = Vec::new();
        for dy in -r..=r {
            let w = self.half_widths[dy.unsigned_abs()] as isize;
            for dx in -w..=w {
                out.push((dx, dy));
            }
        }
        out
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryMask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(width * height, bits.len(), "mask shape mismatch");
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        BinaryMask::new(self.width, self.height, bits)
    }

    pub fn crop_rows(&self, start: usize, end: usize) -> BinaryMask {
        BinaryMask::new(
            self.width,
            end - start,
            self.bits[start * self.width..end * self.width].to_vec(),
        )
    }

    /// Vertical concatenation; widths must agree.
    pub fn stack(parts: &[&BinaryMask]) -> BinaryMask {
        let width = parts[0].width;
        assert!(parts.iter().all(|m| m.width == width), "mask widths differ");
        let bits = parts.iter().flat_map(|m| m.bits.iter().copied()).collect();
        BinaryMask::new(width, parts.iter().map(|m| m.height).sum(), bits)
    }

    /// White where set, black elsewhere.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_raw(
            self.width,
            self.height,
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }

    fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    fn from_f64(width: usize, height: usize, data: &[f64]) -> Self {
        Self::new(width, height, data.iter().map(|&v| v > 0.5).collect())
    }
}

/// 8-neighbourhood of `(x, y)` clipped to a `w x h` grid, as linear indices.
#[inline]
pub(crate) fn neighbors8(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    const D: [(isize, isize); 8] = [
        (-1, -1),
        (0, -1),
        (1, -1),
        (-1, 0),
        (1, 0),
        (-1, 1),
        (0, 1),
        (1, 1),
    ];
    D.into_iter().filter_map(move |(dx, dy)| {
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h)
            .then(|| ny as usize * w + nx as usize)
    })
}

#[derive(Clone, Copy)]
enum Extremum {
    Min,
    Max,
}

impl Extremum {
    #[inline]
    fn pick(self, a: f64, b: f64) -> f64 {
        match self {
            Extremum::Min => a.min(b),
            Extremum::Max => a.max(b),
        }
    }

    fn identity(self) -> f64 {
        match self {
            Extremum::Min => f64::INFINITY,
            Extremum::Max => f64::NEG_INFINITY,
        }
    }
}

/// Running extremum over `[x - half, x + half]` clipped to the row, in O(1)
/// per sample (van Herk / Gil-Werman block decomposition).
fn sliding_row(src: &[f64], half: usize, op: Extremum, out: &mut [f64]) {
    let n = src.len();
    if half == 0 {
        out.copy_from_slice(src);
        return;
    }
    let k = 2 * half + 1;
    let padded_len = (n + 2 * half).div_ceil(k) * k;
    let ident = op.identity();
    let mut padded = vec![ident; padded_len];
    padded[half..half + n].copy_from_slice(src);
    let mut prefix = padded.clone();
    let mut suffix = padded.clone();
    for block in (0..padded_len).step_by(k) {
        for i in block + 1..block + k {
            prefix[i] = op.pick(prefix[i - 1], padded[i]);
        }
        for i in (block..block + k - 1).rev() {
            suffix[i] = op.pick(suffix[i + 1], padded[i]);
        }
    }
    for (x, o) in out.iter_mut().enumerate() {
        *o = op.pick(suffix[x], prefix[x + k - 1]);
    }
}

fn morph(data: &[f64], width: usize, height: usize, se: &DiskStrel, op: Extremum) -> Vec<f64> {
    let mut out = vec![op.identity(); data.len()];
    let mut rows = vec![0.0; data.len()];
    for dy in 0..=se.radius {
        let half = se.half_widths[dy];
        rows.par_chunks_mut(width)
            .zip(data.par_chunks(width))
            .for_each(|(dst, src)| sliding_row(src, half, op, dst));
        out.par_chunks_mut(width).enumerate().for_each(|(y, dst)| {
            let mut fold = |sy: usize| {
                let src = &rows[sy * width..(sy + 1) * width];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = op.pick(*d, s);
                }
            };
            if y + dy < height {
                fold(y + dy);
            }
            if dy > 0 && y >= dy {
                fold(y - dy);
            }
        });
    }
    out
}

pub fn erode(img: &GrayImage, se: &DiskStrel) -> GrayImage {
    let out = morph(img.data(), img.width(), img.height(), se, Extremum::Min);
    GrayImage::from_raw(img.width(), img.height(), out)
}

pub fn dilate(img: &GrayImage, se: &DiskStrel) -> GrayImage {
    let out = morph(img.data(), img.width(), img.height(), se, Extremum::Max);
    GrayImage::from_raw(img.width(), img.height(), out)
}

pub fn erode_mask(mask: &BinaryMask, se: &DiskStrel) -> BinaryMask {
    let out = morph(&mask.to_f64(), mask.width, mask.height, se, Extremum::Min);
    BinaryMask::from_f64(mask.width, mask.height, &out)
}

pub fn dilate_mask(mask: &BinaryMask, se: &DiskStrel) -> BinaryMask {
    let out = morph(&mask.to_f64(), mask.width, mask.height, se, Extremum::Max);
    BinaryMask::from_f64(mask.width, mask.height, &out)
}

/// Binary closing: dilation then erosion.
pub fn close_mask(mask: &BinaryMask, se: &DiskStrel) -> BinaryMask {
    erode_mask(&dilate_mask(mask, se), se)
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("marker {marker} exceeds mask {mask} at ({x}, {y})")]
pub struct MarkerExceedsMask {
    pub x: usize,
    pub y: usize,
    pub marker: f64,
    pub mask: f64,
}

/// Reconstruction by dilation on raw buffers (values may be infinite).
/// Hybrid algorithm: one forward and one backward raster sweep followed by
/// FIFO propagation.
pub(crate) fn reconstruct_raw(
    marker: &[f64],
    mask: &[f64],
    width: usize,
    height: usize,
) -> Result<Vec<f64>, MarkerExceedsMask> {
    assert_eq!(marker.len(), mask.len());
    if let Some(i) = marker.iter().zip(mask).position(|(m, k)| m > k) {
        return Err(MarkerExceedsMask {
            x: i % width,
            y: i / width,
            marker: marker[i],
            mask: mask[i],
        });
    }
    let w = width;
    let mut j = marker.to_vec();

    for y in 0..height {
        for x in 0..w {
            let i = y * w + x;
            let mut m = j[i];
            if x > 0 {
                m = m.max(j[i - 1]);
            }
            if y > 0 {
                m = m.max(j[i - w]);
                if x > 0 {
                    m = m.max(j[i - w - 1]);
                }
                if x + 1 < w {
                    m = m.max(j[i - w + 1]);
                }
            }
            j[i] = m.min(mask[i]);
        }
    }

    let mut queue = VecDeque::new();
    let backward = |x: usize, y: usize| {
        let mut n = [usize::MAX; 4];
        if x + 1 < w {
            n[0] = y * w + x + 1;
        }
        if y + 1 < height {
            n[1] = (y + 1) * w + x;
            if x + 1 < w {
                n[2] = (y + 1) * w + x + 1;
            }
            if x > 0 {
                n[3] = (y + 1) * w + x - 1;
            }
        }
        n
    };
    for y in (0..height).rev() {
        for x in (0..w).rev() {
            let i = y * w + x;
            let nb = backward(x, y);
            let mut m = j[i];
            for &q in nb.iter().filter(|&&q| q != usize::MAX) {
                m = m.max(j[q]);
            }
            j[i] = m.min(mask[i]);
            if nb
                .iter()
                .filter(|&&q| q != usize::MAX)
                .any(|&q| j[q] < j[i] && j[q] < mask[q])
            {
                queue.push_back(i);
            }
        }
    }

    while let Some(p) = queue.pop_front() {
        let (x, y) = (p % w, p / w);
        for q in neighbors8(x, y, w, height) {
            if j[q] < j[p] && mask[q] != j[q] {
                j[q] = j[p].min(mask[q]);
                queue.push_back(q);
            }
        }
    }
    Ok(j)
}

/// Morphological reconstruction by dilation of `marker` under `mask`.
pub fn reconstruct(marker: &GrayImage, mask: &GrayImage) -> Result<GrayImage, MarkerExceedsMask> {
    assert_eq!(
        (marker.width(), marker.height()),
        (mask.width(), mask.height()),
        "reconstruction shapes differ"
    );
    let out = reconstruct_raw(marker.data(), mask.data(), mask.width(), mask.height())?;
    Ok(GrayImage::from_raw(mask.width(), mask.height(), out))
}

pub fn open_by_reconstruction(img: &GrayImage, se: &DiskStrel) -> GrayImage {
    reconstruct(&erode(img, se), img).expect("erosion never exceeds its source")
}

/// Complement-space dual of [`open_by_reconstruction`].
pub fn close_by_reconstruction(img: &GrayImage, se: &DiskStrel) -> GrayImage {
    let inv = img.complement();
    let marker = dilate(img, se).complement();
    reconstruct(&marker, &inv)
        .expect("dilation never falls below its source")
        .complement()
}

/// Flat zones (8-connected sets of equal value) with no strictly higher
/// neighbour.
pub fn regional_maxima(img: &GrayImage) -> BinaryMask {
    extrema_plateaus(img.data(), img.width(), img.height(), |n, v| n > v)
}

/// Flat zones with no strictly lower neighbour.
pub fn regional_minima(img: &GrayImage) -> BinaryMask {
    extrema_plateaus(img.data(), img.width(), img.height(), |n, v| n < v)
}

pub(crate) fn extrema_plateaus(
    data: &[f64],
    w: usize,
    h: usize,
    beats: impl Fn(f64, f64) -> bool,
) -> BinaryMask {
    let mut visited = vec![false; data.len()];
    let mut out = vec![false; data.len()];
    let mut zone = Vec::new();
    let mut stack = Vec::new();
    for start in 0..data.len() {
        if visited[start] {
            continue;
        }
        let level = data[start];
        let mut extremal = true;
        zone.clear();
        stack.push(start);
        visited[start] = true;
        while let Some(p) = stack.pop() {
            zone.push(p);
            for q in neighbors8(p % w, p / w, w, h) {
                let v = data[q];
                if v == level {
                    if !visited[q] {
                        visited[q] = true;
                        stack.push(q);
                    }
                } else if beats(v, level) {
                    extremal = false;
                }
            }
        }
        if extremal {
            for &p in &zone {
                out[p] = true;
            }
        }
    }
    BinaryMask::new(w, h, out)
}

/// 8-connected component labels in scan order (first pixel encountered gets
/// label 1). Unset pixels are 0. Returns the labels and the component count.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, u32) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..labels.len() {
        if !mask.bits[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            for q in neighbors8(p % w, p / w, w, h) {
                if mask.bits[q] && labels[q] == 0 {
                    labels[q] = next;
                    stack.push(q);
                }
            }
        }
    }
    (labels, next)
}

/// Removes 8-connected components with fewer than `min_area` pixels.
pub fn remove_small_components(mask: &BinaryMask, min_area: usize) -> BinaryMask {
    let (labels, count) = label_components(mask);
    let mut sizes = vec![0usize; count as usize + 1];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    let bits = labels
        .iter()
        .map(|&l| l != 0 && sizes[l as usize] >= min_area)
        .collect();
    BinaryMask::new(mask.width, mask.height, bits)
}

//! Marker-controlled watershed segmentation.
//!
//! Foreground markers come from the regional maxima of the image after
//! opening and closing by reconstruction. Background markers are the ridge
//! lines of the distance transform of an Otsu-thresholded foreground. The
//! Sobel gradient gets its minima imposed at both marker sets and is then
//! flooded from the markers.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagecore::{quantize, GrayImage};
use crate::morphology::{
    close_by_reconstruction, close_mask, erode_mask, extrema_plateaus, label_components,
    neighbors8, open_by_reconstruction, reconstruct_raw, regional_maxima,
    remove_small_components, BinaryMask, DiskStrel,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SegError {
    #[error("no foreground markers survived marker cleanup")]
    EmptyMarkers,
    #[error("image histogram has a single level; no threshold exists")]
    DegenerateHistogram,
    #[error("watershed called without any seed pixels")]
    NoSeeds,
}

impl SegError {
    pub fn kind(&self) -> &'static str {
        match self {
            SegError::EmptyMarkers => "EmptyMarkers",
            SegError::DegenerateHistogram => "DegenerateHistogram",
            SegError::NoSeeds => "NoSeeds",
        }
    }
}

pub type SegResult<T> = Result<T, SegError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegParams {
    pub strel_radius: usize,
    #[serde(default = "default_min_marker_area")]
    pub min_marker_area: usize,
    /// Fixed foreground threshold in `[0,1]` replacing Otsu's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foreground_threshold: Option<f64>,
}

fn default_min_marker_area() -> usize {
    20
}

impl SegParams {
    pub fn new(strel_radius: usize) -> Self {
        Self {
            strel_radius,
            min_marker_area: default_min_marker_area(),
            foreground_threshold: None,
        }
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if self.strel_radius < 1 {
            return Err("strel_radius");
        }
        if let Some(t) = self.foreground_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err("foreground_threshold");
            }
        }
        Ok(())
    }

    pub fn strel(&self) -> DiskStrel {
        DiskStrel::new(self.strel_radius)
    }
}

/// Segment labels; 0 is ridge or unassigned.
#[derive(Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl std::fmt::Debug for LabelMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LabelMatrix({}x{}, max {})", self.width, self.height, self.max_label())
    }
}

impl LabelMatrix {
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Self {
        assert_eq!(width * height, labels.len(), "label matrix shape mismatch");
        Self {
            width,
            height,
            labels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Number of distinct nonzero labels.
    pub fn segment_count(&self) -> usize {
        let mut seen: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    pub fn crop_rows(&self, start: usize, end: usize) -> LabelMatrix {
        LabelMatrix::new(
            self.width,
            end - start,
            self.labels[start * self.width..end * self.width].to_vec(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerSet {
    pub foreground: BinaryMask,
    pub background: BinaryMask,
}

impl MarkerSet {
    pub fn union(&self) -> BinaryMask {
        self.foreground.union(&self.background)
    }
}

/// Sobel gradient magnitude with replicated borders, divided by `4 sqrt 2`
/// so that inputs in `[0,1]` give outputs in `[0,1]`.
pub fn gradient_magnitude(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let scale = 1.0 / (4.0 * std::f64::consts::SQRT_2);
    let at = |x: isize, y: isize| {
        let cx = x.clamp(0, w as isize - 1) as usize;
        let cy = y.clamp(0, h as isize - 1) as usize;
        img.get(cx, cy)
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            out.push(((gx * gx + gy * gy).sqrt() * scale).min(1.0));
        }
    }
    GrayImage::from_raw(w, h, out)
}

/// Otsu threshold on the 256-level histogram. Pixels whose 8-bit level is
/// strictly above the returned level are foreground.
pub fn otsu_level(img: &GrayImage) -> SegResult<u8> {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[quantize(v) as usize] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(SegError::DegenerateHistogram);
    }
    let total = img.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 0u8);
    for (t, &c) in hist.iter().enumerate().take(255) {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let diff = sum0 / w0 - (sum_all - sum0) / w1;
        let between = w0 * w1 * diff * diff;
        if between > best.0 {
            best = (between, t as u8);
        }
    }
    Ok(best.1)
}

fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let intersect = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..f.len() {
        let mut s = intersect(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance from every pixel to the nearest set pixel of
/// `mask` (0 on the set). An empty mask yields `+inf` everywhere.
pub fn distance_transform(mask: &BinaryMask) -> Vec<f64> {
    const FAR: f64 = 1e20;
    let (w, h) = (mask.width(), mask.height());
    if !mask.any() {
        return vec![f64::INFINITY; w * h];
    }
    let mut grid: Vec<f64> = mask
        .bits()
        .iter()
        .map(|&b| if b { 0.0 } else { FAR })
        .collect();
    let n = w.max(h);
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut col_out, &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; w];
    for y in 0..h {
        edt_1d(&grid[y * w..(y + 1) * w], &mut row_out, &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    grid.iter_mut().for_each(|d| *d = d.sqrt());
    grid
}

#[derive(Clone, Copy)]
struct QueueKey {
    level: f64,
    seq: u64,
    index: usize,
}

impl PartialEq for QueueKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueKey {}

impl PartialOrd for QueueKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueueKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.level
            .total_cmp(&other.level)
            .then(self.seq.cmp(&other.seq))
    }
}

const RIDGE: u32 = u32::MAX;

/// Priority flood from nonzero seed labels. A pixel that sees two distinct
/// labels among its neighbours when popped becomes ridge (0); pixels the
/// flood never reaches are also 0.
pub(crate) fn flood(relief: &[f64], w: usize, h: usize, mut labels: Vec<u32>) -> Vec<u32> {
    let mut queued: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for p in 0..labels.len() {
        if labels[p] == 0 {
            continue;
        }
        for q in neighbors8(p % w, p / w, w, h) {
            if !queued[q] {
                queued[q] = true;
                heap.push(Reverse(QueueKey {
                    level: relief[q],
                    seq,
                    index: q,
                }));
                seq += 1;
            }
        }
    }
    while let Some(Reverse(key)) = heap.pop() {
        let p = key.index;
        let mut found = 0u32;
        let mut conflict = false;
        for q in neighbors8(p % w, p / w, w, h) {
            let l = labels[q];
            if l == 0 || l == RIDGE {
                continue;
            }
            if found == 0 {
                found = l;
            } else if found != l {
                conflict = true;
                break;
            }
        }
        if conflict || found == 0 {
            labels[p] = RIDGE;
            continue;
        }
        labels[p] = found;
        for q in neighbors8(p % w, p / w, w, h) {
            if !queued[q] {
                queued[q] = true;
                heap.push(Reverse(QueueKey {
                    level: relief[q],
                    seq,
                    index: q,
                }));
                seq += 1;
            }
        }
    }
    for l in &mut labels {
        if *l == RIDGE {
            *l = 0;
        }
    }
    labels
}

/// Opening by reconstruction followed by closing by reconstruction.
pub fn open_close(filtered: &GrayImage, se: &DiskStrel) -> GrayImage {
    close_by_reconstruction(&open_by_reconstruction(filtered, se), se)
}

/// Foreground markers from an already opened-and-closed image: regional
/// maxima brighter than black, binary closing, binary erosion, then removal
/// of components smaller than `min_marker_area`.
pub fn markers_from_prepared(prepared: &GrayImage, p: &SegParams) -> SegResult<BinaryMask> {
    let se = p.strel();
    let mut maxima = regional_maxima(prepared);
    for (bit, &v) in maxima.bits_mut().iter_mut().zip(prepared.data()) {
        // a black plateau carries no particle
        if quantize(v) == 0 {
            *bit = false;
        }
    }
    let cleaned = erode_mask(&close_mask(&maxima, &se), &se);
    let markers = remove_small_components(&cleaned, p.min_marker_area);
    if !markers.any() {
        return Err(SegError::EmptyMarkers);
    }
    Ok(markers)
}

/// Full marker generation from the filtered image.
pub fn foreground_markers(filtered: &GrayImage, p: &SegParams) -> SegResult<BinaryMask> {
    markers_from_prepared(&open_close(filtered, &p.strel()), p)
}

/// Ridge lines between thresholded particles, plus the image frame outside
/// the thresholded foreground.
pub fn background_markers(prepared: &GrayImage, threshold: Option<f64>) -> SegResult<BinaryMask> {
    let (w, h) = (prepared.width(), prepared.height());
    let level = match threshold {
        Some(t) => quantize(t),
        None => otsu_level(prepared)?,
    };
    let fg = BinaryMask::new(
        w,
        h,
        prepared.data().iter().map(|&v| quantize(v) > level).collect(),
    );
    if !fg.any() {
        return Ok(frame_mask(w, h));
    }
    let dist = distance_transform(&fg);
    let minima = extrema_plateaus(&dist, w, h, |n, v| n < v);
    let (seeds, _) = label_components(&minima);
    let basins = flood(&dist, w, h, seeds);
    let bits = basins
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let (x, y) = (i % w, i / w);
            let on_frame = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
            !fg.bits()[i] && (l == 0 || on_frame)
        })
        .collect();
    Ok(BinaryMask::new(w, h, bits))
}

fn frame_mask(w: usize, h: usize) -> BinaryMask {
    BinaryMask::from_fn(w, h, |x, y| x == 0 || y == 0 || x + 1 == w || y + 1 == h)
}

/// Minima imposition: marker pixels drop to 0 and every other regional
/// minimum is filled, by reconstruction by erosion of `min(grad + eps, m)`
/// from `m` (0 on markers, `+inf` elsewhere), with `eps = 1/255`. The
/// result is rescaled by `1 / (1 + eps)` to stay in `[0,1]`.
///
/// With no markers at all the gradient is returned unchanged.
pub fn impose_minima(grad: &GrayImage, markers: &BinaryMask) -> GrayImage {
    assert_eq!(
        (grad.width(), grad.height()),
        (markers.width(), markers.height()),
        "marker shape mismatch"
    );
    if !markers.any() {
        return grad.clone();
    }
    let eps = 1.0 / 255.0;
    // negate to run the erosion-reconstruction as a dilation-reconstruction
    let neg_marker: Vec<f64> = markers
        .bits()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    let neg_mask: Vec<f64> = grad
        .data()
        .iter()
        .zip(markers.bits())
        .map(|(&g, &b)| if b { 0.0 } else { -(g + eps) })
        .collect();
    let rec = reconstruct_raw(&neg_marker, &neg_mask, grad.width(), grad.height())
        .expect("marker is -inf or equal to mask");
    let out = rec
        .into_iter()
        .map(|v| ((-v) / (1.0 + eps) + 0.0).clamp(0.0, 1.0))
        .collect();
    GrayImage::from_raw(grad.width(), grad.height(), out)
}

/// Seed labels for [`watershed`]: background 1, foreground components
/// 2, 3, ... in scan order. Foreground wins where the masks overlap.
pub fn seed_labels(seeds: &MarkerSet) -> Vec<u32> {
    let (fg, _) = label_components(&seeds.foreground);
    fg.iter()
        .zip(seeds.background.bits())
        .map(|(&l, &bg)| match (l, bg) {
            (0, true) => 1,
            (0, false) => 0,
            (l, _) => l + 1,
        })
        .collect()
}

/// Marker-controlled watershed. Label 1 is the background basin, labels
/// from 2 are particles, 0 is ridge.
pub fn watershed(relief: &GrayImage, seeds: &MarkerSet) -> SegResult<LabelMatrix> {
    let (w, h) = (relief.width(), relief.height());
    let labels = seed_labels(seeds);
    if labels.iter().all(|&l| l == 0) {
        return Err(SegError::NoSeeds);
    }
    Ok(LabelMatrix::new(w, h, flood(relief.data(), w, h, labels)))
}

/// Maps watershed output to particle labels only: background and ridge
/// become 0, particle `k + 1` becomes `k`.
pub fn particles_only(labels: &LabelMatrix) -> LabelMatrix {
    LabelMatrix::new(
        labels.width(),
        labels.height(),
        labels.labels().iter().map(|&l| l.saturating_sub(1)).collect(),
    )
}

/// Marker preparation for one image, kept for inspection.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub opened_closed: GrayImage,
    pub markers: MarkerSet,
    pub gradient: GrayImage,
    pub relief: GrayImage,
}

pub fn prepare(filtered: &GrayImage, p: &SegParams) -> SegResult<Prepared> {
    let opened_closed = open_close(filtered, &p.strel());
    let markers = prepare_markers(&opened_closed, p)?;
    let gradient = gradient_magnitude(filtered);
    let relief = impose_minima(&gradient, &markers.union());
    Ok(Prepared {
        opened_closed,
        markers,
        gradient,
        relief,
    })
}

/// Foreground and background markers from the opened-and-closed image,
/// with background pixels removed where they overlap the foreground.
pub fn prepare_markers(opened_closed: &GrayImage, p: &SegParams) -> SegResult<MarkerSet> {
    let foreground = markers_from_prepared(opened_closed, p)?;
    let mut background = background_markers(opened_closed, p.foreground_threshold)?;
    for (b, &f) in background.bits_mut().iter_mut().zip(foreground.bits()) {
        *b &= !f;
    }
    Ok(MarkerSet {
        foreground,
        background,
    })
}

/// End-to-end segmentation of a filtered image; returns particle labels.
pub fn segment_image(filtered: &GrayImage, p: &SegParams) -> SegResult<LabelMatrix> {
    let prep = prepare(filtered, p)?;
    Ok(particles_only(&watershed(&prep.relief, &prep.markers)?))
}

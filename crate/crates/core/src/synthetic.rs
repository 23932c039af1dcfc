//! Synthetic disk fields with known ground truth, used by the test suites
//! and for smoke-testing parameter choices.

use crate::imagecore::{GrayImage, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl Disk {
    pub fn new(cx: f64, cy: f64, radius: f64) -> Self {
        Self { cx, cy, radius }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (dx, dy) = (x as f64 - self.cx, y as f64 - self.cy);
        dx * dx + dy * dy <= self.radius * self.radius
    }

    /// Pixel centres covered by the disk inside a `w x h` frame.
    pub fn pixel_area(&self, w: usize, h: usize) -> usize {
        let (x0, x1) = (
            (self.cx - self.radius).floor().max(0.0) as usize,
            ((self.cx + self.radius).ceil() as usize).min(w - 1),
        );
        let (y0, y1) = (
            (self.cy - self.radius).floor().max(0.0) as usize,
            ((self.cy + self.radius).ceil() as usize).min(h - 1),
        );
        (y0..=y1)
            .flat_map(|y| (x0..=x1).map(move |x| (x, y)))
            .filter(|&(x, y)| self.contains(x, y))
            .count()
    }
}

/// Bright (`fg`) disks on a `bg` field.
pub fn disk_image(width: usize, height: usize, disks: &[Disk], fg: f64, bg: f64) -> GrayImage {
    GrayImage::from_fn(width, height, |x, y| {
        if disks.iter().any(|d| d.contains(x, y)) {
            fg
        } else {
            bg
        }
    })
    .expect("intensities in range")
}

pub fn disk_image_rgb(width: usize, height: usize, disks: &[Disk], fg: f64, bg: f64) -> RgbImage {
    RgbImage::from_gray(&disk_image(width, height, disks, fg, bg))
}

/// `count` disks of `radius` on a regular grid whose cells leave at least
/// `gap` pixels between neighbouring disks and between disks and the frame.
/// Returns `None` when they do not fit.
pub fn grid_layout(width: usize, height: usize, count: usize, radius: f64, gap: f64) -> Option<Vec<Disk>> {
    let cell = 2.0 * radius + gap;
    let cols = ((width as f64 - gap) / cell).floor() as usize;
    let rows = ((height as f64 - gap) / cell).floor() as usize;
    if cols * rows < count {
        return None;
    }
    // roughly square cells, spread over the whole frame
    let aspect = ((count * width) as f64 / height as f64).sqrt().ceil() as usize;
    let used_cols = aspect.max(count.div_ceil(rows)).min(cols).min(count).max(1);
    let used_rows = count.div_ceil(used_cols);
    let pitch_x = width as f64 / used_cols as f64;
    let pitch_y = height as f64 / used_rows as f64;
    Some(
        (0..count)
            .map(|i| {
                let (c, r) = (i % used_cols, i / used_cols);
                Disk::new(
                    (pitch_x * (c as f64 + 0.5)).floor(),
                    (pitch_y * (r as f64 + 0.5)).floor(),
                    radius,
                )
            })
            .collect(),
    )
}

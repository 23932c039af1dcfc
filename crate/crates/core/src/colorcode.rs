//! Color size coding key: classified segments to a 64-entry colormap.
//!
//! Index bands: 1-3 small (greens), 4-55 typical (yellow, red, brown),
//! 56-64 large (blues). Convexity failures render purple and ridges white.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{Category, SegmentRecord};
use crate::imagecore::RgbImage;
use crate::segmentation::LabelMatrix;

pub const KEY_LEN: usize = 64;
pub const SMALL_BAND: (u8, u8) = (1, 3);
pub const TYPICAL_BAND: (u8, u8) = (4, 55);
pub const LARGE_BAND: (u8, u8) = (56, 64);

const SMALL_STEP: f64 = 0.0367;
const TYPICAL_STEP: f64 = 0.13645;
const LARGE_STEP: f64 = 0.5;
const LARGE_START: f64 = 7.069;
const OVERSIZE: f64 = 11.569;

#[derive(Debug, Error)]
pub enum ColorError {
    #[error("label {0} has no segment record")]
    MissingRecord(u32),
    #[error("color key must have {KEY_LEN} entries, found {0}")]
    WrongLength(usize),
    #[error("color key channel {0} outside [0,1]")]
    ChannelRange(f64),
    #[error("color key file {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Color slot for a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorIndex {
    /// 1-based index into the key.
    Key(u8),
    DegradedZone,
}

fn ceil_clamped(v: f64, lo: u8, hi: u8) -> u8 {
    v.ceil().clamp(lo as f64, hi as f64) as u8
}

pub fn color_index(category: Category, r: f64) -> ColorIndex {
    let idx = match category {
        Category::ConvexFail => return ColorIndex::DegradedZone,
        Category::Small => ceil_clamped(r / SMALL_STEP, SMALL_BAND.0, SMALL_BAND.1),
        Category::Typical => ceil_clamped(3.0 + (r / TYPICAL_STEP).ceil(), TYPICAL_BAND.0, TYPICAL_BAND.1),
        Category::Large if r >= OVERSIZE => LARGE_BAND.1,
        Category::Large => ceil_clamped(
            55.0 + ((r - LARGE_START) / LARGE_STEP).ceil(),
            LARGE_BAND.0,
            LARGE_BAND.1 - 1,
        ),
    };
    ColorIndex::Key(idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorKey {
    pub entries: Vec<[f64; 3]>,
    pub ridge: [f64; 3],
    pub degraded_zone: [f64; 3],
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

impl Default for ColorKey {
    fn default() -> Self {
        default_color_key()
    }
}

impl ColorKey {
    pub fn validate(&self) -> Result<(), ColorError> {
        if self.entries.len() != KEY_LEN {
            return Err(ColorError::WrongLength(self.entries.len()));
        }
        for &c in self
            .entries
            .iter()
            .chain([&self.ridge, &self.degraded_zone])
            .flatten()
        {
            if !(0.0..=1.0).contains(&c) {
                return Err(ColorError::ChannelRange(c));
            }
        }
        Ok(())
    }

    pub fn color(&self, idx: ColorIndex) -> [f64; 3] {
        match idx {
            ColorIndex::Key(i) => self.entries[i as usize - 1],
            ColorIndex::DegradedZone => self.degraded_zone,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ColorError> {
        let path = path.as_ref();
        let io = |reason: String| ColorError::Io {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        let key: ColorKey = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
        key.validate()?;
        Ok(key)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ColorError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("color key serializes");
        std::fs::write(path, text).map_err(|e| ColorError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

/// Built-in key: dark to light green, yellow to red to brown, light to dark
/// blue.
pub fn default_color_key() -> ColorKey {
    let mut entries = Vec::with_capacity(KEY_LEN);
    let (dark_green, light_green) = ([0.0, 0.4, 0.0], [0.5, 1.0, 0.5]);
    for i in 0..3 {
        entries.push(lerp(dark_green, light_green, i as f64 / 2.0));
    }
    let (yellow, red, brown) = ([1.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.4, 0.2, 0.0]);
    // 52 typical entries: 26 yellow->red, 26 red->brown
    for i in 0..26 {
        entries.push(lerp(yellow, red, i as f64 / 25.0));
    }
    for i in 0..26 {
        entries.push(lerp(red, brown, (i + 1) as f64 / 26.0));
    }
    let (light_blue, dark_blue) = ([0.6, 0.8, 1.0], [0.0, 0.0, 0.5]);
    for i in 0..9 {
        entries.push(lerp(light_blue, dark_blue, i as f64 / 8.0));
    }
    debug_assert_eq!(entries.len(), KEY_LEN);
    ColorKey {
        entries,
        ridge: [1.0, 1.0, 1.0],
        degraded_zone: [0.5, 0.0, 0.5],
    }
}

/// Colors every pixel: ridges with `key.ridge`, segments by the color index
/// of their record.
pub fn render_labels(
    labels: &LabelMatrix,
    records: &[SegmentRecord],
    key: &ColorKey,
) -> Result<RgbImage, ColorError> {
    let max = labels.max_label() as usize;
    let mut palette: Vec<Option<[f64; 3]>> = vec![None; max + 1];
    for rec in records {
        if (rec.label as usize) <= max {
            palette[rec.label as usize] = Some(key.color(color_index(rec.category, rec.r)));
        }
    }
    let pixels = labels
        .labels()
        .iter()
        .map(|&l| match l {
            0 => Ok(key.ridge),
            l => palette[l as usize].ok_or(ColorError::MissingRecord(l)),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RgbImage::new(labels.width(), labels.height(), pixels).expect("key colors are in range"))
}

/// Pseudo-colors raw segment ids through the key (for inspecting labels
/// before classification).
pub fn render_label_ids(labels: &LabelMatrix, key: &ColorKey) -> RgbImage {
    let pixels = labels
        .labels()
        .iter()
        .map(|&l| match l {
            0 => key.ridge,
            l => key.entries[((l as usize - 1) * 37) % KEY_LEN],
        })
        .collect();
    RgbImage::new(labels.width(), labels.height(), pixels).expect("key colors are in range")
}

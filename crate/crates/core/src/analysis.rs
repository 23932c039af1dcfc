//! Per-segment statistics, convexity screening, calibrated size classes and
//! the Percentage of Degraded Segments score.

use serde::{Deserialize, Serialize};

use crate::segmentation::LabelMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Pixel area of the 1-in. (25.4 mm) calibration ball.
    pub ball_area_px: f64,
    pub convex_threshold: f64,
    pub small_threshold: f64,
    pub large_threshold: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            ball_area_px: 1000.0,
            convex_threshold: 0.73,
            small_threshold: 0.11,
            large_threshold: 7.069,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.ball_area_px.is_finite() && self.ball_area_px > 0.0) {
            return Err("ball_area_px");
        }
        if !(self.convex_threshold > 0.0 && self.convex_threshold <= 1.0) {
            return Err("convex_threshold");
        }
        if !(self.small_threshold.is_finite() && self.small_threshold > 0.0) {
            return Err("small_threshold");
        }
        if !(self.large_threshold.is_finite() && self.large_threshold > self.small_threshold) {
            return Err("large_threshold");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    ConvexFail,
    Small,
    Typical,
    Large,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub label: u32,
    pub area_px: usize,
    pub hull_area_px: f64,
    pub convexity: f64,
    pub r: f64,
    pub category: Category,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTally {
    pub n_small: usize,
    pub n_typical: usize,
    pub n_large: usize,
    pub n_convexfail: usize,
    pub area_small_px: usize,
    pub area_typical_px: usize,
    pub area_large_px: usize,
    pub area_convexfail_px: usize,
}

impl CategoryTally {
    pub fn from_records(records: &[SegmentRecord]) -> Self {
        let mut t = Self::default();
        for rec in records {
            let (n, a) = match rec.category {
                Category::Small => (&mut t.n_small, &mut t.area_small_px),
                Category::Typical => (&mut t.n_typical, &mut t.area_typical_px),
                Category::Large => (&mut t.n_large, &mut t.area_large_px),
                Category::ConvexFail => (&mut t.n_convexfail, &mut t.area_convexfail_px),
            };
            *n += 1;
            *a += rec.area_px;
        }
        t
    }

    pub fn total_area(&self) -> usize {
        self.area_small_px + self.area_typical_px + self.area_large_px + self.area_convexfail_px
    }
}

/// Pixel coordinates `(x, y)` of every nonzero label, grouped by label in
/// ascending label order, row-major within each label.
pub fn extract_segments(labels: &LabelMatrix) -> Vec<(u32, Vec<(i64, i64)>)> {
    let max = labels.max_label() as usize;
    let mut groups: Vec<Vec<(i64, i64)>> = vec![Vec::new(); max + 1];
    let w = labels.width();
    for (i, &l) in labels.labels().iter().enumerate() {
        if l != 0 {
            groups[l as usize].push(((i % w) as i64, (i / w) as i64));
        }
    }
    groups
        .into_iter()
        .enumerate()
        .filter(|(_, pts)| !pts.is_empty())
        .map(|(l, pts)| (l as u32, pts))
        .collect()
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull vertices (counter-clockwise, no collinear points) by
/// Andrew's monotone chain.
pub fn convex_hull(points: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(poly: &[(i64, i64)]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let twice: i64 = poly
        .iter()
        .zip(poly.iter().cycle().skip(1))
        .map(|(a, b)| a.0 * b.1 - b.0 * a.1)
        .sum();
    twice.abs() as f64 / 2.0
}

/// Area of the convex hull of the pixel centres; 0 when degenerate.
pub fn convex_hull_area(points: &[(i64, i64)]) -> f64 {
    polygon_area(&convex_hull(points))
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Lattice points lying on the boundary of a lattice polygon.
pub fn boundary_lattice_points(poly: &[(i64, i64)]) -> i64 {
    if poly.len() < 2 {
        return poly.len() as i64;
    }
    poly.iter()
        .zip(poly.iter().cycle().skip(1))
        .map(|(a, b)| gcd(b.0 - a.0, b.1 - a.1))
        .sum()
}

/// `min(1, area / (hull + B/2 + 1))` where `B` counts lattice points on the
/// hull boundary. By Pick's theorem the denominator is the number of pixel
/// centres inside the hull, so any digitally convex region scores exactly 1.
/// Degenerate hulls (area < 1) score 1.
pub fn convexity_ratio(area_px: usize, hull: &[(i64, i64)]) -> f64 {
    let hull_area = polygon_area(hull);
    if hull_area < 1.0 {
        return 1.0;
    }
    let lattice = hull_area + boundary_lattice_points(hull) as f64 / 2.0 + 1.0;
    (area_px as f64 / lattice).min(1.0)
}

pub fn classify(convexity: f64, r: f64, cal: &CalibrationConfig) -> Category {
    if convexity < cal.convex_threshold {
        Category::ConvexFail
    } else if r < cal.small_threshold {
        Category::Small
    } else if r >= cal.large_threshold {
        Category::Large
    } else {
        Category::Typical
    }
}

pub fn measure_segment(label: u32, points: &[(i64, i64)], cal: &CalibrationConfig) -> SegmentRecord {
    let hull = convex_hull(points);
    let area_px = points.len();
    let convexity = convexity_ratio(area_px, &hull);
    let r = area_px as f64 / cal.ball_area_px;
    SegmentRecord {
        label,
        area_px,
        hull_area_px: polygon_area(&hull),
        convexity,
        r,
        category: classify(convexity, r, cal),
    }
}

pub fn analyze_labels(labels: &LabelMatrix, cal: &CalibrationConfig) -> Vec<SegmentRecord> {
    extract_segments(labels)
        .iter()
        .map(|(label, pts)| measure_segment(*label, pts, cal))
        .collect()
}

/// `100 (1 - sum of Typical areas / A)`, clamped to `[0, 100]`.
pub fn compute_pds(segments: &[SegmentRecord], image_area_px: usize) -> f64 {
    let typical: usize = segments
        .iter()
        .filter(|s| s.category == Category::Typical)
        .map(|s| s.area_px)
        .sum();
    (100.0 * (1.0 - typical as f64 / image_area_px as f64)).clamp(0.0, 100.0)
}

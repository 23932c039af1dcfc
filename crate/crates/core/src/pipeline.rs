//! End-to-end orchestration.
//!
//! Both modes share the per-layer front end: grayscale, optional tone and
//! histogram correction on the whole image, a three-band split, then
//! per-band bilateral filtering and marker/relief preparation.
//!
//! * [`Mode::Stitched`] stacks the per-band reliefs and markers back into
//!   one image and floods it once, so particles cut by a band seam get a
//!   single seed. PDS is computed once over the whole image.
//! * [`Mode::Averaged`] segments and scores every band on its own and
//!   reports the mean of the three band PDS values.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{analyze_labels, compute_pds, CalibrationConfig, CategoryTally, SegmentRecord};
use crate::colorcode::{color_index, render_labels, ColorError, ColorIndex, ColorKey};
use crate::imagecore::{
    layer_bands, load_image, stitch_layers, to_grayscale, GrayImage, ImageError, Layer, LayerBand,
    RgbImage,
};
use crate::morphology::{label_components, BinaryMask};
use crate::preprocess::{adjust_tone, bilateral_filter, histogram_match, BilateralParams, ToneParams};
use crate::segmentation::{
    particles_only, prepare, watershed, LabelMatrix, MarkerSet, Prepared, SegError, SegParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Stitched,
    Averaged,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Stitched => "stitched",
            Mode::Averaged => "averaged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerParams {
    pub bilateral: BilateralParams,
    pub seg: SegParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub tone: Option<ToneParams>,
    #[serde(default)]
    pub reference_image: Option<PathBuf>,
    /// Top, middle, bottom.
    pub layers: [LayerParams; 3],
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub mode: Mode,
    /// Custom color key JSON; the built-in key when absent.
    #[serde(default)]
    pub color_key: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        default_config()
    }
}

/// Preferred widths are 6/8 for the top and middle bands and 8/10 for the
/// bottom band; strel radius 14 is the suggested first trial.
pub fn default_config() -> PipelineConfig {
    let layer = |sigma_s, sigma_r| LayerParams {
        bilateral: BilateralParams::new(sigma_s, sigma_r),
        seg: SegParams::new(14),
    };
    PipelineConfig {
        tone: None,
        reference_image: None,
        layers: [layer(6.0, 8.0), layer(6.0, 8.0), layer(8.0, 10.0)],
        calibration: CalibrationConfig::default(),
        mode: Mode::Stitched,
        color_key: None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid parameter {path}: {reason}")]
pub struct ConfigError {
    /// Dotted path of the offending field, e.g. `layers[2].bilateral.sigma_s`.
    pub path: String,
    pub reason: String,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |path: String| ConfigError {
            path,
            reason: "out of range".into(),
        };
        if let Some(tone) = &self.tone {
            tone.validate().map_err(|f| err(format!("tone.{f}")))?;
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer
                .bilateral
                .validate()
                .map_err(|f| err(format!("layers[{i}].bilateral.{f}")))?;
            layer
                .seg
                .validate()
                .map_err(|f| err(format!("layers[{i}].seg.{f}")))?;
        }
        self.calibration
            .validate()
            .map_err(|f| err(format!("calibration.{f}")))
    }

    /// Applies a JSON merge patch and validates the result. A `layers`
    /// array in the patch is merged element-wise: it must have three
    /// entries, each a merge patch for that band or `null` for no change.
    pub fn apply_patch(&self, patch: &Value) -> Result<PipelineConfig, ConfigError> {
        let err = |path: &str, reason: String| ConfigError {
            path: path.into(),
            reason,
        };
        let mut doc = serde_json::to_value(self).expect("config serializes");
        let mut patch = patch.clone();
        let layers = match patch.as_object_mut().and_then(|o| o.remove("layers")) {
            Some(Value::Array(items)) if items.len() == 3 => items,
            Some(Value::Array(items)) => {
                return Err(err("layers", format!("expected 3 layers, found {}", items.len())))
            }
            Some(_) => return Err(err("layers", "expected an array of 3 layer patches".into())),
            None => Vec::new(),
        };
        if !patch.is_object() {
            return Err(err("", "expected a JSON object".into()));
        }
        json_patch::merge(&mut doc, &patch);
        for (i, item) in layers.iter().enumerate().filter(|(_, v)| !v.is_null()) {
            json_patch::merge(&mut doc["layers"][i], item);
        }
        let cfg: PipelineConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            err(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Stable hex digest of the serialized configuration.
    pub fn digest(&self) -> String {
        digest_json(&serde_json::to_value(self).expect("config serializes"))
    }

    pub fn layer(&self, layer: Layer) -> &LayerParams {
        &self.layers[layer.index()]
    }
}

/// First 16 hex digits of the SHA-256 of a JSON value's compact form.
pub fn digest_json(value: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(value).expect("json value serializes");
    Sha256::digest(bytes)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{layer} layer: {source}")]
    Layer {
        layer: Layer,
        #[source]
        source: SegError,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Color(#[from] ColorError),
}

impl PipelineError {
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Layer { source, .. } => source.kind(),
            PipelineError::Image(_) => "Image",
            PipelineError::Config(_) => "Config",
            PipelineError::Color(_) => "ColorKey",
        }
    }

    pub fn layer(&self) -> Option<Layer> {
        match self {
            PipelineError::Layer { layer, .. } => Some(*layer),
            _ => None,
        }
    }
}

pub type PipelineResult<T> = Result<T, PipelineError>;

/// External files a configuration refers to, loaded once.
#[derive(Debug, Clone, Default)]
pub struct Assets {
    pub reference: Option<GrayImage>,
    pub color_key: ColorKey,
}

impl Assets {
    pub fn load(cfg: &PipelineConfig) -> PipelineResult<Self> {
        let reference = cfg
            .reference_image
            .as_ref()
            .map(|p| load_image(p).map(|img| to_grayscale(&img)))
            .transpose()?;
        let color_key = match &cfg.color_key {
            Some(p) => ColorKey::load(p)?,
            None => ColorKey::default(),
        };
        Ok(Self {
            reference,
            color_key,
        })
    }
}

/// Whole-image tone correction then histogram matching, each optional.
pub fn tone_stage(gray: &GrayImage, tone: Option<ToneParams>, reference: Option<&GrayImage>) -> GrayImage {
    let toned = match tone {
        Some(t) => adjust_tone(gray, t),
        None => gray.clone(),
    };
    match reference {
        Some(r) => histogram_match(&toned, r),
        None => toned,
    }
}

pub fn filter_layer(layer_img: &GrayImage, params: &LayerParams) -> GrayImage {
    bilateral_filter(layer_img, params.bilateral)
}

pub fn prepare_layer(layer: Layer, filtered: &GrayImage, params: &LayerParams) -> PipelineResult<Prepared> {
    prepare(filtered, &params.seg).map_err(|source| PipelineError::Layer { layer, source })
}

/// One watershed over the stacked band reliefs. Foreground markers are
/// relabeled on the stacked mask, so components that are 8-adjacent across
/// a seam merge into one seed.
pub fn stitched_labels(preps: [&Prepared; 3]) -> LabelMatrix {
    stitch_watershed(preps.map(|p| &p.relief), preps.map(|p| &p.markers))
}

pub fn stitch_watershed(reliefs: [&GrayImage; 3], markers: [&MarkerSet; 3]) -> LabelMatrix {
    let relief = stitch_layers(reliefs[0], reliefs[1], reliefs[2]).expect("bands share the image width");
    let seeds = MarkerSet {
        foreground: BinaryMask::stack(&markers.map(|m| &m.foreground)),
        background: BinaryMask::stack(&markers.map(|m| &m.background)),
    };
    particles_only(&watershed(&relief, &seeds).expect("every band has foreground markers"))
}

pub fn layer_labels(prep: &Prepared) -> LabelMatrix {
    band_watershed(&prep.relief, &prep.markers)
}

pub fn band_watershed(relief: &GrayImage, markers: &MarkerSet) -> LabelMatrix {
    particles_only(&watershed(relief, markers).expect("band has foreground markers"))
}

/// Count of 8-connected foreground marker components after stacking.
pub fn stitched_seed_count(preps: [&Prepared; 3]) -> u32 {
    label_components(&BinaryMask::stack(&preps.map(|p| &p.markers.foreground))).1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    #[serde(flatten)]
    pub record: SegmentRecord,
    pub color_index: ColorIndex,
    /// Band the segment was found in (averaged mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<Layer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationReport {
    pub mode: Mode,
    pub width: usize,
    pub height: usize,
    pub image_area_px: usize,
    pub segments: Vec<SegmentEntry>,
    pub tally: CategoryTally,
    pub typical_area_px: usize,
    /// Ridge and unlabelled background pixels.
    pub unassigned_px: usize,
    pub pds_percent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_layer_pds: Option<[f64; 3]>,
    pub final_pds: f64,
    pub params_digest: String,
}

impl DegradationReport {
    /// Pretty-printed JSON, the form written to report files and served
    /// over HTTP.
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("report serializes")
    }
}

/// Labels plus classified segments for the whole image.
#[derive(Debug, Clone, PartialEq)]
pub struct Classified {
    pub labels: LabelMatrix,
    pub records: Vec<SegmentRecord>,
    pub layers: Vec<Option<Layer>>,
    pub per_layer_pds: Option<[f64; 3]>,
}

pub fn classify_stitched(labels: LabelMatrix, cal: &CalibrationConfig) -> Classified {
    let records = analyze_labels(&labels, cal);
    Classified {
        layers: vec![None; records.len()],
        labels,
        records,
        per_layer_pds: None,
    }
}

/// Scores each band against its own area, then offsets labels so they are
/// unique across the stacked label matrix.
pub fn classify_averaged(band_labels: [&LabelMatrix; 3], cal: &CalibrationConfig) -> Classified {
    let mut records = Vec::new();
    let mut layers = Vec::new();
    let mut pds = [0.0; 3];
    let mut stacked = Vec::new();
    let mut offset = 0u32;
    for (i, labels) in band_labels.iter().enumerate() {
        let band_records = analyze_labels(labels, cal);
        pds[i] = compute_pds(&band_records, labels.labels().len());
        stacked.extend(labels.labels().iter().map(|&l| if l == 0 { 0 } else { l + offset }));
        for mut rec in band_records {
            rec.label += offset;
            records.push(rec);
            layers.push(Some(Layer::ALL[i]));
        }
        offset += labels.max_label();
    }
    let width = band_labels[0].width();
    let height = band_labels.iter().map(|l| l.height()).sum();
    Classified {
        labels: LabelMatrix::new(width, height, stacked),
        records,
        layers,
        per_layer_pds: Some(pds),
    }
}

pub fn build_report(classified: &Classified, mode: Mode, params_digest: String) -> DegradationReport {
    let labels = &classified.labels;
    let area = labels.labels().len();
    let tally = CategoryTally::from_records(&classified.records);
    let pds_percent = compute_pds(&classified.records, area);
    let final_pds = match classified.per_layer_pds {
        Some(p) => (p[0] + p[1] + p[2]) / 3.0,
        None => pds_percent,
    };
    let segments = classified
        .records
        .iter()
        .zip(&classified.layers)
        .map(|(rec, layer)| SegmentEntry {
            record: rec.clone(),
            color_index: color_index(rec.category, rec.r),
            layer: *layer,
        })
        .collect();
    DegradationReport {
        mode,
        width: labels.width(),
        height: labels.height(),
        image_area_px: area,
        segments,
        typical_area_px: tally.area_typical_px,
        unassigned_px: area - tally.total_area(),
        tally,
        pds_percent,
        per_layer_pds: classified.per_layer_pds,
        final_pds,
        params_digest,
    }
}

/// Every intermediate of one run, for callers that want to inspect stages.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub gray: GrayImage,
    pub toned: GrayImage,
    pub bands: [LayerBand; 3],
    pub filtered: [GrayImage; 3],
    pub prepared: [Prepared; 3],
    pub classified: Classified,
    pub report: DegradationReport,
    pub overlay: RgbImage,
}

pub fn run_with(img: &RgbImage, cfg: &PipelineConfig, assets: &Assets) -> PipelineResult<PipelineRun> {
    cfg.validate()?;
    let gray = to_grayscale(img);
    let toned = tone_stage(&gray, cfg.tone, assets.reference.as_ref());
    let bands = layer_bands(toned.height())?;
    let filtered = bands.map(|b| filter_layer(&toned.crop_rows(b.row_start, b.row_end), cfg.layer(b.layer)));
    let mut prepared = Vec::with_capacity(3);
    for (band, f) in bands.iter().zip(&filtered) {
        prepared.push(prepare_layer(band.layer, f, cfg.layer(band.layer))?);
    }
    let prepared: [Prepared; 3] = prepared.try_into().expect("three bands");
    let classified = match cfg.mode {
        Mode::Stitched => classify_stitched(stitched_labels([&prepared[0], &prepared[1], &prepared[2]]), &cfg.calibration),
        Mode::Averaged => {
            let labels = [0, 1, 2].map(|i| layer_labels(&prepared[i]));
            classify_averaged([&labels[0], &labels[1], &labels[2]], &cfg.calibration)
        }
    };
    let overlay = render_labels(&classified.labels, &classified.records, &assets.color_key)?;
    let report = build_report(&classified, cfg.mode, cfg.digest());
    Ok(PipelineRun {
        gray,
        toned,
        bands,
        filtered,
        prepared,
        classified,
        report,
        overlay,
    })
}

/// Runs the configured mode, loading any referenced assets.
pub fn process(img: &RgbImage, cfg: &PipelineConfig) -> PipelineResult<(DegradationReport, RgbImage)> {
    let assets = Assets::load(cfg)?;
    let run = run_with(img, cfg, &assets)?;
    Ok((run.report, run.overlay))
}

pub fn process_stitched(img: &RgbImage, cfg: &PipelineConfig) -> PipelineResult<(DegradationReport, RgbImage)> {
    process(img, &PipelineConfig { mode: Mode::Stitched, ..cfg.clone() })
}

pub fn process_averaged(img: &RgbImage, cfg: &PipelineConfig) -> PipelineResult<(DegradationReport, RgbImage)> {
    process(img, &PipelineConfig { mode: Mode::Averaged, ..cfg.clone() })
}

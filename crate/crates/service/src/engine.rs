//! Per-session stage cache and lazy recomputation.
//!
//! Artifacts (and stage failures) are cached under `(node, digest)`. Only
//! entries whose digest matches the current configuration are ever looked
//! up, and entries left stale by an update are dropped.

use std::collections::HashMap;
use std::sync::Arc;

use ballast_core::analysis::CalibrationConfig;
use ballast_core::colorcode::{render_label_ids, render_labels};
use ballast_core::imagecore::{layer_bands, stitch_layers, to_grayscale, GrayImage, LayerBand, RgbImage};
use ballast_core::pipeline::{
    band_watershed, build_report, classify_averaged, classify_stitched, filter_layer, stitch_watershed,
    tone_stage, Assets, Classified, Mode, PipelineConfig, PipelineError,
};
use ballast_core::segmentation::{gradient_magnitude, impose_minima, open_close, prepare_markers, MarkerSet};
use ballast_core::{DegradationReport, LabelMatrix, Layer};
use serde::Serialize;

use crate::graph::{digests, invalidated, Digests, NodeId, Stage, ViewStage};

#[derive(Debug)]
pub enum Artifact {
    Gray(GrayImage),
    Markers(MarkerSet),
    Labels(LabelMatrix),
    Classified(Classified),
    Overlay(RgbImage),
}

/// A pipeline error as reported to clients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageFailure {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer: Option<Layer>,
    pub message: String,
}

impl From<&PipelineError> for StageFailure {
    fn from(e: &PipelineError) -> Self {
        Self {
            error: e.kind().to_string(),
            layer: e.layer(),
            message: e.to_string(),
        }
    }
}

type Outcome = Result<Arc<Artifact>, StageFailure>;

pub struct SessionState {
    image: RgbImage,
    bands: [LayerBand; 3],
    config: PipelineConfig,
    assets: Assets,
    digests: Digests,
    cache: HashMap<(NodeId, String), Outcome>,
    /// Nodes computed since creation, for tests and diagnostics.
    computed: Vec<NodeId>,
}

impl SessionState {
    /// `image` must be at least three rows tall.
    pub fn new(image: RgbImage, config: PipelineConfig, assets: Assets) -> Self {
        let bands = layer_bands(image.height()).expect("image tall enough for three bands");
        Self {
            image,
            bands,
            digests: digests(&config),
            config,
            assets,
            cache: HashMap::new(),
            computed: Vec::new(),
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    pub fn computed(&self) -> &[NodeId] {
        &self.computed
    }

    /// Nodes with a current cache entry, in graph order.
    pub fn cached(&self) -> Vec<NodeId> {
        self.digests
            .iter()
            .filter(|(id, d)| self.cache.contains_key(&(**id, (*d).clone())))
            .map(|(id, _)| *id)
            .collect()
    }

    /// Installs a validated configuration and its assets; returns the nodes
    /// that now need recomputation.
    pub fn update(&mut self, config: PipelineConfig, assets: Assets) -> Vec<NodeId> {
        let new = digests(&config);
        let stale = invalidated(&self.digests, &config, &new);
        self.config = config;
        self.assets = assets;
        self.digests = new;
        let live = &self.digests;
        self.cache.retain(|(id, d), _| live.get(id) == Some(d));
        stale
    }

    fn get(&mut self, id: NodeId) -> Outcome {
        let key = (id, self.digests[&id].clone());
        if let Some(hit) = self.cache.get(&key) {
            return hit.clone();
        }
        let out = self.compute(id);
        self.computed.push(id);
        self.cache.insert(key, out.clone());
        out
    }

    fn compute(&mut self, id: NodeId) -> Outcome {
        let art = match (id.stage, id.layer) {
            (Stage::Gray, _) => Artifact::Gray(to_grayscale(&self.image)),
            (Stage::Tone, _) => {
                let gray = self.get(NodeId::whole(Stage::Gray))?;
                Artifact::Gray(tone_stage(
                    as_gray(&gray),
                    self.config.tone,
                    self.assets.reference.as_ref(),
                ))
            }
            (Stage::Filtered, Some(l)) => {
                let tone = self.get(NodeId::whole(Stage::Tone))?;
                let band = self.bands[l.index()];
                let crop = as_gray(&tone).crop_rows(band.row_start, band.row_end);
                Artifact::Gray(filter_layer(&crop, self.config.layer(l)))
            }
            (Stage::OpenedClosed, Some(l)) => {
                let f = self.get(NodeId::band(Stage::Filtered, l))?;
                Artifact::Gray(open_close(as_gray(&f), &self.config.layer(l).seg.strel()))
            }
            (Stage::Markers, Some(l)) => {
                let oc = self.get(NodeId::band(Stage::OpenedClosed, l))?;
                let markers = prepare_markers(as_gray(&oc), &self.config.layer(l).seg)
                    .map_err(|source| StageFailure::from(&PipelineError::Layer { layer: l, source }))?;
                Artifact::Markers(markers)
            }
            (Stage::Gradient, Some(l)) => {
                let f = self.get(NodeId::band(Stage::Filtered, l))?;
                Artifact::Gray(gradient_magnitude(as_gray(&f)))
            }
            (Stage::Relief, Some(l)) => {
                let g = self.get(NodeId::band(Stage::Gradient, l))?;
                let m = self.get(NodeId::band(Stage::Markers, l))?;
                Artifact::Gray(impose_minima(as_gray(&g), &as_markers(&m).union()))
            }
            (Stage::Labels, None) => {
                let mut reliefs = Vec::new();
                let mut markers = Vec::new();
                // bands in order so the first failing band is reported
                for l in Layer::ALL {
                    reliefs.push(self.get(NodeId::band(Stage::Relief, l))?);
                    markers.push(self.get(NodeId::band(Stage::Markers, l))?);
                }
                Artifact::Labels(stitch_watershed(
                    [0, 1, 2].map(|i| as_gray(&reliefs[i])),
                    [0, 1, 2].map(|i| as_markers(&markers[i])),
                ))
            }
            (Stage::Labels, Some(l)) => {
                let r = self.get(NodeId::band(Stage::Relief, l))?;
                let m = self.get(NodeId::band(Stage::Markers, l))?;
                Artifact::Labels(band_watershed(as_gray(&r), as_markers(&m)))
            }
            (Stage::Analysis, _) => Artifact::Classified(self.classify()?),
            (Stage::Render, _) => {
                let a = self.get(NodeId::whole(Stage::Analysis))?;
                let c = as_classified(&a);
                let overlay = render_labels(&c.labels, &c.records, &self.assets.color_key)
                    .map_err(|e| StageFailure::from(&PipelineError::from(e)))?;
                Artifact::Overlay(overlay)
            }
            (stage, layer) => unreachable!("no node {stage:?} for {layer:?}"),
        };
        Ok(Arc::new(art))
    }

    fn classify(&mut self) -> Result<Classified, StageFailure> {
        let cal: CalibrationConfig = self.config.calibration;
        Ok(match self.config.mode {
            Mode::Stitched => {
                let l = self.get(NodeId::whole(Stage::Labels))?;
                classify_stitched(as_labels(&l).clone(), &cal)
            }
            Mode::Averaged => {
                // prepare every band before flooding any, like a cold run
                for l in Layer::ALL {
                    self.get(NodeId::band(Stage::Relief, l))?;
                }
                let mut band = Vec::new();
                for l in Layer::ALL {
                    band.push(self.get(NodeId::band(Stage::Labels, l))?);
                }
                classify_averaged([0, 1, 2].map(|i| as_labels(&band[i])), &cal)
            }
        })
    }

    pub fn report(&mut self) -> Result<DegradationReport, StageFailure> {
        let a = self.get(NodeId::whole(Stage::Analysis))?;
        Ok(build_report(as_classified(&a), self.config.mode, self.config.digest()))
    }

    pub fn overlay(&mut self) -> Result<RgbImage, StageFailure> {
        let r = self.get(NodeId::whole(Stage::Render))?;
        match &*r {
            Artifact::Overlay(o) => Ok(o.clone()),
            other => unreachable!("render produced {other:?}"),
        }
    }

    /// PNG bytes of a stage. Band stages without a layer show all three
    /// bands stacked; whole-image stages with a layer are cropped to it.
    pub fn stage_png(&mut self, stage: ViewStage, layer: Option<Layer>) -> Result<Vec<u8>, StageFailure> {
        let band_stage = match stage {
            ViewStage::Filtered => Some(Stage::Filtered),
            ViewStage::OpenedClosed => Some(Stage::OpenedClosed),
            ViewStage::Gradient => Some(Stage::Gradient),
            ViewStage::Markers => Some(Stage::Markers),
            _ => None,
        };
        if let Some(s) = band_stage {
            let layers = match layer {
                Some(l) => vec![l],
                None => Layer::ALL.to_vec(),
            };
            let mut parts = Vec::new();
            for l in layers {
                let art = self.get(NodeId::band(s, l))?;
                parts.push(match &*art {
                    Artifact::Markers(m) => m.union().to_gray(),
                    Artifact::Gray(g) => g.clone(),
                    other => unreachable!("band stage produced {other:?}"),
                });
            }
            let img = match parts.as_slice() {
                [one] => one.clone(),
                [t, m, b] => stitch_layers(t, m, b).expect("bands share the image width"),
                _ => unreachable!("one or three bands"),
            };
            return Ok(img.to_png_bytes());
        }
        let crop_gray = |g: &GrayImage, band: Option<LayerBand>| match band {
            Some(b) => g.crop_rows(b.row_start, b.row_end),
            None => g.clone(),
        };
        let band = layer.map(|l| self.bands[l.index()]);
        Ok(match stage {
            ViewStage::Gray | ViewStage::Tone => {
                let s = if stage == ViewStage::Gray { Stage::Gray } else { Stage::Tone };
                let g = self.get(NodeId::whole(s))?;
                crop_gray(as_gray(&g), band).to_png_bytes()
            }
            ViewStage::Labels => {
                let labels = match (self.config.mode, layer) {
                    (Mode::Averaged, Some(l)) => {
                        let band = self.get(NodeId::band(Stage::Labels, l))?;
                        as_labels(&band).clone()
                    }
                    (Mode::Stitched, _) => {
                        let all = self.get(NodeId::whole(Stage::Labels))?;
                        let all = as_labels(&all);
                        match band {
                            Some(b) => all.crop_rows(b.row_start, b.row_end),
                            None => all.clone(),
                        }
                    }
                    (Mode::Averaged, None) => {
                        let a = self.get(NodeId::whole(Stage::Analysis))?;
                        as_classified(&a).labels.clone()
                    }
                };
                render_label_ids(&labels, &self.assets.color_key).to_png_bytes()
            }
            ViewStage::Overlay => {
                let o = self.overlay()?;
                match band {
                    Some(b) => o.crop_rows(b.row_start, b.row_end),
                    None => o,
                }
                .to_png_bytes()
            }
            _ => unreachable!("band stages handled above"),
        })
    }
}

fn as_gray(a: &Artifact) -> &GrayImage {
    match a {
        Artifact::Gray(g) => g,
        other => unreachable!("expected image, got {other:?}"),
    }
}

fn as_markers(a: &Artifact) -> &MarkerSet {
    match a {
        Artifact::Markers(m) => m,
        other => unreachable!("expected markers, got {other:?}"),
    }
}

fn as_labels(a: &Artifact) -> &LabelMatrix {
    match a {
        Artifact::Labels(l) => l,
        other => unreachable!("expected labels, got {other:?}"),
    }
}

fn as_classified(a: &Artifact) -> &Classified {
    match a {
        Artifact::Classified(c) => c,
        other => unreachable!("expected classification, got {other:?}"),
    }
}

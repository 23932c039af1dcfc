//! Stage dependency graph.
//!
//! Each node names the configuration fields it reads (as JSON pointers) and
//! the nodes it consumes. A node's digest hashes its own parameter values
//! together with its parents' digests, so a parameter change invalidates
//! exactly the nodes downstream of it.

use std::collections::BTreeMap;
use std::fmt;

use ballast_core::pipeline::{digest_json, Mode, PipelineConfig};
use ballast_core::Layer;
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Gray,
    Tone,
    Filtered,
    OpenedClosed,
    Markers,
    Gradient,
    Relief,
    Labels,
    Analysis,
    Render,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Gray => "gray",
            Stage::Tone => "tone",
            Stage::Filtered => "filtered",
            Stage::OpenedClosed => "opened_closed",
            Stage::Markers => "markers",
            Stage::Gradient => "gradient",
            Stage::Relief => "relief",
            Stage::Labels => "labels",
            Stage::Analysis => "analysis",
            Stage::Render => "render",
        }
    }

    /// Stages that are computed once per band.
    pub fn is_per_layer(self) -> bool {
        matches!(
            self,
            Stage::Filtered | Stage::OpenedClosed | Stage::Markers | Stage::Gradient | Stage::Relief
        )
    }
}

/// Image stages a client may request. `overlay` is the rendered result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewStage {
    Gray,
    Tone,
    Filtered,
    OpenedClosed,
    Markers,
    Gradient,
    Labels,
    Overlay,
}

impl ViewStage {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "gray" => ViewStage::Gray,
            "tone" => ViewStage::Tone,
            "filtered" => ViewStage::Filtered,
            "opened_closed" => ViewStage::OpenedClosed,
            "markers" => ViewStage::Markers,
            "gradient" => ViewStage::Gradient,
            "labels" => ViewStage::Labels,
            "overlay" => ViewStage::Overlay,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub stage: Stage,
    pub layer: Option<Layer>,
}

impl NodeId {
    pub fn whole(stage: Stage) -> Self {
        Self { stage, layer: None }
    }

    pub fn band(stage: Stage, layer: Layer) -> Self {
        Self {
            stage,
            layer: Some(layer),
        }
    }
}

/// `stage` or `stage:layer`.
impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layer {
            Some(l) => write!(f, "{}:{}", self.stage.name(), l),
            None => f.write_str(self.stage.name()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub params: Vec<String>,
    pub parents: Vec<NodeId>,
}

fn node(id: NodeId, params: &[String], parents: &[NodeId]) -> Node {
    Node {
        id,
        params: params.to_vec(),
        parents: parents.to_vec(),
    }
}

/// Nodes in topological order. Stitched mode floods all bands in one
/// `labels` node; averaged mode has one `labels` node per band.
pub fn graph(mode: Mode) -> Vec<Node> {
    use Stage::*;
    let mut nodes = vec![
        node(NodeId::whole(Gray), &[], &[]),
        node(
            NodeId::whole(Tone),
            &["/tone".into(), "/reference_image".into()],
            &[NodeId::whole(Gray)],
        ),
    ];
    for layer in Layer::ALL {
        let i = layer.index();
        let at = |s| NodeId::band(s, layer);
        nodes.extend([
            node(at(Filtered), &[format!("/layers/{i}/bilateral")], &[NodeId::whole(Tone)]),
            node(at(OpenedClosed), &[format!("/layers/{i}/seg/strel_radius")], &[at(Filtered)]),
            node(at(Markers), &[format!("/layers/{i}/seg")], &[at(OpenedClosed)]),
            node(at(Gradient), &[], &[at(Filtered)]),
            node(at(Relief), &[], &[at(Gradient), at(Markers)]),
        ]);
    }
    let labels: Vec<NodeId> = match mode {
        Mode::Stitched => {
            let parents: Vec<NodeId> = Layer::ALL
                .iter()
                .flat_map(|&l| [NodeId::band(Relief, l), NodeId::band(Markers, l)])
                .collect();
            nodes.push(node(NodeId::whole(Labels), &["/mode".into()], &parents));
            vec![NodeId::whole(Labels)]
        }
        Mode::Averaged => Layer::ALL
            .iter()
            .map(|&l| {
                let id = NodeId::band(Labels, l);
                nodes.push(node(
                    id,
                    &["/mode".into()],
                    &[NodeId::band(Relief, l), NodeId::band(Markers, l)],
                ));
                id
            })
            .collect(),
    };
    nodes.push(node(
        NodeId::whole(Analysis),
        &["/calibration".into(), "/mode".into()],
        &labels,
    ));
    nodes.push(node(
        NodeId::whole(Render),
        &["/color_key".into()],
        &[NodeId::whole(Analysis)],
    ));
    nodes
}

pub type Digests = BTreeMap<NodeId, String>;

pub fn digests(cfg: &PipelineConfig) -> Digests {
    let doc = serde_json::to_value(cfg).expect("config serializes");
    let mut out = Digests::new();
    for n in graph(cfg.mode) {
        let params: Vec<&Value> = n
            .params
            .iter()
            .map(|p| doc.pointer(p).unwrap_or(&Value::Null))
            .collect();
        let parents: Vec<&str> = n.parents.iter().map(|p| out[p].as_str()).collect();
        let d = digest_json(&json!({
            "node": n.id.to_string(),
            "params": params,
            "parents": parents,
        }));
        out.insert(n.id, d);
    }
    out
}

/// Nodes of `new` whose digest differs from (or is missing in) `old`, in
/// graph order.
pub fn invalidated(old: &Digests, new_cfg: &PipelineConfig, new: &Digests) -> Vec<NodeId> {
    graph(new_cfg.mode)
        .into_iter()
        .map(|n| n.id)
        .filter(|id| old.get(id) != new.get(id))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ballast_core::default_config;

    fn names(ids: &[NodeId]) -> Vec<String> {
        ids.iter().map(|id| id.to_string()).collect()
    }

    fn diff(change: impl FnOnce(&mut PipelineConfig), mode: Mode) -> Vec<String> {
        let mut cfg = default_config();
        cfg.mode = mode;
        let old = digests(&cfg);
        change(&mut cfg);
        names(&invalidated(&old, &cfg, &digests(&cfg)))
    }

    #[test]
    fn graph_is_topological() {
        for mode in [Mode::Stitched, Mode::Averaged] {
            let mut seen = Vec::new();
            for n in graph(mode) {
                assert!(n.parents.iter().all(|p| seen.contains(p)), "{}", n.id);
                assert_eq!(n.id.stage.is_per_layer(), n.id.layer.is_some() && n.id.stage != Stage::Labels);
                seen.push(n.id);
            }
        }
    }

    #[test]
    fn no_change_invalidates_nothing() {
        assert!(diff(|_| {}, Mode::Stitched).is_empty());
    }

    #[test]
    fn calibration_change_touches_analysis_and_render() {
        for mode in [Mode::Stitched, Mode::Averaged] {
            assert_eq!(
                diff(|c| c.calibration.convex_threshold = 0.8, mode),
                ["analysis", "render"]
            );
        }
    }

    #[test]
    fn bottom_sigma_in_averaged_mode_keeps_other_bands() {
        let got = diff(|c| c.layers[2].bilateral.sigma_s = 7.0, Mode::Averaged);
        assert_eq!(
            got,
            [
                "filtered:bottom",
                "opened_closed:bottom",
                "markers:bottom",
                "gradient:bottom",
                "relief:bottom",
                "labels:bottom",
                "analysis",
                "render"
            ]
        );
    }

    #[test]
    fn bottom_sigma_in_stitched_mode_keeps_other_band_preparation() {
        let got = diff(|c| c.layers[2].bilateral.sigma_s = 7.0, Mode::Stitched);
        assert_eq!(
            got,
            [
                "filtered:bottom",
                "opened_closed:bottom",
                "markers:bottom",
                "gradient:bottom",
                "relief:bottom",
                "labels",
                "analysis",
                "render"
            ]
        );
    }

    #[test]
    fn strel_change_starts_at_morphology() {
        let got = diff(|c| c.layers[0].seg.strel_radius = 10, Mode::Stitched);
        assert_eq!(
            got,
            [
                "opened_closed:top",
                "markers:top",
                "relief:top",
                "labels",
                "analysis",
                "render"
            ]
        );
    }

    #[test]
    fn tone_change_reaches_every_band() {
        let got = diff(|c| c.tone = Some(Default::default()), Mode::Stitched);
        assert_eq!(got.len(), 1 + 3 * 5 + 3);
        assert!(!got.contains(&"gray".to_string()));
    }

    #[test]
    fn mode_switch_recomputes_labels_onward() {
        let got = diff(|c| c.mode = Mode::Averaged, Mode::Stitched);
        assert_eq!(got, ["labels:top", "labels:middle", "labels:bottom", "analysis", "render"]);
    }
}

//! `process` subcommand: configuration layering and the batch loop.

use std::path::{Path, PathBuf};

use ballast_core::imagecore::{load_image, save_png};
use ballast_core::pipeline::{run_with, Assets, Mode, PipelineConfig};
use ballast_core::preprocess::ToneParams;
use rayon::prelude::*;

use crate::report::{write_csv, write_json, ReportRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
    Both,
}

/// Per-run overrides taken from command-line flags.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub gamma: Option<f64>,
    pub brightness: Option<f64>,
    pub reference: Option<PathBuf>,
    pub strel: Vec<usize>,
    pub sigma_s: Vec<f64>,
    pub sigma_r: Vec<f64>,
    pub convex_threshold: Option<f64>,
    pub ball_area_px: Option<f64>,
}

/// A problem with the invocation itself (exit status 2).
#[derive(Debug)]
pub struct UsageError(pub String);

fn per_layer<T: Copy>(flag: &str, values: &[T]) -> Result<Option<[T; 3]>, UsageError> {
    match values {
        [] => Ok(None),
        [v] => Ok(Some([*v; 3])),
        [a, b, c] => Ok(Some([*a, *b, *c])),
        _ => Err(UsageError(format!("--{flag} takes one value or three (top,middle,bottom)"))),
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(file: Option<&Path>, o: &Overrides) -> Result<PipelineConfig, UsageError> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let patch: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("config {} is not valid JSON: {e}", path.display())))?;
        cfg = cfg.apply_patch(&patch).map_err(|e| {
            UsageError(format!("config {}: field `{}`: {}", path.display(), e.path, e.reason))
        })?;
    }
    if let Some(m) = o.mode {
        cfg.mode = m;
    }
    if o.gamma.is_some() || o.brightness.is_some() {
        let base = cfg.tone.unwrap_or_default();
        cfg.tone = Some(ToneParams {
            gamma: o.gamma.unwrap_or(base.gamma),
            brightness_gain: o.brightness.unwrap_or(base.brightness_gain),
        });
    }
    if let Some(r) = &o.reference {
        cfg.reference_image = Some(r.clone());
    }
    if let Some(v) = per_layer("strel", &o.strel)? {
        for (l, s) in cfg.layers.iter_mut().zip(v) {
            l.seg.strel_radius = s;
        }
    }
    if let Some(v) = per_layer("sigma-s", &o.sigma_s)? {
        for (l, s) in cfg.layers.iter_mut().zip(v) {
            l.bilateral.sigma_s = s;
        }
    }
    if let Some(v) = per_layer("sigma-r", &o.sigma_r)? {
        for (l, s) in cfg.layers.iter_mut().zip(v) {
            l.bilateral.sigma_r = s;
        }
    }
    if let Some(t) = o.convex_threshold {
        cfg.calibration.convex_threshold = t;
    }
    if let Some(b) = o.ball_area_px {
        cfg.calibration.ball_area_px = b;
    }
    cfg.validate()
        .map_err(|e| UsageError(format!("invalid parameter `{}`: {}", e.path, e.reason)))?;
    Ok(cfg)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// The input file, or the PNG/JPEG files of a directory sorted by path.
pub fn collect_inputs(input: &Path) -> Result<Vec<PathBuf>, UsageError> {
    if input.is_dir() {
        let entries = std::fs::read_dir(input)
            .map_err(|e| UsageError(format!("cannot list {}: {e}", input.display())))?;
        let mut files: Vec<PathBuf> = entries
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        files.sort();
        Ok(files)
    } else if input.exists() {
        Ok(vec![input.to_path_buf()])
    } else {
        Err(UsageError(format!("input {} does not exist", input.display())))
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

/// Runs one image and writes `<stem>.overlay.png` and `<stem>.report.json`.
fn process_one(path: &Path, cfg: &PipelineConfig, assets: &Assets, out: &Path) -> Result<ReportRow, String> {
    let img = load_image(path).map_err(|e| e.to_string())?;
    let run = run_with(&img, cfg, assets).map_err(|e| e.to_string())?;
    let stem = stem(path);
    save_png(&run.overlay, out.join(format!("{stem}.overlay.png"))).map_err(|e| e.to_string())?;
    std::fs::write(out.join(format!("{stem}.report.json")), run.report.to_json())
        .map_err(|e| format!("cannot write report for {}: {e}", path.display()))?;
    Ok(ReportRow::new(path, &run.report))
}

pub struct BatchOutcome {
    pub rows: Vec<ReportRow>,
    pub failures: usize,
}

pub fn run_batch(
    inputs: &[PathBuf],
    cfg: &PipelineConfig,
    out: &Path,
    format: ReportFormat,
) -> Result<BatchOutcome, UsageError> {
    std::fs::create_dir_all(out).map_err(|e| UsageError(format!("cannot create {}: {e}", out.display())))?;
    let assets = Assets::load(cfg).map_err(|e| UsageError(e.to_string()))?;
    let results: Vec<_> = inputs
        .par_iter()
        .map(|p| (p, process_one(p, cfg, &assets, out)))
        .collect();
    let mut rows = Vec::new();
    let mut failures = 0;
    for (path, res) in results {
        match res {
            Ok(row) => {
                log::info!("{}: PDS {:.2}%", path.display(), row.final_pds);
                rows.push(row);
            }
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                failures += 1;
            }
        }
    }
    let write_err = |e: std::io::Error| UsageError(format!("cannot write report: {e}"));
    if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
        write_csv(&rows, &out.join("report.csv")).map_err(write_err)?;
    }
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        write_json(&rows, &out.join("report.json")).map_err(write_err)?;
    }
    Ok(BatchOutcome { rows, failures })
}

//! Batch report rows and their CSV/JSON forms.

use std::path::Path;

use ballast_core::pipeline::Mode;
use ballast_core::DegradationReport;
use serde::{Deserialize, Serialize};

pub const CSV_HEADER: [&str; 11] = [
    "image",
    "mode",
    "final_pds",
    "pds_top",
    "pds_middle",
    "pds_bottom",
    "n_small",
    "n_typical",
    "n_large",
    "n_convexfail",
    "params_digest",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub image: String,
    pub mode: Mode,
    pub final_pds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pds_top: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pds_middle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pds_bottom: Option<f64>,
    pub n_small: usize,
    pub n_typical: usize,
    pub n_large: usize,
    pub n_convexfail: usize,
    pub params_digest: String,
}

impl ReportRow {
    pub fn new(image: &Path, report: &DegradationReport) -> Self {
        let per = report.per_layer_pds;
        Self {
            image: image.display().to_string(),
            mode: report.mode,
            final_pds: report.final_pds,
            pds_top: per.map(|p| p[0]),
            pds_middle: per.map(|p| p[1]),
            pds_bottom: per.map(|p| p[2]),
            n_small: report.tally.n_small,
            n_typical: report.tally.n_typical,
            n_large: report.tally.n_large,
            n_convexfail: report.tally.n_convexfail,
            params_digest: report.params_digest.clone(),
        }
    }

    fn csv_record(&self) -> [String; 11] {
        let pct = |v: f64| format!("{v:.2}");
        let opt = |v: Option<f64>| v.map(pct).unwrap_or_default();
        [
            self.image.clone(),
            self.mode.name().to_string(),
            pct(self.final_pds),
            opt(self.pds_top),
            opt(self.pds_middle),
            opt(self.pds_bottom),
            self.n_small.to_string(),
            self.n_typical.to_string(),
            self.n_large.to_string(),
            self.n_convexfail.to_string(),
            self.params_digest.clone(),
        ]
    }
}

pub fn write_csv(rows: &[ReportRow], path: &Path) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(row.csv_record())?;
    }
    w.flush()
}

pub fn write_json(rows: &[ReportRow], path: &Path) -> std::io::Result<()> {
    let text = serde_json::to_vec_pretty(rows).expect("rows serialize");
    std::fs::write(path, text)
}

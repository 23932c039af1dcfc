//! Machine-vision evaluation of railway ballast degradation.
//!
//! The pipeline converts a ballast cross-section image to grayscale, splits
//! it into three horizontal bands, smooths each band with an edge-preserving
//! bilateral filter, segments particles with a marker-controlled watershed,
//! screens segments by convexity, sorts them into size classes against a
//! calibration ball, and scores the image with the Percentage of Degraded
//! Segments (PDS): the share of image area not covered by typical-size
//! particles.
//!
//! ```no_run
//! use ballast_core::{imagecore, pipeline};
//!
//! let img = imagecore::load_image("section.png")?;
//! let (report, overlay) = pipeline::process(&img, &pipeline::default_config())?;
//! println!("PDS = {:.2}%", report.final_pds);
//! imagecore::save_png(&overlay, "section.overlay.png")?;
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod analysis;
pub mod colorcode;
pub mod imagecore;
pub mod morphology;
pub mod pipeline;
pub mod preprocess;
pub mod segmentation;
pub mod synthetic;

pub use analysis::{CalibrationConfig, Category, SegmentRecord};
pub use colorcode::{ColorIndex, ColorKey};
pub use imagecore::{GrayImage, Layer, RgbImage};
pub use pipeline::{default_config, DegradationReport, Mode, PipelineConfig, PipelineError};
pub use segmentation::{LabelMatrix, SegError};

use ballast_core::analysis::Category;
use ballast_core::imagecore::RgbImage;
use ballast_core::pipeline::{self, default_config, Mode, PipelineConfig};
use ballast_core::synthetic::{disk_image, disk_image_rgb, grid_layout, Disk};
use ballast_core::{Layer, PipelineError, SegError};

fn config(strel: usize, ball_area_px: f64) -> PipelineConfig {
    let mut cfg = default_config();
    for layer in &mut cfg.layers {
        layer.seg.strel_radius = strel;
    }
    cfg.calibration.ball_area_px = ball_area_px;
    cfg
}

/// 600x600, bands of 200 rows: one disk centred on the top/middle seam and
/// one wholly inside the bottom band.
fn seam_image() -> (RgbImage, Disk, Disk) {
    let seam = Disk::new(150.0, 200.0, 30.0);
    let bottom = Disk::new(450.0, 500.0, 30.0);
    (disk_image_rgb(600, 600, &[seam, bottom], 0.85, 0.1), seam, bottom)
}

fn seam_config() -> PipelineConfig {
    // full disk r ~ 0.15 (typical), each half ~ 0.075 (small)
    let (_, seam, _) = seam_image();
    config(10, seam.pixel_area(600, 600) as f64 / 0.15)
}

#[test]
fn seam_disk_is_one_segment_when_stitched() {
    let (img, _, _) = seam_image();
    let cfg = seam_config();
    let (stitched, _) = pipeline::process_stitched(&img, &cfg).unwrap();
    let (averaged, _) = pipeline::process_averaged(&img, &cfg).unwrap();
    assert_eq!(stitched.segments.len(), 2);
    assert_eq!(averaged.segments.len(), 3);
    assert_eq!(stitched.tally.n_typical, 2);
    assert_eq!(averaged.tally.n_small, 2);
    assert!(stitched.final_pds < averaged.final_pds);
}

#[test]
fn twelve_disks_are_typical_and_pds_matches_disk_area() {
    let (w, h) = (800, 600);
    let disks = grid_layout(w, h, 12, 32.0, 44.0).unwrap();
    let img = disk_image_rgb(w, h, &disks, 0.85, 0.1);
    let disk_area = disks[0].pixel_area(w, h);
    let cfg = config(10, disk_area as f64);
    let (report, overlay) = pipeline::process(&img, &cfg).unwrap();
    assert_eq!(report.segments.len(), 12);
    assert!(report.segments.iter().all(|s| s.record.category == Category::Typical));
    assert_eq!((overlay.width(), overlay.height()), (w, h));

    // watershed lines sit on the disk rims, so each segment may lose at most
    // one perimeter ring of pixels
    let perimeter = 2.0 * std::f64::consts::PI * disks[0].radius;
    for s in &report.segments {
        assert!((s.record.area_px as f64 - disk_area as f64).abs() <= perimeter, "{}", s.record.area_px);
    }
    let truth = 100.0 * (1.0 - (12 * disk_area) as f64 / (w * h) as f64);
    assert!((report.final_pds - truth).abs() <= 100.0 * 12.0 * perimeter / (w * h) as f64);
    assert_eq!(report.unassigned_px + report.tally.total_area(), w * h);
}

#[test]
fn disjoint_bands_give_equal_counts_in_both_modes() {
    let disks = [
        Disk::new(100.0, 90.0, 30.0),
        Disk::new(300.0, 100.0, 30.0),
        Disk::new(200.0, 300.0, 30.0),
        Disk::new(120.0, 500.0, 30.0),
        Disk::new(330.0, 480.0, 30.0),
    ];
    let img = disk_image_rgb(420, 600, &disks, 0.8, 0.1);
    let cfg = config(10, 2000.0);
    let (s, _) = pipeline::process_stitched(&img, &cfg).unwrap();
    let (a, _) = pipeline::process_averaged(&img, &cfg).unwrap();
    assert_eq!(s.segments.len(), 5);
    assert_eq!(a.segments.len(), 5);
    let per = a.per_layer_pds.unwrap();
    assert!((a.final_pds - (per[0] + per[1] + per[2]) / 3.0).abs() < 1e-12);
    assert!(s.per_layer_pds.is_none());
    assert_eq!(s.final_pds, s.pds_percent);
}

#[test]
fn black_image_fails_on_top_layer() {
    let img = RgbImage::filled(60, 90, [0.0; 3]).unwrap();
    let err = pipeline::process(&img, &config(5, 100.0)).unwrap_err();
    assert!(matches!(
        err,
        PipelineError::Layer {
            layer: Layer::Top,
            source: SegError::EmptyMarkers
        }
    ));
}

#[test]
fn dark_middle_layer_is_an_error_in_averaged_mode() {
    let disks = [Disk::new(100.0, 100.0, 30.0), Disk::new(100.0, 500.0, 30.0)];
    let gray = disk_image(200, 600, &disks, 0.8, 0.0);
    let img = RgbImage::from_gray(&gray);
    let mut cfg = config(10, 2000.0);
    cfg.mode = Mode::Averaged;
    let err = pipeline::process(&img, &cfg).unwrap_err();
    assert_eq!(err.layer(), Some(Layer::Middle));
}

#[test]
fn runs_are_deterministic() {
    let (img, _, _) = seam_image();
    let cfg = seam_config();
    let (r1, o1) = pipeline::process(&img, &cfg).unwrap();
    let (r2, o2) = pipeline::process(&img, &cfg).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(o1.to_png_bytes(), o2.to_png_bytes());
}

#[test]
fn stitched_labels_are_unique_per_segment() {
    let (img, _, _) = seam_image();
    let cfg = seam_config();
    let assets = pipeline::Assets::default();
    let run = pipeline::run_with(&img, &cfg, &assets).unwrap();
    let mut labels: Vec<u32> = run.classified.records.iter().map(|r| r.label).collect();
    labels.dedup();
    assert_eq!(labels.len(), run.classified.records.len());
    assert_eq!(
        pipeline::stitched_seed_count([&run.prepared[0], &run.prepared[1], &run.prepared[2]]),
        2
    );
}

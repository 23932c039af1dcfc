//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use ballast_core::analysis::{
    classify, compute_pds, convex_hull, convex_hull_area, convexity_ratio, extract_segments, CalibrationConfig,
    Category, SegmentRecord,
};
use ballast_core::colorcode::{color_index, default_color_key, ColorIndex};
use ballast_core::imagecore::{decode_image, save_png, GrayImage, RgbImage};
use ballast_core::morphology::{
    close_by_reconstruction, dilate, erode, open_by_reconstruction, reconstruct, DiskStrel,
};
use ballast_core::pipeline::{self, default_config, Mode, PipelineConfig};
use ballast_core::preprocess::{bilateral_filter, BilateralParams};
use ballast_core::segmentation::{segment_image, SegParams};
use ballast_core::synthetic::{disk_image, disk_image_rgb, grid_layout, Disk};
use ballast_service::{router, AppState, ServeOptions};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn random_image(rng: &mut impl Rng, w: usize, h: usize, levels: u32) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| rng.gen_range(0..=levels) as f64 / levels as f64).unwrap()
}

// 1. Bilateral filter against a direct double-loop evaluation.

fn naive_bilateral(img: &GrayImage, sigma_s: f64, sigma_r: f64) -> Vec<f64> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let radius = (2.0 * sigma_s).ceil() as i64;
    let sr = sigma_r / 255.0;
    let mut out = Vec::new();
    for py in 0..h {
        for px in 0..w {
            let ip = img.get(px as usize, py as usize);
            let (mut num, mut wp) = (0.0, 0.0);
            for qy in (py - radius).max(0)..=(py + radius).min(h - 1) {
                for qx in (px - radius).max(0)..=(px + radius).min(w - 1) {
                    let iq = img.get(qx as usize, qy as usize);
                    let d2 = ((px - qx).pow(2) + (py - qy).pow(2)) as f64;
                    let g = (-d2 / (2.0 * sigma_s * sigma_s)).exp() * (-(ip - iq).powi(2) / (2.0 * sr * sr)).exp();
                    num += g * iq;
                    wp += g;
                }
            }
            out.push(num / wp);
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let sigma_s = [2.0, 3.0, 6.0][i % 3];
        let sigma_r = [4.0, 8.0, 10.0][(i / 3) % 3];
        let img = random_image(&mut rng, 32, 32, 255);
        let fast = bilateral_filter(&img, BilateralParams::new(sigma_s, sigma_r));
        let slow = naive_bilateral(&img, sigma_s, sigma_r);
        for (a, b) in fast.data().iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    within(start.elapsed(), 5.0)?;
    Ok(format!("max |diff| {worst:.1e} over 20 images"))
}

// 2. Morphology against naive loops and the fixpoint definition.

fn naive_rank(img: &GrayImage, se: &DiskStrel, erode: bool) -> Vec<f64> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let offsets = se.offsets();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let vals = offsets
                .iter()
                .map(|&(dx, dy)| (x + dx, y + dy))
                .filter(|&(qx, qy)| qx >= 0 && qy >= 0 && qx < w && qy < h)
                .map(|(qx, qy)| img.get(qx as usize, qy as usize));
            out.push(if erode {
                vals.fold(f64::INFINITY, f64::min)
            } else {
                vals.fold(f64::NEG_INFINITY, f64::max)
            });
        }
    }
    out
}

fn naive_reconstruct(marker: &GrayImage, mask: &GrayImage) -> Vec<f64> {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let mut cur = marker.data().to_vec();
    loop {
        let mut next = cur.clone();
        for y in 0..h {
            for x in 0..w {
                let mut m = f64::NEG_INFINITY;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (qx, qy) = (x + dx, y + dy);
                        if qx >= 0 && qy >= 0 && qx < w && qy < h {
                            m = m.max(cur[(qy * w + qx) as usize]);
                        }
                    }
                }
                let i = (y * w + x) as usize;
                next[i] = m.min(mask.data()[i]);
            }
        }
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..20 {
        // dyadic levels keep complements exact
        let img = random_image(&mut rng, 32, 32, 64);
        let se = DiskStrel::new([1, 2, 3, 5][i % 4]);
        check(erode(&img, &se).data() == naive_rank(&img, &se, true).as_slice(), || {
            format!("erode differs on image {i}")
        })?;
        check(dilate(&img, &se).data() == naive_rank(&img, &se, false).as_slice(), || {
            format!("dilate differs on image {i}")
        })?;

        let mask = random_image(&mut rng, 32, 32, 64);
        let sparse = rng.gen_bool(0.5);
        let marker = GrayImage::from_fn(32, 32, |x, y| {
            let m = mask.get(x, y);
            if sparse {
                if rng.gen_bool(0.03) {
                    m
                } else {
                    0.0
                }
            } else {
                m.min(rng.gen_range(0..=64) as f64 / 64.0)
            }
        })
        .unwrap();
        let fast = reconstruct(&marker, &mask).map_err(|e| e.to_string())?;
        check(fast.data() == naive_reconstruct(&marker, &mask).as_slice(), || {
            format!("reconstruction differs on pair {i}")
        })?;

        let se = DiskStrel::new([1, 2, 3][i % 3]);
        let open = open_by_reconstruction(&img, &se);
        let close = close_by_reconstruction(&img, &se);
        check(open_by_reconstruction(&open, &se) == open, || format!("opening not idempotent on {i}"))?;
        check(close_by_reconstruction(&close, &se) == close, || format!("closing not idempotent on {i}"))?;
        check(
            close == open_by_reconstruction(&img.complement(), &se).complement(),
            || format!("duality fails on {i}"),
        )?;
    }
    within(start.elapsed(), 10.0)?;
    Ok("erode/dilate/reconstruct exact on 20 pairs; idempotence and duality exact".into())
}

// 3. Watershed on well-separated disks.

fn criterion_3() -> Outcome {
    let (w, h, strel, radius, gap) = (800, 600, 10, 32.0, 44.0);
    let params = SegParams::new(strel);
    let mut lines = Vec::new();
    for k in [1, 2, 5, 12, 20] {
        let start = Instant::now();
        let disks = grid_layout(w, h, k, radius, gap).ok_or("disks do not fit")?;
        for (i, a) in disks.iter().enumerate() {
            for b in &disks[i + 1..] {
                let sep = ((a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2)).sqrt() - 2.0 * radius;
                check(sep >= 4.0 * strel as f64, || format!("fixture separation {sep}"))?;
            }
        }
        let img = disk_image(w, h, &disks, 0.85, 0.1);
        let filtered = bilateral_filter(&img, BilateralParams::new(6.0, 8.0));
        let labels = segment_image(&filtered, &params).map_err(|e| e.to_string())?;
        let segments = extract_segments(&labels);
        check(segments.len() == k, || format!("k={k}: {} segments", segments.len()))?;
        let min_ratio = segments
            .iter()
            .map(|(_, pts)| convexity_ratio(pts.len(), &convex_hull(pts)))
            .fold(f64::INFINITY, f64::min);
        check(min_ratio >= 0.9, || format!("k={k}: convexity {min_ratio}"))?;
        within(start.elapsed(), 30.0)?;
        lines.push(format!("k={k} {:.1}s", start.elapsed().as_secs_f64()));
    }
    Ok(lines.join(", "))
}

// 4. Convex hull against an O(n^3) edge test.

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Sums the shoelace terms of every directed edge with all points on its
/// left or on the closed segment.
fn brute_hull_area(points: &[(i64, i64)]) -> f64 {
    let mut pts = points.to_vec();
    pts.sort();
    pts.dedup();
    let mut twice = 0i64;
    for &a in &pts {
        for &b in &pts {
            if a == b {
                continue;
            }
            let is_edge = pts.iter().all(|&c| {
                let cr = cross(a, b, c);
                cr > 0 || (cr == 0 && on_closed_segment(a, b, c))
            });
            if is_edge {
                twice += a.0 * b.1 - b.0 * a.1;
            }
        }
    }
    twice as f64 / 2.0
}

fn on_closed_segment(a: (i64, i64), b: (i64, i64), c: (i64, i64)) -> bool {
    c.0 >= a.0.min(b.0) && c.0 <= a.0.max(b.0) && c.1 >= a.1.min(b.1) && c.1 <= a.1.max(b.1)
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(1..=60);
        let pts: Vec<(i64, i64)> = (0..n).map(|_| (rng.gen_range(0..40), rng.gen_range(0..40))).collect();
        worst = worst.max((convex_hull_area(&pts) - brute_hull_area(&pts)).abs());
    }
    check(worst <= 1e-9, || format!("hull area deviation {worst}"))?;

    let l_shape: Vec<(i64, i64)> = (0..10)
        .flat_map(|y| (0..10).map(move |x| (x, y)))
        .filter(|&(x, y)| !(x >= 5 && y >= 5))
        .collect();
    let l_ratio = convexity_ratio(l_shape.len(), &convex_hull(&l_shape));
    check(l_ratio < 1.0, || format!("L-shape ratio {l_ratio}"))?;

    let mut disc_ratios = Vec::new();
    for r in [5.0, 8.5, 12.0, 20.0, 32.0] {
        let disc: Vec<(i64, i64)> = (-40..=40)
            .flat_map(|y| (-40..=40).map(move |x| (x, y)))
            .filter(|&(x, y)| ((x * x + y * y) as f64) <= r * r)
            .collect();
        disc_ratios.push(convexity_ratio(disc.len(), &convex_hull(&disc)));
    }
    check(disc_ratios.iter().all(|&v| v == 1.0), || format!("disc ratios {disc_ratios:?}"))?;
    Ok(format!("200 hulls max |diff| {worst:e}; L ratio {l_ratio:.4}; discs 1.0"))
}

// 5. PDS formula.

fn record(area_px: usize, category: Category) -> SegmentRecord {
    SegmentRecord {
        label: 1,
        area_px,
        hull_area_px: area_px as f64,
        convexity: 1.0,
        r: 1.0,
        category,
    }
}

fn criterion_5() -> Outcome {
    use Category::*;
    check(compute_pds(&[record(600, Typical), record(400, Typical)], 1000) == 0.0, || "all typical".into())?;
    check(compute_pds(&[record(300, Small), record(200, Large), record(10, ConvexFail)], 1000) == 100.0, || {
        "no typical".into()
    })?;
    check(
        compute_pds(&[record(200, Typical), record(300, Typical), record(100, Small)], 1000) == 50.0,
        || "A=1000, typical 200+300".into(),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cats = [ConvexFail, Small, Typical, Large];
    let cal = CalibrationConfig::default();
    for i in 0..1000 {
        let n = rng.gen_range(0..25);
        let mut recs: Vec<SegmentRecord> = (0..n)
            .map(|_| record(rng.gen_range(1..500), cats[rng.gen_range(0..4)]))
            .collect();
        let used: usize = recs.iter().map(|r| r.area_px).sum();
        let area = used + rng.gen_range(1..5000);
        let base = compute_pds(&recs, area);

        // more typical area, same A
        if let Some(t) = recs.iter().position(|r| r.category == Typical) {
            let mut grown = recs.clone();
            grown[t].area_px += area - used;
            check(compute_pds(&grown, area) <= base, || format!("list {i}: growing typical raised PDS"))?;
        }
        // demoting a typical segment
        if let Some(t) = recs.iter().position(|r| r.category == Typical) {
            let mut demoted = recs.clone();
            demoted[t].category = cats[rng.gen_range(0..4)];
            check(compute_pds(&demoted, area) >= base, || format!("list {i}: demotion lowered PDS"))?;
        }

        // scaling every area, A and the ball area together
        let c = rng.gen_range(2..50usize);
        let scaled_cal = CalibrationConfig {
            ball_area_px: cal.ball_area_px * c as f64,
            ..cal
        };
        for r in &mut recs {
            r.r = r.area_px as f64 / cal.ball_area_px;
            r.category = classify(1.0, r.r, &cal);
        }
        let scaled: Vec<SegmentRecord> = recs
            .iter()
            .map(|r| {
                let a = r.area_px * c;
                let rr = a as f64 / scaled_cal.ball_area_px;
                SegmentRecord {
                    area_px: a,
                    r: rr,
                    category: classify(1.0, rr, &scaled_cal),
                    ..r.clone()
                }
            })
            .collect();
        check(
            recs.iter().zip(&scaled).all(|(a, b)| a.category == b.category && a.r == b.r),
            || format!("list {i}: scaling changed a class"),
        )?;
        check(compute_pds(&recs, area) == compute_pds(&scaled, area * c), || {
            format!("list {i}: scaling changed PDS")
        })?;
    }
    Ok("fixtures exact; 1000 random lists monotone and scale invariant".into())
}

// 6. Defaults.

fn criterion_6() -> Outcome {
    let cfg = default_config();
    let got: Vec<(f64, f64, usize)> = cfg
        .layers
        .iter()
        .map(|l| (l.bilateral.sigma_s, l.bilateral.sigma_r, l.seg.strel_radius))
        .collect();
    check(got == [(6.0, 8.0, 14), (6.0, 8.0, 14), (8.0, 10.0, 14)], || format!("layers {got:?}"))?;
    let c = cfg.calibration;
    check(
        (c.convex_threshold, c.small_threshold, c.large_threshold) == (0.73, 0.11, 7.069),
        || format!("calibration {c:?}"),
    )?;
    check(cfg.mode == Mode::Stitched && cfg.tone.is_none(), || "mode/tone".into())?;
    Ok("sigma (6,8)/(6,8)/(8,10), strel 14, 0.73, 0.11/7.069".into())
}

// 7. A disk on the top/middle seam.

fn criterion_7() -> Outcome {
    let seam = Disk::new(150.0, 200.0, 30.0);
    let bottom = Disk::new(450.0, 500.0, 30.0);
    let img = disk_image_rgb(600, 600, &[seam, bottom], 0.85, 0.1);
    let mut cfg = default_config();
    for l in &mut cfg.layers {
        l.seg.strel_radius = 10;
    }
    // whole disk is typical, each half would be small
    cfg.calibration.ball_area_px = seam.pixel_area(600, 600) as f64 / 0.15;
    let assets = pipeline::Assets::default();
    let mut counts = Vec::new();
    let mut pds = Vec::new();
    for mode in [Mode::Stitched, Mode::Averaged] {
        let run = pipeline::run_with(&img, &PipelineConfig { mode, ..cfg.clone() }, &assets).map_err(|e| e.to_string())?;
        let labels = &run.classified.labels;
        let mut on_seam_disk: Vec<u32> = (0..600)
            .flat_map(|y| (0..600).map(move |x| (x, y)))
            .filter(|&(x, y)| seam.contains(x, y))
            .map(|(x, y)| labels.get(x, y))
            .filter(|&l| l != 0)
            .collect();
        on_seam_disk.sort();
        on_seam_disk.dedup();
        counts.push(on_seam_disk.len());
        pds.push(run.report.final_pds);
    }
    check(counts == [1, 2], || format!("segments on seam disk (stitched, averaged) = {counts:?}"))?;
    check(pds[0] < pds[1], || format!("PDS stitched {} vs averaged {}", pds[0], pds[1]))?;
    Ok(format!("segments 1 vs 2; PDS {:.2} < {:.2}", pds[0], pds[1]))
}

// 8. Color key bands.

fn criterion_8() -> Outcome {
    let cal = CalibrationConfig::default();
    let bands = [
        (Category::Small, 0.0, cal.small_threshold, (1u8, 3u8)),
        (Category::Typical, cal.small_threshold, cal.large_threshold, (4, 55)),
        (Category::Large, cal.large_threshold, 20.0, (56, 64)),
    ];
    let steps = 20_000;
    for (cat, lo, hi, (first, last)) in bands {
        let mut prev = 0u8;
        for i in 0..steps {
            let r = lo + (hi - lo) * i as f64 / steps as f64;
            let ColorIndex::Key(idx) = color_index(cat, r) else {
                return Err(format!("{cat:?} r={r} not a key index"));
            };
            check((first..=last).contains(&idx), || format!("{cat:?} r={r} -> {idx}"))?;
            check(idx >= prev, || format!("{cat:?} not monotone at r={r}"))?;
            prev = idx;
        }
    }
    check(color_index(Category::Small, 0.05) == ColorIndex::Key(2), || "small 0.05".into())?;
    for r in [11.569, 12.0, 50.0] {
        check(color_index(Category::Large, r) == ColorIndex::Key(64), || format!("large {r}"))?;
    }
    let purple = default_color_key().color(color_index(Category::ConvexFail, 1.0));
    check(purple == [0.5, 0.0, 0.5], || format!("convex fail color {purple:?}"))?;
    Ok("bands and monotonicity on a 20000-step grid; anchors hold".into())
}

// 9. End-to-end determinism, CLI and service.

fn ballast(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ballast")).args(args).output().expect("binary runs")
}

fn read_all(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().flatten().map(|e| e.path()).collect();
    files.sort();
    files.into_iter().map(|p| (p.clone(), std::fs::read(&p).unwrap())).collect()
}

fn corpus(dir: &Path) -> Vec<PathBuf> {
    let mut paths = Vec::new();
    for (i, (radius, shift)) in [(14.0, 0.0), (12.0, 4.0), (16.0, -3.0)].into_iter().enumerate() {
        // two disks in each band
        let disks: Vec<Disk> = [(45.0, 32.0), (130.0, 34.0), (48.0, 105.0), (128.0, 100.0), (42.0, 172.0), (125.0, 176.0)]
            .iter()
            .map(|&(x, y)| Disk::new(x + shift, y - shift, radius))
            .collect();
        let path = dir.join(format!("synthetic_{i}.png"));
        save_png(&disk_image_rgb(180, 210, &disks, 0.8, 0.15), &path).unwrap();
        paths.push(path);
    }
    paths
}

fn fast_args<'a>(input: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "process", "--input", input, "--out", out, "--strel", "4", "--sigma-s", "2", "--ball-area-px", "600",
    ]
}

async fn send(app: &axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn upload(bytes: &[u8]) -> Request<Body> {
    let b = "acceptance-boundary";
    let mut body = format!(
        "--{b}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"img.png\"\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{b}--\r\n").as_bytes());
    Request::post("/api/sessions")
        .header("content-type", format!("multipart/form-data; boundary={b}"))
        .body(Body::from(body))
        .unwrap()
}

fn random_patch(rng: &mut impl Rng) -> Value {
    let mut layer = || -> Value {
        match rng.gen_range(0..4) {
            0 => Value::Null,
            1 => json!({ "bilateral": { "sigma_s": (rng.gen_range(3..=6) as f64 / 2.0) } }),
            2 => json!({ "bilateral": { "sigma_r": (rng.gen_range(4..=10) as f64) } }),
            _ => json!({ "seg": { "strel_radius": (rng.gen_range(3..=5)) } }),
        }
    };
    let layers = [layer(), layer(), layer()];
    match rng.gen_range(0..4) {
        0 => json!({ "layers": layers }),
        1 => json!({ "calibration": { "convex_threshold": (rng.gen_range(60..=95) as f64 / 100.0) } }),
        2 => json!({ "mode": (if rng.gen_bool(0.5) { "stitched" } else { "averaged" }) }),
        _ => json!({ "calibration": { "ball_area_px": (rng.gen_range(300..=900) as f64) } }),
    }
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let inputs = dir.path().join("corpus");
    std::fs::create_dir(&inputs).unwrap();
    let images = corpus(&inputs);
    let (out1, out2) = (dir.path().join("run1"), dir.path().join("run2"));
    for out in [&out1, &out2] {
        let o = ballast(&fast_args(inputs.to_str().unwrap(), out.to_str().unwrap()));
        check(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    }
    let (a, b) = (read_all(&out1), read_all(&out2));
    check(a.len() == 2 * images.len() + 2, || format!("{} output files", a.len()))?;
    check(
        a.iter().zip(&b).all(|((_, x), (_, y))| x == y),
        || "CLI reruns differ".into(),
    )?;

    let rt = tokio::runtime::Runtime::new().unwrap();
    let mut compared = 0;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let image = &images[seed as usize % images.len()];
        let png = std::fs::read(image).unwrap();
        let opts = ServeOptions::default();
        let app = router(AppState::new(&opts).unwrap(), &opts);
        let (final_cfg, report, overlay) = rt.block_on(async {
            let (_, body) = send(&app, upload(&png)).await;
            let id = serde_json::from_slice::<Value>(&body).unwrap()["id"].as_str().unwrap().to_string();
            let patch = |v: Value| {
                Request::patch(format!("/api/sessions/{id}/params"))
                    .body(Body::from(v.to_string()))
                    .unwrap()
            };
            let start = json!({ "layers": [{ "bilateral": { "sigma_s": 2.0 }, "seg": { "strel_radius": 4 } },
                                           { "bilateral": { "sigma_s": 2.0 }, "seg": { "strel_radius": 4 } },
                                           { "bilateral": { "sigma_s": 2.0 }, "seg": { "strel_radius": 4 } }],
                                "calibration": { "ball_area_px": 600.0 } });
            assert_eq!(send(&app, patch(start)).await.0, StatusCode::OK);
            for _ in 0..8 {
                assert_eq!(send(&app, patch(random_patch(&mut rng))).await.0, StatusCode::OK);
                if rng.gen_bool(0.6) {
                    let stage = ["result", "stages/overlay", "stages/markers?layer=middle"][rng.gen_range(0..3)];
                    send(&app, Request::get(format!("/api/sessions/{id}/{stage}")).body(Body::empty()).unwrap()).await;
                }
            }
            let (_, body) = send(&app, Request::get(format!("/api/sessions/{id}")).body(Body::empty()).unwrap()).await;
            let cfg = serde_json::from_slice::<Value>(&body).unwrap()["config"].clone();
            let report = send(&app, Request::get(format!("/api/sessions/{id}/result")).body(Body::empty()).unwrap()).await;
            let overlay = send(&app, Request::get(format!("/api/sessions/{id}/stages/overlay")).body(Body::empty()).unwrap()).await;
            (cfg, report, overlay)
        });

        let cfg_path = dir.path().join(format!("final_{seed}.json"));
        std::fs::write(&cfg_path, final_cfg.to_string()).unwrap();
        let cold = dir.path().join(format!("cold_{seed}"));
        let o = ballast(&[
            "process",
            "--input",
            image.to_str().unwrap(),
            "--out",
            cold.to_str().unwrap(),
            "--config",
            cfg_path.to_str().unwrap(),
        ]);
        let stem = image.file_stem().unwrap().to_str().unwrap();
        if o.status.success() {
            check(report.0 == StatusCode::OK, || format!("seed {seed}: service {} but CLI ok", report.0))?;
            let cli_report = std::fs::read(cold.join(format!("{stem}.report.json"))).unwrap();
            let cli_overlay = std::fs::read(cold.join(format!("{stem}.overlay.png"))).unwrap();
            check(report.1 == cli_report, || format!("seed {seed}: report bytes differ"))?;
            check(overlay.1 == cli_overlay, || format!("seed {seed}: overlay bytes differ"))?;
            compared += 1;
        } else {
            check(report.0 == StatusCode::CONFLICT, || format!("seed {seed}: CLI failed, service {}", report.0))?;
        }
    }
    check(compared > 0, || "no successful service/CLI comparison".into())?;
    Ok(format!(
        "{} CLI files identical across reruns; {compared}/3 service sequences byte-equal to cold CLI",
        a.len()
    ))
}

// 10. Performance on a 1000x1320 image with defaults.

fn criterion_10() -> Outcome {
    let (w, h) = (1000, 1320);
    let disks = grid_layout(w, h, 24, 50.0, 60.0).ok_or("disks do not fit")?;
    let gray = disk_image(w, h, &disks, 0.8, 0.15);
    let png = gray.to_png_bytes();
    let img: RgbImage = decode_image(&png, Path::new("perf.png")).map_err(|e| e.to_string())?;
    let mut cfg = default_config();
    cfg.calibration.ball_area_px = disks[0].pixel_area(w, h) as f64;
    let start = Instant::now();
    let (report, _) = pipeline::process(&img, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    within(elapsed, 60.0)?;
    check(report.segments.len() == 24, || format!("{} segments", report.segments.len()))?;
    Ok(format!("{:.1} s, {} segments, PDS {:.2}", elapsed.as_secs_f64(), report.segments.len(), report.final_pds))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("bilateral filter matches direct evaluation", criterion_1),
        ("morphology oracles", criterion_2),
        ("watershed on synthetic disks", criterion_3),
        ("convex hull oracle", criterion_4),
        ("PDS formula", criterion_5),
        ("default parameters", criterion_6),
        ("seam stitching", criterion_7),
        ("color key bands", criterion_8),
        ("end-to-end determinism", criterion_9),
        ("performance envelope", criterion_10),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.2} s): {detail}", i + 1),
            Err(why) => {
                println!("FAIL {:>2} {name} ({secs:.2} s): {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

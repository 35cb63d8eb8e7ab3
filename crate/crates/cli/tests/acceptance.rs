//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a hard criterion fails. Soft criteria report FAIL without
//! failing the run.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use relight_core::calibration::{fit_ccm, fit_shading_map, CalibrationProfile};
use relight_core::dataset::{manifest_location, read_manifest, write_manifest, Provenance, Task, CAM_TOP_RGB, CAM_WRIST_RGB};
use relight_core::image::{histogram, LdrImage, Luminance, RadianceImage};
use relight_core::metrics::{build_report, histogram_distance, parse_rollouts, psnr};
use relight_core::oracle::{random_scene, render, render_episode_weighted, render_weighted};
use relight_core::pipeline::{
    encode_ldr, lens_shading_correct, mosaic_from_rgb, process_frame, Cfa, ColorMatrix, PipelineConfig, RawFrame,
    StageFlags, Transfer,
};
use relight_core::relight::{generate_grid, interpolate_episode, interpolate_frame, synthetic_label, SynthesisGridSpec};

use common::*;

type Check = Result<String, String>;
type Criterion = (&'static str, bool, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn superposition() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f32;
    let scenes = 120;
    for seed in 0..scenes {
        let n = rng.random_range(2..=8usize);
        let (w, h) = (rng.random_range(24..=80usize), rng.random_range(24..=80usize));
        let scene = random_scene(seed, w, h, n);
        let split = rng.random_range(1..n);
        let mut ids: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            ids.swap(i, rng.random_range(0..=i));
        }
        let (a, b) = ids.split_at(split);
        let ra = render(&scene, a).map_err(|e| e.to_string())?;
        let rb = render(&scene, b).map_err(|e| e.to_string())?;
        let rab = render(&scene, &ids).map_err(|e| e.to_string())?;
        for ((x, y), z) in ra.data().iter().zip(rb.data()).zip(rab.data()) {
            worst = worst.max((x + y - z).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{scenes} scenes, max |A+B-(A∪B)| = {worst:.3e}, {secs:.2} s");
    ensure(worst <= 1e-5 && secs < 10.0, || detail.clone())?;
    Ok(detail)
}

fn endpoints_and_convexity() -> Check {
    let mut worst_psnr = f64::INFINITY;
    let mut frames_checked = 0;
    for seed in 0..5u64 {
        let ep = oracle_episode(seed, 48, 40, 4, 4);
        let (wa, wb) = ([1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]);
        let ea = render_episode_weighted(&ep, &wa).map_err(|e| e.to_string())?;
        let eb = render_episode_weighted(&ep, &wb).map_err(|e| e.to_string())?;
        let at = |l: f64| interpolate_episode(&ea, &eb, l, 0.0).map_err(|e| e.to_string());
        for (lambda, parent) in [(1.0, &ea), (0.0, &eb)] {
            let got = at(lambda)?;
            let same = got.frames.iter().zip(&parent.frames).all(|(g, p)| {
                g.data().iter().zip(p.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            });
            ensure(same, || format!("scene {seed}: λ={lambda} is not bit-identical to its parent"))?;
        }
        for k in 1..100 {
            let lambda = k as f64 / 100.0;
            let got = at(lambda)?;
            let w: Vec<f64> = wa.iter().zip(&wb).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            let truth = render_episode_weighted(&ep, &w).map_err(|e| e.to_string())?;
            for t in 0..got.frames.len() {
                let (a, b, g) = (&ea.frames[t], &eb.frames[t], &got.frames[t]);
                let inside = g
                    .data()
                    .iter()
                    .zip(a.data().iter().zip(b.data()))
                    .all(|(v, (x, y))| *v >= x.min(*y) && *v <= x.max(*y));
                ensure(inside, || format!("scene {seed}, λ={lambda}, frame {t}: pixel outside parent bounds"))?;
                let db = psnr(g, &truth.frames[t]).map_err(|e| e.to_string())?;
                worst_psnr = worst_psnr.min(db);
                frames_checked += 1;
            }
        }
    }
    let detail = format!("{frames_checked} interior frames in bounds, min oracle PSNR {worst_psnr:.1} dB");
    ensure(worst_psnr >= 60.0, || detail.clone())?;
    Ok(detail)
}

const STRUCTURED_LABELS: [(Task, &str); 9] = [
    (Task::RgbStacking, "red"),
    (Task::RgbStacking, "green"),
    (Task::RgbStacking, "blue"),
    (Task::DonutHanging, "front"),
    (Task::DonutHanging, "rear"),
    (Task::DonutHanging, "left"),
    (Task::DonutHanging, "right"),
    (Task::SparklingSorting, "lux140"),
    (Task::SparklingSorting, "lux1400"),
];

fn synthesis_count() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().join("real");
    let mut real = Vec::new();
    for (task, label) in STRUCTURED_LABELS {
        for t in 0..200 {
            let m = bare_manifest(task, label, &format!("{task}-{t:04}"));
            write_manifest(&m, &manifest_location(&root, &m)).map_err(|e| e.to_string())?;
            real.push(m);
        }
    }
    let spec = SynthesisGridSpec::structured();
    ensure(spec.pairs.len() == 10 && spec.lambda_values.len() == 98 && spec.episodes_per_condition == 200, || {
        format!("structured grid is {}x{}x{}", spec.pairs.len(), spec.lambda_values.len(), spec.episodes_per_condition)
    })?;
    let plan = generate_grid(&spec, &real, &dir.path().join("syn")).map_err(|e| e.to_string())?;
    ensure(plan.len() == 196_000, || format!("{} jobs", plan.len()))?;

    let mut ids = std::collections::HashSet::new();
    for (i, m) in plan.manifests(&real).enumerate() {
        let job = &plan.jobs[i];
        let (pa, pb) = plan.parents(i, &real);
        let Provenance::Synthetic { parent_a, parent_b, lambda, .. } = &m.provenance else {
            return Err(format!("job {i} has real provenance"));
        };
        let ok = parent_a == &pa.episode_id
            && parent_b == &pb.episode_id
            && pa.lighting.label == job.pair.0
            && pb.lighting.label == job.pair.1
            && pa.trajectory_id == pb.trajectory_id
            && *lambda == job.lambda
            && m.lighting.label == synthetic_label(&job.pair.0, &job.pair.1, job.lambda)
            && m.validate().is_ok();
        ensure(ok, || format!("job {i} has inconsistent provenance"))?;
        ensure(ids.insert(m.episode_id.clone()), || format!("duplicate episode id {}", m.episode_id))?;
    }

    let out = dir.path().join("syn");
    let start = Instant::now();
    let o = relight(&["synthesize", "--dataset-root", path_str(&root), "--output", path_str(&out), "--dry-run", "--quiet"]);
    let secs = start.elapsed().as_secs_f64();
    ensure(o.status.success(), || format!("dry-run failed: {}", stderr(&o)))?;
    let lines = o.stdout.split(|&b| b == b'\n').filter(|l| !l.is_empty()).count();
    let detail = format!("{} manifests with full provenance, dry-run {lines} jobs in {secs:.2} s", ids.len());
    ensure(lines == 196_000 && secs < 5.0, || detail.clone())?;
    Ok(detail)
}

fn lerp_ldr(a: &LdrImage, b: &LdrImage, lambda: f64) -> LdrImage {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (lambda * x as f64 + (1.0 - lambda) * y as f64).round() as u8)
        .collect();
    LdrImage::new(a.width(), a.height(), data).expect("same shape")
}

fn hdr_beats_ldr_average() -> Check {
    let mut summary = Vec::new();
    for seed in 0..5u64 {
        let scene = random_scene(100 + seed, 96, 72, 4);
        let (wa, wb) = ([1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]);
        let ra = render_weighted(&scene, &wa).map_err(|e| e.to_string())?;
        let rb = render_weighted(&scene, &wb).map_err(|e| e.to_string())?;
        let k = 0.9 / ra.max_value().max(rb.max_value());
        let (ra, rb) = (ra.map(|v| v * k), rb.map(|v| v * k));
        for lambda in [0.25, 0.5, 0.75] {
            let w: Vec<f64> = wa.iter().zip(&wb).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            let truth = render_weighted(&scene, &w).map_err(|e| e.to_string())?.map(|v| v * k);
            let enc = |img: &RadianceImage| encode_ldr(img, Transfer::Srgb).map_err(|e| e.to_string());
            let truth8 = enc(&truth)?;
            let hdr8 = enc(&interpolate_frame(&ra, &rb, lambda).map_err(|e| e.to_string())?)?;
            let ldr8 = lerp_ldr(&enc(&ra)?, &enc(&rb)?, lambda);
            let hist = |img: &LdrImage| {
                histogram(&img.luminance().map_err(|e| e.to_string())?, 256, [0.0, 256.0]).map_err(|e| e.to_string())
            };
            let ht = hist(&truth8)?;
            let (p_hdr, p_ldr) = (psnr(&hdr8, &truth8).unwrap(), psnr(&ldr8, &truth8).unwrap());
            let d_hdr = histogram_distance(&hist(&hdr8)?, &ht).map_err(|e| e.to_string())?;
            let d_ldr = histogram_distance(&hist(&ldr8)?, &ht).map_err(|e| e.to_string())?;
            ensure(p_hdr > p_ldr && d_hdr < d_ldr, || {
                format!("scene {seed} λ={lambda}: HDR {p_hdr:.2} dB / {d_hdr:.4}, LDR {p_ldr:.2} dB / {d_ldr:.4}")
            })?;
            summary.push((p_ldr, d_ldr, p_hdr, d_hdr));
        }
    }
    let max_ldr_psnr = summary.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let min_ldr_dist = summary.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let min_hdr_psnr = summary.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
    let max_hdr_dist = summary.iter().map(|s| s.3).fold(f64::NEG_INFINITY, f64::max);
    Ok(format!(
        "{} cases; HDR route PSNR >= {min_hdr_psnr:.1} dB, dist <= {max_hdr_dist:.4}; \
         LDR average PSNR <= {max_ldr_psnr:.1} dB, dist >= {min_ldr_dist:.4}",
        summary.len()
    ))
}

fn random_well_conditioned(rng: &mut ChaCha8Rng) -> ColorMatrix {
    loop {
        let mut m = [[0.0; 3]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = if r == c { 1.0 } else { 0.0 } + rng.random_range(-0.4..0.4);
            }
        }
        let m = ColorMatrix(m);
        if let Some(inv) = m.inverse() {
            if m.frobenius_norm() * inv.frobenius_norm() < 20.0 {
                return m;
            }
        }
    }
}

fn vignette(w: usize, h: usize, focal_px: f64) -> RadianceImage {
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    RadianceImage::from_fn(w, h, 3, |x, y, _| {
        let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
        (r / focal_px).atan().cos().powi(4) as f32
    })
    .expect("valid image")
}

fn calibration_recovery() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_ccm = 0.0f64;
    for _ in 0..100 {
        let truth = random_well_conditioned(&mut rng);
        let measured: Vec<[f64; 3]> = (0..24)
            .map(|_| [rng.random_range(0.02..1.0), rng.random_range(0.02..1.0), rng.random_range(0.02..1.0)])
            .collect();
        let reference: Vec<[f64; 3]> = measured.iter().map(|&p| truth.apply(p)).collect();
        let fit = fit_ccm(&measured, &reference).map_err(|e| e.to_string())?;
        worst_ccm = worst_ccm.max(fit.frobenius_distance(&truth) / truth.frobenius_norm());
    }

    let (w, h) = (320, 240);
    let flat = vignette(w, h, 260.0);
    let scene = RadianceImage::from_fn(w, h, 3, |x, y, c| {
        0.2 + 0.6 * (((x * 7 + y * 3 + c * 11) % 17) as f32 / 17.0)
    })
    .map_err(|e| e.to_string())?;
    let shaded = RadianceImage::new(
        w,
        h,
        3,
        scene.data().iter().zip(flat.data()).map(|(s, v)| s * v).collect(),
    )
    .map_err(|e| e.to_string())?;
    let map = fit_shading_map(&flat, 0).map_err(|e| e.to_string())?;
    let corrected = lens_shading_correct(&shaded, &map).map_err(|e| e.to_string())?;
    let center = flat.pixel(w / 2, h / 2)[0] as f64;
    let worst_shading = corrected
        .data()
        .iter()
        .zip(scene.data())
        .map(|(&c, &s)| ((c as f64 - s as f64 * center) / (s as f64 * center)).abs())
        .fold(0.0, f64::max);
    let corner_falloff = flat.pixel(0, 0)[0];
    let detail = format!(
        "CCM rel. Frobenius error max {worst_ccm:.2e} over 100 matrices; \
         cos^4 shading (corner gain {corner_falloff:.2}) flattened to {worst_shading:.2e} rel."
    );
    ensure(worst_ccm <= 1e-6 && worst_shading <= 1e-4, || detail.clone())?;
    Ok(detail)
}

fn test_frame(w: usize, h: usize, seed: u64) -> (RawFrame, CalibrationProfile) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.02).unwrap();
    let flat = vignette(w, h, 0.8 * w as f64);
    let scene = RadianceImage::from_fn(w, h, 3, |x, y, c| {
        let base = [0.55, 0.4, 0.3][c];
        base + 0.25 * ((x as f32 / 9.0).sin() * (y as f32 / 13.0).cos())
    })
    .expect("valid image");
    let data: Vec<f32> = scene
        .data()
        .iter()
        .zip(flat.data())
        .enumerate()
        .map(|(i, (s, v))| (s * v * [0.7, 1.0, 0.8][i % 3] + noise.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    let img = RadianceImage::new(w, h, 3, data).expect("valid image");
    let raw = mosaic_from_rgb(&img, Cfa::Rggb, 64, 4095).expect("valid mosaic");
    let profile = CalibrationProfile {
        ccm: ColorMatrix([[1.3, -0.2, -0.1], [-0.15, 1.25, -0.1], [-0.05, -0.25, 1.3]]),
        wb_gains: [1.4, 1.0, 1.25],
        shading_map: Some(fit_shading_map(&flat, 0).expect("positive flat field")),
        transfer: Transfer::Srgb,
        exposure: 1.0,
    };
    (raw, profile)
}

fn pipeline_determinism_and_ablations() -> Check {
    let (raw, profile) = test_frame(256, 192, 3);
    let full_cfg = PipelineConfig::default();
    let run = |cfg: &PipelineConfig, threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| process_frame(&raw, &profile, cfg))
            .map_err(|e| e.to_string())
    };
    let full = run(&full_cfg, 1)?;
    for threads in [1, 2, 4] {
        ensure(run(&full_cfg, threads)? == full, || format!("output differs with {threads} threads"))?;
    }
    let mut diffs = Vec::new();
    for stage in StageFlags::NAMES {
        let mut cfg = full_cfg;
        cfg.stages.disable(stage);
        let out = run(&cfg, 1)?;
        let changed = out.data().iter().zip(full.data()).filter(|(a, b)| a != b).count();
        ensure(changed > 0, || format!("disabling {stage} leaves the output unchanged"))?;
        diffs.push(format!("{stage} {:.1}%", 100.0 * changed as f64 / full.data().len() as f64));
    }
    Ok(format!("bit-identical across runs and 1/2/4 threads; ablations change {}", diffs.join(", ")))
}

fn rollout_log(successes: [usize; 3]) -> String {
    let objects = ["red", "green", "blue"];
    (0..20)
        .map(|i| {
            let stages: Vec<serde_json::Value> = objects
                .iter()
                .zip(successes)
                .map(|(o, k)| {
                    serde_json::json!({
                        "object": o,
                        "success": i < k,
                        "predicted_position": [400.0 + i as f64, 10.0, 5.0],
                        "true_position": [400.0, 10.0, 5.0],
                    })
                })
                .collect();
            serde_json::json!({ "task": "RGBStacking", "lighting_label": "white", "stages": stages }).to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn success_rate_row(table: &str) -> Result<Vec<String>, String> {
    let row = table
        .lines()
        .find(|l| l.starts_with("white"))
        .ok_or_else(|| format!("no white row in\n{table}"))?;
    let cells: Vec<String> = row.split('|').map(|c| c.trim().to_string()).collect();
    Ok(cells.iter().skip(1).step_by(2).cloned().collect())
}

fn metrics_cross_check() -> Check {
    let log = rollout_log([16, 14, 14]);
    let report = build_report(&parse_rollouts(&log).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let expected = vec!["0.80".to_string(), "0.70".into(), "0.70".into()];
    let core_row = success_rate_row(&report.to_table())?;
    ensure(core_row == expected, || format!("library table S.R. cells {core_row:?}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("rollouts.jsonl");
    std::fs::write(&path, log).map_err(|e| e.to_string())?;
    let o = relight(&["report", "--log", path_str(&path), "--quiet"]);
    ensure(o.status.success(), || stderr(&o))?;
    let cli_row = success_rate_row(&stdout(&o))?;
    ensure(cli_row == expected, || format!("CLI table S.R. cells {cli_row:?}"))?;
    Ok(format!("S.R. row {}", cli_row.join(" / ")))
}

fn throughput() -> Check {
    let (raw, profile) = test_frame(1920, 1080, 5);
    let cfg = PipelineConfig::default();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let frames = 4;
    let start = Instant::now();
    pool.install(|| {
        (0..frames)
            .into_par_iter()
            .map(|_| process_frame(&raw, &profile, &cfg).map(|_| ()))
            .collect::<Result<Vec<()>, _>>()
    })
    .map_err(|e| e.to_string())?;
    let fps = frames as f64 / start.elapsed().as_secs_f64();

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let real = dir.path().join("real");
    build_dataset(&real, &["red", "green"], 10, 10, 64);
    let grid = dir.path().join("grid.json");
    let spec = serde_json::json!({
        "pairs": [["red", "green"]],
        "lambda_values": [0.1, 0.3, 0.5, 0.7, 0.9],
        "episodes_per_condition": 10,
    });
    std::fs::write(&grid, spec.to_string()).map_err(|e| e.to_string())?;
    let out = dir.path().join("syn");
    let start = Instant::now();
    let o = relight(&[
        "synthesize", "--dataset-root", path_str(&real), "--output", path_str(&out), "--grid", path_str(&grid),
        "--workers", "4", "--quiet",
    ]);
    let secs = start.elapsed().as_secs_f64();
    ensure(o.status.success(), || format!("synthesize failed: {}", stderr(&o)))?;
    let mut color_frames = 0;
    for line in std::fs::read_to_string(out.join("jobs.jsonl")).map_err(|e| e.to_string())?.lines() {
        let job: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let m = read_manifest(job["output_path"].as_str().unwrap().as_ref()).map_err(|e| e.to_string())?;
        color_frames += m.frame_count(CAM_TOP_RGB) + m.frame_count(CAM_WRIST_RGB);
    }
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let detail = format!(
        "pipeline {fps:.2} fps at 1920x1080 with 4 workers on {cores} core(s); \
         synthesize {color_frames} 64x64 color frames in {secs:.2} s"
    );
    ensure(fps >= 5.0 && color_frames >= 1000 && secs < 60.0, || detail.clone())?;
    Ok(detail)
}

fn main() {
    let checks: [Criterion; 8] = [
        ("superposition", false, superposition),
        ("interpolation endpoints and convexity", false, endpoints_and_convexity),
        ("196,000-episode synthesis grid", false, synthesis_count),
        ("HDR interpolation beats LDR averaging", false, hdr_beats_ldr_average),
        ("calibration recovery", false, calibration_recovery),
        ("pipeline determinism and ablations", false, pipeline_determinism_and_ablations),
        ("metrics cross-check", false, metrics_cross_check),
        ("throughput (soft)", true, throughput),
    ];
    let mut hard_failures = 0;
    for (name, soft, check) in checks {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                println!("FAIL  {name}: {detail}");
                if !soft {
                    hard_failures += 1;
                }
            }
        }
    }
    if hard_failures > 0 {
        println!("{hard_failures} hard criteria failed");
        std::process::exit(1);
    }
}

mod common;

use std::fs;
use std::path::Path;

use relight_core::calibration::{reference_chart, CalibrationProfile, CHART_COLS, CHART_ROWS};
use relight_core::dataset::{load_dataset, write_manifest};
use relight_core::image::RadianceImage;
use relight_core::io::{read_pfm, read_png8, write_pfm};
use relight_core::pipeline::{mosaic_from_rgb, write_raw_container, Cfa};

use common::*;

fn exit_code(o: &std::process::Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn error_json(o: &std::process::Output) -> serde_json::Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {}", stderr(o)))
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(exit_code(&relight(&["--help"])), 0);
    assert_eq!(exit_code(&relight(&["--version"])), 0);
    assert!(stdout(&relight(&["synthesize", "--help"])).contains("--dry-run"));
}

#[test]
fn usage_errors_exit_one_with_json() {
    for args in [
        vec!["frobnicate"],
        vec!["synthesize", "--output", "x"],
        vec!["shift", "--task", "RGBStacking", "--label", "white", "--kind", "sideways"],
        vec!["shift", "--task", "NoSuchTask", "--label", "white", "--kind", "color-blue"],
        vec!["scale", "--input", "a.pfm", "--output", "b.pfm", "--workers", "0"],
    ] {
        let o = relight(&args);
        assert_eq!(exit_code(&o), 1, "{args:?}: {}", stderr(&o));
        assert_eq!(error_json(&o)["error"]["code"], 1, "{args:?}");
    }
}

#[test]
fn missing_input_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = relight(&["synthesize", "--dataset-root", path_str(&missing), "--output", path_str(dir.path()), "--pairs", "red:green"]);
    assert_eq!(exit_code(&o), 3, "{}", stderr(&o));
    assert_eq!(error_json(&o)["error"]["kind"], "io");
}

#[test]
fn synthesize_resumes_without_redoing_work() {
    let dir = tempfile::tempdir().unwrap();
    let (root, out) = (dir.path().join("real"), dir.path().join("syn"));
    build_dataset(&root, &["red", "green"], 3, 3, 12);
    let args = |extra: &[&'static str]| {
        let mut a = vec![
            "synthesize", "--dataset-root", path_str(&root), "--output", path_str(&out), "--pairs", "red:green",
            "--lambda-step", "0.25", "--episodes", "3", "--quiet",
        ];
        a.extend_from_slice(extra);
        a
    };

    let dry = relight(&args(&["--dry-run"]));
    assert_eq!(exit_code(&dry), 0, "{}", stderr(&dry));
    let jobs: Vec<serde_json::Value> = stdout(&dry).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(jobs.len(), 6);
    assert!(!out.exists(), "dry run wrote files");

    let first = relight(&args(&[]));
    assert_eq!(exit_code(&first), 0, "{}", stderr(&first));
    assert_eq!(json(&first), serde_json::json!({ "jobs": 6, "written": 6, "skipped": 0 }));
    let second = relight(&args(&[]));
    assert_eq!(json(&second), serde_json::json!({ "jobs": 6, "written": 0, "skipped": 6 }));
    let forced = relight(&args(&["--no-resume"]));
    assert_eq!(json(&forced), serde_json::json!({ "jobs": 6, "written": 6, "skipped": 0 }));

    assert_eq!(load_dataset(&out).unwrap().len(), 6);
    assert_eq!(fs::read_to_string(out.join("jobs.jsonl")).unwrap().lines().count(), 6);
}

#[test]
fn dataset_root_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("real");
    build_dataset(&root, &["red", "green"], 1, 2, 8);
    let o = std::process::Command::new(env!("CARGO_BIN_EXE_relight"))
        .args(["verify", "sync", "--trajectory", "traj-0000", "--quiet"])
        .env("ROBOLIGHT_DATASET_ROOT", &root)
        .output()
        .unwrap();
    assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
}

#[test]
fn verify_sync_passes_identical_replays_and_flags_drift() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("real");
    let paths = build_dataset(&root, &["red", "green"], 1, 4, 8);
    let args: Vec<&str> = ["verify", "sync", "--quiet", "--episodes"]
        .into_iter()
        .chain(paths.iter().map(|p| path_str(p)))
        .collect();
    let o = relight(&args);
    assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
    let report = json(&o);
    assert_eq!(report["pass"], true);
    for (_, v) in report["max_offset_ms"].as_object().unwrap() {
        assert_eq!(v.as_f64(), Some(0.0));
    }

    let mut m = relight_core::dataset::read_manifest(&paths[1]).unwrap();
    m.timestamps_ms.values_mut().for_each(|ts| ts.iter_mut().for_each(|t| *t += 40.0));
    write_manifest(&m, &paths[1]).unwrap();
    let o = relight(&args);
    assert_eq!(exit_code(&o), 2, "{}", stderr(&o));
    assert_eq!(json(&o)["pass"], false);
    assert_eq!(error_json(&o)["error"]["kind"], "validation");
    assert!(error_json(&o)["error"]["message"].as_str().unwrap().contains("40"));
}

fn raw_frames(dir: &Path, n: usize) {
    fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let img = RadianceImage::from_fn(40, 30, 3, |x, y, c| {
            0.1 + 0.7 * (((x * (3 + i) + y * 5 + c * 7) % 23) as f32 / 23.0)
        })
        .unwrap();
        write_raw_container(&dir.join(format!("f{i}.png")), &mosaic_from_rgb(&img, Cfa::Rggb, 64, 1023).unwrap())
            .unwrap();
    }
}

#[test]
fn process_is_deterministic_and_ablations_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("raw");
    raw_frames(&input, 3);
    let run = |out: &str, extra: &[&str]| {
        let out = dir.path().join(out);
        let mut args = vec!["process", "--input", path_str(&input), "--output", path_str(&out), "--quiet"];
        args.extend_from_slice(extra);
        let o = relight(&args);
        assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
        assert_eq!(json(&o)["frames"], 3);
        (0..3).map(|i| read_png8(&out.join(format!("f{i}.png"))).unwrap()).collect::<Vec<_>>()
    };
    let full = run("full", &[]);
    assert_eq!(run("again", &["--workers", "3"]), full);
    assert_ne!(run("no-gamma", &["--disable", "gamma_encode"]), full);
    assert_ne!(run("no-denoise", &["--disable", "denoise"]), full);

    let o = relight(&["process", "--input", path_str(&input), "--output", "x", "--disable", "sharpen"]);
    assert_eq!(exit_code(&o), 1);
    assert!(error_json(&o)["error"]["message"].as_str().unwrap().contains("sharpen"));
}

#[test]
fn calibrate_recovers_a_color_cast() {
    let dir = tempfile::tempdir().unwrap();
    let cast = [0.5, 0.8, 0.6];
    let reference = reference_chart();
    let cell = 12;
    let chart = RadianceImage::from_fn(CHART_COLS * cell, CHART_ROWS * cell, 3, |x, y, c| {
        (reference[(y / cell) * CHART_COLS + x / cell][c] * cast[c]) as f32
    })
    .unwrap();
    let chart_path = dir.path().join("chart.pfm");
    write_pfm(&chart_path, &chart).unwrap();
    let profile_path = dir.path().join("profile.json");
    let o = relight(&[
        "calibrate", "--chart", path_str(&chart_path), "--output", path_str(&profile_path), "--shading-radius", "0",
        "--quiet",
    ]);
    assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&o)["profile"], path_str(&profile_path));

    let profile = CalibrationProfile::load(&profile_path).unwrap();
    for r in &reference {
        let measured = [r[0] * cast[0], r[1] * cast[1], r[2] * cast[2]];
        let got = profile.correct_rgb(measured);
        for c in 0..3 {
            assert!((got[c] - r[c]).abs() < 1e-4, "{measured:?} -> {got:?}, want {r:?}");
        }
    }
}

#[test]
fn shift_reads_the_catalog_or_a_file() {
    let o = relight(&["shift", "--task", "RGBStacking", "--label", "white", "--kind", "direction-right", "--factor", "0.25"]);
    assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
    let shifted = json(&o);
    let powers: Vec<f64> = shifted["lights"].as_array().unwrap().iter().map(|l| l["power"].as_f64().unwrap()).collect();
    assert_eq!(powers.len(), 8);
    let white = relight_core::relight::catalog_condition(relight_core::dataset::Task::RgbStacking, "white").unwrap();
    for (l, p) in white.lights.iter().zip(&powers) {
        let expected = if [2, 3, 4].contains(&l.id.index()) { l.power * 0.25 } else { l.power };
        assert_eq!(*p, expected, "{:?}", l.id);
    }

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("cond.json");
    fs::write(&file, serde_json::to_string(&white).unwrap()).unwrap();
    let out = dir.path().join("blue.json");
    let o = relight(&["shift", "--input", path_str(&file), "--kind", "color-blue", "--factor", "0", "--output", path_str(&out)]);
    assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
    let blue: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert!(blue["lights"].as_array().unwrap().iter().all(|l| l["rgb"][2] == 0));
}

#[test]
fn scale_grades_hdr_frames() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.pfm");
    let img = RadianceImage::from_fn(8, 6, 3, |x, y, c| 0.05 * (x + y + c) as f32).unwrap();
    write_pfm(&input, &img).unwrap();

    let out = dir.path().join("out.pfm");
    let o = relight(&["scale", "--input", path_str(&input), "--output", path_str(&out), "--stops", "-1", "--quiet"]);
    assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
    let halved = read_pfm(&out).unwrap();
    for (h, v) in halved.data().iter().zip(img.data()) {
        assert_eq!(*h, v * 0.5);
    }

    let png = dir.path().join("out.png");
    let o = relight(&[
        "scale", "--input", path_str(&input), "--output", path_str(&png), "--gains", "1,1,0.5", "--tone-map", "--encode",
        "--quiet",
    ]);
    assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
    let ldr = read_png8(&png).unwrap();
    assert_eq!((ldr.width(), ldr.height()), (8, 6));
}

#[test]
fn report_writes_all_formats() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let line = |label: &str, ok: bool| {
        serde_json::json!({
            "task": "DonutHanging",
            "lighting_label": label,
            "stages": [{ "object": "donut", "success": ok, "predicted_position": [3.0, 4.0, 0.0], "true_position": [0.0, 0.0, 0.0] }],
        })
        .to_string()
    };
    let text = [line("front", true), line("front", false), line("rear", true)].join("\n");
    fs::write(&log, text).unwrap();
    let out = dir.path().join("report");
    let o = relight(&["report", "--log", path_str(&log), "--output-dir", path_str(&out), "--quiet"]);
    assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.contains("donut S.R."), "{table}");
    assert!(table.lines().any(|l| l.starts_with("front") && l.contains("0.50") && l.contains("5.00")), "{table}");
    for f in ["report.json", "report.txt", "report.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    fs::write(&log, "{\"task\": \"DonutHanging\"}\n").unwrap();
    let o = relight(&["report", "--log", path_str(&log)]);
    assert_eq!(exit_code(&o), 2, "{}", stderr(&o));
}

#[test]
fn oracle_render_selects_lights() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene.json");
    fs::write(
        &scene,
        serde_json::json!({
            "grid": [10, 8],
            "albedo": { "constant": [0.5, 0.5, 0.5] },
            "lights": [
                { "position_mm": [20.0, 20.0, 200.0], "rgb_intensity": [4e4, 4e4, 4e4] },
                { "position_mm": [70.0, 50.0, 300.0], "rgb_intensity": [9e4, 3e4, 1e4] },
            ],
            "frames": 2,
        })
        .to_string(),
    )
    .unwrap();
    let render = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["oracle", "render", "--scene", path_str(&scene), "--output", path_str(&out), "--quiet"];
        args.extend_from_slice(extra);
        let o = relight(&args);
        assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
        read_pfm(&out.join("000001.pfm")).unwrap()
    };
    let (a, b, both) = (render("a", &["--lights", "0"]), render("b", &["--lights", "1"]), render("ab", &[]));
    for ((x, y), z) in a.data().iter().zip(b.data()).zip(both.data()) {
        assert!((x + y - z).abs() <= 1e-6 * z.abs().max(1.0));
    }
    let half = render("half", &["--weights", "0.5,0.5"]);
    for (h, z) in half.data().iter().zip(both.data()) {
        assert!((h * 2.0 - z).abs() <= 1e-6 * z.abs().max(1.0));
    }

    let o = relight(&["oracle", "render", "--scene", path_str(&scene), "--output", "x", "--lights", "5"]);
    assert_eq!(exit_code(&o), 1, "{}", stderr(&o));
}

#[test]
fn fidelity_reports_psnr_and_histogram_distance() {
    let dir = tempfile::tempdir().unwrap();
    let a = RadianceImage::from_fn(16, 16, 3, |x, y, _| (x * 16 + y) as f32 / 256.0).unwrap();
    let b = a.map(|v| (v * 0.9).min(1.0));
    let (pa, pb) = (dir.path().join("a.pfm"), dir.path().join("b.pfm"));
    write_pfm(&pa, &a).unwrap();
    write_pfm(&pb, &b).unwrap();
    let report = dir.path().join("fidelity.json");
    let o = relight(&["verify", "fidelity", "--reference", path_str(&pa), "--candidate", path_str(&pb), "--report", path_str(&report)]);
    assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
    let r = json(&o);
    assert_eq!(r["identical"], false);
    assert!(r["psnr_db"].as_f64().unwrap() > 20.0);
    let d = r["histogram_distance"].as_f64().unwrap();
    assert!(d > 0.0 && d <= 1.0);
    assert_eq!(serde_json::from_slice::<serde_json::Value>(&fs::read(&report).unwrap()).unwrap(), r);

    let o = relight(&["verify", "fidelity", "--reference", path_str(&pa), "--candidate", path_str(&pa)]);
    assert_eq!(json(&o)["identical"], true);
    assert!(json(&o)["psnr_db"].is_null());
}

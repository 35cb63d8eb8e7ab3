use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use relight_core::calibration::{fit_profile, sample_chart, CalibrationProfile, ChartCapture, CHART_COLS, CHART_ROWS};
use relight_core::dataset::{canonical_json, load_dataset, parse_json, read_manifest, verify_sync, EpisodeManifest, Task};
use relight_core::error::Error;
use relight_core::image::{histogram, Luminance, LumaImage, RadianceImage};
use relight_core::io::{atomic_write, read_bytes, read_pfm, read_png8, write_pfm, write_png8};
use relight_core::metrics::{build_report, histogram_distance, psnr, read_rollouts};
use relight_core::oracle::{load_scene, render_episode_weighted, write_dataset_episode, EpisodeSpec};
use relight_core::pipeline::{
    decode_raw, encode_ldr, process_frame, read_raw_container, sidecar_path, PipelineConfig, Transfer,
};
use relight_core::relight::{
    adjust_color, catalog_condition, generate_grid, lambda_grid, scale_exposure, shift_lighting_with, tone_map,
    tone_map_auto, LightId, LightingCondition, ShiftKind, SynthesisGridSpec,
};
use relight_core::synthesis::{run_job, JobOutcome, SynthesisOptions};

use crate::{
    CalibrateArgs, Cli, Command, Failure, FidelityArgs, LightSelection, OracleCommand, OracleEpisodeArgs,
    OracleRenderArgs, ProcessArgs, ReportArgs, ScaleArgs, ShiftArgs, SyncArgs, SynthesizeArgs, VerifyCommand,
};

type CmdResult = Result<(), Failure>;

struct Log {
    quiet: bool,
}

impl Log {
    fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("relight: {}", msg.as_ref());
        }
    }
}

/// Runs a parsed command line.
pub fn execute(cli: &Cli) -> CmdResult {
    let log = Log { quiet: cli.quiet };
    match &cli.command {
        Command::Process(a) => process(a, &log),
        Command::Calibrate(a) => calibrate(a, &log),
        Command::Synthesize(a) => synthesize(a, &log),
        Command::Verify(VerifyCommand::Sync(a)) => verify_sync_cmd(a, &log),
        Command::Verify(VerifyCommand::Fidelity(a)) => fidelity(a),
        Command::Shift(a) => shift(a),
        Command::Scale(a) => scale(a, &log),
        Command::Report(a) => report(a, &log),
        Command::Oracle(OracleCommand::Render(a)) => oracle_render(a, &log),
        Command::Oracle(OracleCommand::Episode(a)) => oracle_episode(a, &log),
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| usage(format!("cannot start worker pool: {e}")))
}

fn stdout_line(s: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(s.as_bytes());
    if !s.ends_with('\n') {
        let _ = out.write_all(b"\n");
    }
    let _ = out.flush();
}

fn print_json<T: serde::Serialize>(value: &T) -> CmdResult {
    stdout_line(&canonical_json(value)?);
    Ok(())
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| usage(format!("bad number {v:?} in {what}"))))
        .collect()
}

fn parse_transfer(s: &str) -> Result<Transfer, Failure> {
    let t = match s {
        "srgb" => Transfer::Srgb,
        "linear" => Transfer::Linear,
        _ => match s.strip_prefix("power:").map(str::parse::<f64>) {
            Some(Ok(gamma)) => Transfer::Power { gamma },
            _ => return Err(usage(format!("unknown transfer {s:?} (srgb, linear or power:<gamma>)"))),
        },
    };
    t.validate()?;
    Ok(t)
}

fn extension(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

/// A linear frame from PFM or a RAW container.
fn read_linear(path: &Path) -> Result<RadianceImage, Failure> {
    match extension(path).as_str() {
        "pfm" => Ok(read_pfm(path)?),
        "png" => Ok(decode_raw(&read_raw_container(path)?)?),
        _ => Err(usage(format!("{} is neither a PFM nor a RAW container", path.display()))),
    }
}

fn sorted_files(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && keep(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// `(input, output)` pairs: one file, or every matching file of a directory.
fn io_pairs(
    input: &Path,
    output: &Path,
    keep: impl Fn(&Path) -> bool,
    out_ext: &str,
) -> Result<Vec<(PathBuf, PathBuf)>, Failure> {
    if input.is_dir() {
        let files = sorted_files(input, keep)?;
        if files.is_empty() {
            return Err(usage(format!("no input frames in {}", input.display())));
        }
        Ok(files
            .into_iter()
            .map(|f| {
                let name = Path::new(f.file_name().expect("file has a name")).with_extension(out_ext);
                (f, output.join(name))
            })
            .collect())
    } else if input.is_file() {
        Ok(vec![(input.to_path_buf(), output.to_path_buf())])
    } else {
        Err(Error::io(input, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")).into())
    }
}

fn process(a: &ProcessArgs, log: &Log) -> CmdResult {
    let profile = match &a.profile {
        Some(p) => CalibrationProfile::load(p)?,
        None => CalibrationProfile::identity(),
    };
    let mut cfg: PipelineConfig = match &a.config {
        Some(p) => parse_json(&read_bytes(p)?)?,
        None => PipelineConfig::default(),
    };
    for stage in &a.disable {
        if !cfg.stages.disable(stage) {
            return Err(usage(format!(
                "unknown stage {stage:?} (expected one of {})",
                relight_core::pipeline::StageFlags::NAMES.join(", ")
            )));
        }
    }
    cfg.validate()?;
    let is_container = |p: &Path| extension(p) == "png" && sidecar_path(p).is_file();
    let jobs = io_pairs(&a.input, &a.output, is_container, "png")?;
    let done = AtomicUsize::new(0);
    pool(a.workers.workers)?.install(|| {
        jobs.par_iter()
            .map(|(input, output)| {
                let ldr = process_frame(&read_raw_container(input)?, &profile, &cfg)?;
                write_png8(output, &ldr)?;
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                log.info(format!("processed {n}/{} {}", jobs.len(), input.display()));
                Ok(())
            })
            .collect::<Result<Vec<()>, Error>>()
    })?;
    print_json(&serde_json::json!({ "frames": jobs.len() }))
}

fn calibrate(a: &CalibrateArgs, log: &Log) -> CmdResult {
    let transfer = parse_transfer(&a.transfer)?;
    let chart = read_linear(&a.chart)?;
    let measured = sample_chart(&chart, CHART_ROWS, CHART_COLS)?;
    let flat = a.flat.as_deref().map(read_linear).transpose()?;
    let profile = fit_profile(
        &ChartCapture::with_reference_chart(measured),
        flat.as_ref(),
        a.shading_radius,
        transfer,
    )?;
    profile.save(&a.output)?;
    log.info(format!("wrote {}", a.output.display()));
    print_json(&serde_json::json!({
        "profile": a.output.display().to_string(),
        "wb_gains": profile.wb_gains,
        "exposure": profile.exposure,
        "ccm": profile.ccm,
    }))
}

fn parse_pairs(s: &str) -> Result<Vec<(String, String)>, Failure> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| match p.trim().split_once(':') {
            Some((x, y)) if !x.is_empty() && !y.is_empty() => Ok((x.to_string(), y.to_string())),
            _ => Err(usage(format!("bad pair {p:?}, expected A:B"))),
        })
        .collect()
}

fn synthesize(a: &SynthesizeArgs, log: &Log) -> CmdResult {
    let spec = match &a.grid {
        Some(p) => parse_json::<SynthesisGridSpec>(&read_bytes(p)?)?,
        None => SynthesisGridSpec {
            pairs: match &a.pairs {
                Some(s) => parse_pairs(s)?,
                None => SynthesisGridSpec::structured().pairs,
            },
            lambda_values: lambda_grid(a.lambda_step)?,
            episodes_per_condition: a.episodes,
        },
    };
    spec.validate()?;
    let (paths, manifests): (Vec<PathBuf>, Vec<EpisodeManifest>) = load_dataset(&a.dataset_root)?.into_iter().unzip();
    log.info(format!("{} manifests under {}", manifests.len(), a.dataset_root.display()));
    let plan = generate_grid(&spec, &manifests, &a.output)?;
    log.info(format!(
        "{} jobs: {} pairs x {} lambda values x {} episodes",
        plan.len(),
        spec.pairs.len(),
        spec.lambda_values.len(),
        spec.episodes_per_condition
    ));
    if a.dry_run {
        let mut out = std::io::BufWriter::new(std::io::stdout().lock());
        out.write_all(plan.to_jsonl().as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| Error::io("<stdout>", e))?;
        return Ok(());
    }
    atomic_write(&a.output.join("jobs.jsonl"), plan.to_jsonl().as_bytes())?;
    let opts = SynthesisOptions {
        sync_tolerance_ms: a.tolerance_ms,
        resume: !a.no_resume,
    };
    let (written, skipped) = (AtomicUsize::new(0), AtomicUsize::new(0));
    let step = (plan.len() / 10).max(1);
    pool(a.workers.workers)?.install(|| {
        (0..plan.len())
            .into_par_iter()
            .map(|i| {
                let counter = match run_job(&plan, i, &manifests, &paths, &opts)? {
                    JobOutcome::Written => &written,
                    JobOutcome::Skipped => &skipped,
                };
                counter.fetch_add(1, Ordering::Relaxed);
                let n = written.load(Ordering::Relaxed) + skipped.load(Ordering::Relaxed);
                if n % step == 0 {
                    log.info(format!("{n}/{} jobs", plan.len()));
                }
                Ok(())
            })
            .collect::<Result<Vec<()>, Error>>()
    })?;
    print_json(&serde_json::json!({
        "jobs": plan.len(),
        "written": written.into_inner(),
        "skipped": skipped.into_inner(),
    }))
}

fn verify_sync_cmd(a: &SyncArgs, log: &Log) -> CmdResult {
    let episodes: Vec<EpisodeManifest> = match (&a.trajectory, &a.dataset_root) {
        (Some(t), Some(root)) => load_dataset(root)?
            .into_iter()
            .map(|(_, m)| m)
            .filter(|m| m.provenance.is_real() && &m.trajectory_id == t)
            .collect(),
        _ if !a.episodes.is_empty() => a.episodes.iter().map(|p| read_manifest(p)).collect::<Result<_, _>>()?,
        _ => return Err(usage("give --episodes or --trajectory with --dataset-root")),
    };
    log.info(format!("checking {} episodes", episodes.len()));
    let report = verify_sync(&episodes, a.tolerance_ms)?;
    print_json(&report)?;
    if report.pass {
        Ok(())
    } else {
        let worst = report.max_offset_ms.values().copied().fold(0.0, f64::max);
        Err(Error::Unsynchronized(format!("max offset {worst} ms exceeds tolerance {} ms", a.tolerance_ms)).into())
    }
}

fn fidelity(a: &FidelityArgs) -> CmdResult {
    let kind = extension(&a.reference);
    if extension(&a.candidate) != kind {
        return Err(usage("reference and candidate must be the same kind of file"));
    }
    let range = match &a.range {
        Some(s) => match parse_f64_list(s, "--range")?.as_slice() {
            &[lo, hi] => Some([lo, hi]),
            _ => return Err(usage("--range takes lo,hi")),
        },
        None => None,
    };
    let (db, ref_luma, cand_luma, default_range): (f64, LumaImage, LumaImage, [f64; 2]) = match kind.as_str() {
        "png" => {
            let (r, c) = (read_png8(&a.reference)?, read_png8(&a.candidate)?);
            (psnr(&r, &c)?, r.luminance()?, c.luminance()?, [0.0, 256.0])
        }
        "pfm" => {
            let (r, c) = (read_pfm(&a.reference)?, read_pfm(&a.candidate)?);
            let luma = |img: &RadianceImage| {
                if img.channels() == 3 {
                    img.luminance()
                } else {
                    LumaImage::try_from(img)
                }
            };
            (psnr(&r, &c)?, luma(&r)?, luma(&c)?, [0.0, 1.0])
        }
        _ => return Err(usage("fidelity compares 8-bit PNG or PFM images")),
    };
    let range = range.unwrap_or(default_range);
    let (hr, hc) = (histogram(&ref_luma, a.bins, range)?, histogram(&cand_luma, a.bins, range)?);
    let result = serde_json::json!({
        "psnr_db": if db.is_finite() { Some(db) } else { None },
        "identical": db.is_infinite(),
        "histogram_distance": histogram_distance(&hr, &hc)?,
        "bins": a.bins,
        "range": range,
        "domain": hr.domain,
    });
    if let Some(p) = &a.report {
        atomic_write(p, canonical_json(&result)?.as_bytes())?;
    }
    print_json(&result)
}

fn shift(a: &ShiftArgs) -> CmdResult {
    let condition = match (&a.input, &a.task, &a.label) {
        (Some(p), _, _) => {
            let c: LightingCondition = parse_json(&read_bytes(p)?)?;
            c.validate()?;
            c
        }
        (None, Some(t), Some(l)) => catalog_condition(t.parse::<Task>()?, l)
            .ok_or_else(|| usage(format!("no catalog condition {l:?} for task {t}")))?,
        _ => return Err(usage("give --input or --task with --label")),
    };
    let kind: ShiftKind = a.kind.parse()?;
    let right: Vec<u8> = match &a.right_side {
        Some(s) => s
            .split(',')
            .map(|id| id.trim().parse::<LightId>().map(LightId::index))
            .collect::<Result<_, _>>()?,
        None => relight_core::relight::RIGHT_SIDE_LIGHTS.to_vec(),
    };
    let shifted = shift_lighting_with(&condition, kind, a.factor, &right)?;
    let json = canonical_json(&shifted)?;
    match &a.output {
        Some(p) => Ok(atomic_write(p, json.as_bytes())?),
        None => {
            stdout_line(&json);
            Ok(())
        }
    }
}

fn scale(a: &ScaleArgs, log: &Log) -> CmdResult {
    let gains = match &a.gains {
        Some(s) => match parse_f64_list(s, "--gains")?.as_slice() {
            &[r, g, b] => Some([r, g, b]),
            _ => return Err(usage("--gains takes r,g,b")),
        },
        None => None,
    };
    if a.encode && !a.tone_map {
        log.info("encoding without tone mapping clips values above 1");
    }
    let out_ext = if a.encode { "png" } else { "pfm" };
    let jobs = io_pairs(&a.input, &a.output, |p| extension(p) == "pfm", out_ext)?;
    pool(a.workers.workers)?.install(|| {
        jobs.par_iter()
            .map(|(input, output)| {
                let mut img = read_pfm(input)?;
                if let Some(g) = gains {
                    img = adjust_color(&img, g)?;
                }
                if a.stops != 0.0 {
                    img = scale_exposure(&img, a.stops)?;
                }
                if a.tone_map {
                    img = match a.white {
                        Some(w) => tone_map(&img, a.key, w)?,
                        None => tone_map_auto(&img, a.key)?,
                    };
                }
                if a.encode {
                    write_png8(output, &encode_ldr(&img, Transfer::Srgb)?)
                } else {
                    write_pfm(output, &img)
                }
            })
            .collect::<Result<Vec<()>, Error>>()
    })?;
    log.info(format!("scaled {} frames", jobs.len()));
    print_json(&serde_json::json!({ "frames": jobs.len() }))
}

fn report(a: &ReportArgs, log: &Log) -> CmdResult {
    let rollouts = read_rollouts(&a.log)?;
    log.info(format!("{} roll-outs", rollouts.len()));
    let report = build_report(&rollouts)?;
    let table = report.to_table();
    if let Some(dir) = &a.output_dir {
        atomic_write(&dir.join("report.json"), canonical_json(&report)?.as_bytes())?;
        atomic_write(&dir.join("report.txt"), table.as_bytes())?;
        atomic_write(&dir.join("report.csv"), report.to_csv()?.as_bytes())?;
    }
    stdout_line(&table);
    Ok(())
}

fn light_weights(sel: &LightSelection, n: usize) -> Result<Vec<f64>, Failure> {
    if let Some(w) = &sel.weights {
        return parse_f64_list(w, "--weights");
    }
    match &sel.lights {
        None => Ok(vec![1.0; n]),
        Some(s) => {
            let mut weights = vec![0.0; n];
            for idx in s.split(',').filter(|v| !v.trim().is_empty()) {
                let i: usize = idx.trim().parse().map_err(|_| usage(format!("bad light index {idx:?}")))?;
                *weights
                    .get_mut(i)
                    .ok_or_else(|| usage(format!("light index {i} out of range (scene has {n})")))? = 1.0;
            }
            Ok(weights)
        }
    }
}

fn oracle_render(a: &OracleRenderArgs, log: &Log) -> CmdResult {
    let ep = load_scene(&a.scene)?;
    let weights = light_weights(&a.select, ep.scene.lights().len())?;
    let rendered = render_episode_weighted(&ep, &weights)?;
    for (t, frame) in rendered.frames.iter().enumerate() {
        write_pfm(&a.output.join(format!("{t:06}.pfm")), frame)?;
    }
    log.info(format!("rendered {} frames", rendered.len()));
    print_json(&serde_json::json!({ "frames": rendered.len(), "timestamps_ms": rendered.timestamps_ms }))
}

fn oracle_episode(a: &OracleEpisodeArgs, log: &Log) -> CmdResult {
    let ep = load_scene(&a.scene)?;
    let weights = light_weights(&a.select, ep.scene.lights().len())?;
    let task: Task = a.task.parse()?;
    let lighting = catalog_condition(task, &a.label)
        .unwrap_or_else(|| LightingCondition::uniform(&a.label, [255; 3], &[1, 2, 3, 4, 5, 6, 7, 8], 1.0, None));
    let spec = EpisodeSpec {
        task,
        lighting,
        trajectory_id: a.trajectory.clone(),
        episode_id: a
            .episode_id
            .clone()
            .unwrap_or_else(|| format!("{}__{}", a.trajectory, a.label)),
        placements: Vec::new(),
    };
    let path = write_dataset_episode(&a.dataset_root, &spec, &ep, &weights)?;
    log.info(format!("wrote {}", path.display()));
    print_json(&serde_json::json!({ "manifest": path.display().to_string() }))
}

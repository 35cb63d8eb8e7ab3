//! Light-transport-linear synthesis.
//!
//! Images in linear radiance superpose: the image under two lights is the sum
//! of the images under each light alone, and scaling a light scales its
//! image. That makes a convex blend `λ·E₁ + (1−λ)·E₂` of two synchronized
//! HDR episodes a faithful rendering of the blended lighting. This module
//! holds the lighting records, the blend itself, the synthesis grid, lighting
//! shifts, and global HDR grading (exposure, tone mapping, color gains).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{self, EpisodeManifest, Provenance, Task};
use crate::error::{Error, Result};
use crate::image::{Luminance, RadianceImage};
use crate::pipeline::channel_gains;

// ---------------------------------------------------------------------------
// Lighting records
// ---------------------------------------------------------------------------

pub const LIGHT_COUNT: u8 = 8;

/// One of the eight lights, `L1` to `L8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LightId(u8);

impl LightId {
    pub fn new(index: u8) -> Result<Self> {
        if (1..=LIGHT_COUNT).contains(&index) {
            Ok(Self(index))
        } else {
            Err(Error::invalid(format!("light index must be 1..=8, got {index}")))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = LightId> {
        (1..=LIGHT_COUNT).map(LightId)
    }
}

impl fmt::Display for LightId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

impl FromStr for LightId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.strip_prefix('L')
            .and_then(|n| n.parse::<u8>().ok())
            .ok_or_else(|| Error::invalid(format!("bad light id {s:?}")))
            .and_then(LightId::new)
    }
}

impl Serialize for LightId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LightId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightSetting {
    pub id: LightId,
    pub rgb: [u8; 3],
    /// Fraction of full output, in [0, 1].
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightingCondition {
    pub label: String,
    pub lights: Vec<LightSetting>,
    pub measured_lux: Option<f64>,
}

impl LightingCondition {
    /// All eight lights at `rgb`; those listed in `active` at `power`, the rest off.
    pub fn uniform(label: &str, rgb: [u8; 3], active: &[u8], power: f64, lux: Option<f64>) -> Self {
        let lights = LightId::all()
            .map(|id| LightSetting {
                id,
                rgb,
                power: if active.contains(&id.index()) { power } else { 0.0 },
            })
            .collect();
        Self {
            label: label.to_string(),
            lights,
            measured_lux: lux,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lights.len() != LIGHT_COUNT as usize {
            return Err(Error::validation(
                "lighting.lights",
                format!("expected 8 lights, got {}", self.lights.len()),
            ));
        }
        let mut seen = [false; LIGHT_COUNT as usize + 1];
        for (i, l) in self.lights.iter().enumerate() {
            let slot = &mut seen[l.id.index() as usize];
            if *slot {
                return Err(Error::validation(format!("lighting.lights[{i}].id"), format!("duplicate {}", l.id)));
            }
            *slot = true;
            if !(0.0..=1.0).contains(&l.power) {
                return Err(Error::validation(
                    format!("lighting.lights[{i}].power"),
                    format!("power must be in [0, 1], got {}", l.power),
                ));
            }
        }
        if let Some(lux) = self.measured_lux {
            if !(lux >= 0.0 && lux.is_finite()) {
                return Err(Error::validation("lighting.measured_lux", "lux must be finite and >= 0"));
            }
        }
        if self.label.is_empty() {
            return Err(Error::validation("lighting.label", "label must not be empty"));
        }
        Ok(())
    }

    pub fn light(&self, id: LightId) -> Option<&LightSetting> {
        self.lights.iter().find(|l| l.id == id)
    }

    /// Emitted RGB of one light, in 0..=255 units scaled by power.
    pub fn emission(&self, id: LightId) -> [f64; 3] {
        self.light(id)
            .map(|l| l.rgb.map(|c| c as f64 * l.power))
            .unwrap_or([0.0; 3])
    }
}

#[inline]
fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// Lighting equivalent to the blend `λ·a + (1−λ)·b`.
///
/// Per light, power blends linearly and the color is the power-weighted mean
/// of the two colors, so the emitted RGB is the blend of the emitted RGBs up
/// to 8-bit rounding. Lux blends linearly when both sides carry it.
pub fn blend_conditions(a: &LightingCondition, b: &LightingCondition, lambda: f64, label: &str) -> LightingCondition {
    let lights = LightId::all()
        .map(|id| {
            let (ea, eb) = (a.emission(id), b.emission(id));
            let pa = a.light(id).map_or(0.0, |l| l.power);
            let pb = b.light(id).map_or(0.0, |l| l.power);
            let power = lambda * pa + (1.0 - lambda) * pb;
            let rgb = if power > 0.0 {
                std::array::from_fn(|c| round_half_up((lambda * ea[c] + (1.0 - lambda) * eb[c]) / power).clamp(0.0, 255.0) as u8)
            } else {
                a.light(id).map_or([0; 3], |l| l.rgb)
            };
            LightSetting {
                id,
                rgb,
                power: power.clamp(0.0, 1.0),
            }
        })
        .collect();
    let measured_lux = match (a.measured_lux, b.measured_lux) {
        (Some(la), Some(lb)) => Some(lambda * la + (1.0 - lambda) * lb),
        _ => None,
    };
    LightingCondition {
        label: label.to_string(),
        lights,
        measured_lux,
    }
}

/// One entry of the captured lighting catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub task: Task,
    pub condition: LightingCondition,
}

/// The captured lighting conditions per task.
///
/// Direction sets use the octagon numbering: rear L1, right L3, front L5,
/// left L8. Intensity levels scale power relative to the 1400 lux setting.
pub fn lighting_catalog() -> Vec<CatalogEntry> {
    const ALL: [u8; 8] = [1, 2, 3, 4, 5, 6, 7, 8];
    const WHITE: [u8; 3] = [255, 255, 255];
    let c = LightingCondition::uniform;
    let entry = |task, condition| CatalogEntry { task, condition };
    vec![
        entry(Task::RgbStacking, c("white", WHITE, &ALL, 1.0, Some(700.0))),
        entry(Task::RgbStacking, c("red", [255, 0, 0], &ALL, 1.0, Some(172.0))),
        entry(Task::RgbStacking, c("green", [0, 255, 0], &ALL, 1.0, Some(335.0))),
        entry(Task::RgbStacking, c("blue", [0, 0, 255], &ALL, 1.0, Some(72.0))),
        entry(Task::RgbStacking, c("purple", [255, 0, 255], &ALL, 1.0, Some(95.0))),
        entry(Task::DonutHanging, c("four-directional", WHITE, &[1, 3, 5, 8], 1.0, Some(330.0))),
        entry(Task::DonutHanging, c("front", WHITE, &[5], 1.0, Some(82.0))),
        entry(Task::DonutHanging, c("rear", WHITE, &[1], 1.0, Some(80.0))),
        entry(Task::DonutHanging, c("left", WHITE, &[8], 1.0, Some(73.0))),
        entry(Task::DonutHanging, c("right", WHITE, &[3], 1.0, Some(76.0))),
        entry(Task::DonutHanging, c("left-right", WHITE, &[3, 8], 1.0, Some(144.0))),
        entry(Task::SparklingSorting, c("lux140", WHITE, &ALL, 0.1, Some(140.0))),
        entry(Task::SparklingSorting, c("lux700", WHITE, &ALL, 0.5, Some(700.0))),
        entry(Task::SparklingSorting, c("lux1400", WHITE, &ALL, 1.0, Some(1400.0))),
    ]
}

pub fn catalog_condition(task: Task, label: &str) -> Option<LightingCondition> {
    lighting_catalog()
        .into_iter()
        .find(|e| e.task == task && e.condition.label == label)
        .map(|e| e.condition)
}

// ---------------------------------------------------------------------------
// Lighting shifts
// ---------------------------------------------------------------------------

/// Lights treated as "right side" for direction shifts.
pub const RIGHT_SIDE_LIGHTS: [u8; 3] = [2, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftKind {
    ColorBlue,
    DirectionRight,
    IntensityAll,
}

impl FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "color-blue" => Ok(ShiftKind::ColorBlue),
            "direction-right" => Ok(ShiftKind::DirectionRight),
            "intensity-all" => Ok(ShiftKind::IntensityAll),
            other => Err(Error::invalid(format!(
                "unknown shift kind {other:?} (expected color-blue, direction-right or intensity-all)"
            ))),
        }
    }
}

pub fn shift_lighting(c: &LightingCondition, kind: ShiftKind, factor: f64) -> Result<LightingCondition> {
    shift_lighting_with(c, kind, factor, &RIGHT_SIDE_LIGHTS)
}

/// [`shift_lighting`] with an explicit right-side light set.
pub fn shift_lighting_with(c: &LightingCondition, kind: ShiftKind, factor: f64, right_side: &[u8]) -> Result<LightingCondition> {
    if !(0.0..=1.0).contains(&factor) {
        return Err(Error::invalid(format!("shift factor must be in [0, 1], got {factor}")));
    }
    let mut out = c.clone();
    for light in &mut out.lights {
        match kind {
            ShiftKind::ColorBlue => light.rgb[2] = round_half_up(light.rgb[2] as f64 * factor) as u8,
            ShiftKind::DirectionRight if right_side.contains(&light.id.index()) => light.power *= factor,
            ShiftKind::DirectionRight => {}
            ShiftKind::IntensityAll => light.power *= factor,
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Composition and interpolation
// ---------------------------------------------------------------------------

/// Per-pixel weighted sum `Σ wᵢ·Iᵢ`.
pub fn compose_hdr(images: &[RadianceImage], weights: &[f64]) -> Result<RadianceImage> {
    let first = images.first().ok_or_else(|| Error::invalid("compose_hdr needs at least one image"))?;
    if weights.len() != images.len() {
        return Err(Error::dims(format!("{} weights", images.len()), format!("{}", weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::invalid(format!("weights must be finite and >= 0, got {w}")));
    }
    for img in &images[1..] {
        first.require_shape(img)?;
    }
    let mut acc = vec![0f32; first.data().len()];
    for (img, &w) in images.iter().zip(weights) {
        let w = w as f32;
        for (a, &v) in acc.iter_mut().zip(img.data()) {
            *a += w * v;
        }
    }
    RadianceImage::from_clamped(first.width(), first.height(), first.channels(), acc)
}

/// Synchronized HDR frames with their capture times.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrEpisode {
    pub frames: Vec<RadianceImage>,
    pub timestamps_ms: Vec<f64>,
}

impl HdrEpisode {
    pub fn new(frames: Vec<RadianceImage>, timestamps_ms: Vec<f64>) -> Result<Self> {
        if frames.len() != timestamps_ms.len() {
            return Err(Error::dims(format!("{} timestamps", frames.len()), format!("{}", timestamps_ms.len())));
        }
        Ok(Self { frames, timestamps_ms })
    }

    /// Frames at a fixed rate starting from 0 ms.
    pub fn at_rate(frames: Vec<RadianceImage>, rate_hz: f64) -> Self {
        let timestamps_ms = (0..frames.len()).map(|i| i as f64 * 1000.0 / rate_hz).collect();
        Self { frames, timestamps_ms }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// `λ·a + (1−λ)·b` for one sample pair, kept inside `[min(a,b), max(a,b)]`.
#[inline]
pub fn lerp_radiance(a: f32, b: f32, lambda: f64) -> f32 {
    let v = (lambda * a as f64 + (1.0 - lambda) * b as f64) as f32;
    v.clamp(a.min(b), a.max(b))
}

/// Blends two synchronized frames.
pub fn interpolate_frame(a: &RadianceImage, b: &RadianceImage, lambda: f64) -> Result<RadianceImage> {
    check_lambda(lambda)?;
    a.require_shape(b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| lerp_radiance(x, y, lambda))
        .collect();
    Ok(RadianceImage::from_parts_unchecked(a.width(), a.height(), a.channels(), data))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::invalid(format!("lambda must be in [0, 1], got {lambda}")))
    }
}

/// Frame-wise `λ·E₁ + (1−λ)·E₂`. Timestamps come from `e1`.
///
/// Fails if frame counts differ, if any frame pair differs in shape, or if
/// any frame pair is further apart in time than `sync_tolerance_ms`.
pub fn interpolate_episode(e1: &HdrEpisode, e2: &HdrEpisode, lambda: f64, sync_tolerance_ms: f64) -> Result<HdrEpisode> {
    check_lambda(lambda)?;
    if e1.len() != e2.len() {
        return Err(Error::FrameCountMismatch {
            stream: "frames".into(),
            counts: vec![e1.len(), e2.len()],
        });
    }
    let offset = dataset::max_offset(&[e1.timestamps_ms.as_slice(), e2.timestamps_ms.as_slice()]);
    if offset > sync_tolerance_ms {
        return Err(Error::Unsynchronized(format!(
            "max timestamp offset {offset} ms exceeds tolerance {sync_tolerance_ms} ms"
        )));
    }
    let frames = e1
        .frames
        .iter()
        .zip(&e2.frames)
        .map(|(a, b)| interpolate_frame(a, b, lambda))
        .collect::<Result<_>>()?;
    Ok(HdrEpisode {
        frames,
        timestamps_ms: e1.timestamps_ms.clone(),
    })
}

// ---------------------------------------------------------------------------
// Synthesis grid
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisGridSpec {
    /// Condition label pairs `(A, B)`; `λ` weights `A`.
    pub pairs: Vec<(String, String)>,
    pub lambda_values: Vec<f64>,
    pub episodes_per_condition: usize,
}

/// Interior grid `step, 2·step, …` stopping before `1 − step`.
///
/// For `step = 0.01` this is `0.01..=0.98`: 98 values.
pub fn lambda_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step < 0.5) {
        return Err(Error::invalid(format!("lambda step must be in (0, 0.5), got {step}")));
    }
    let inv = 1.0 / step;
    let divisions = inv.round();
    let exact = (divisions - inv).abs() < 1e-9;
    let mut values = Vec::new();
    for k in 1.. {
        let v = if exact { k as f64 / divisions } else { k as f64 * step };
        if v >= 1.0 - step - 1e-9 {
            break;
        }
        values.push(v);
    }
    Ok(values)
}

impl SynthesisGridSpec {
    /// Ten structured pairs: the three color pairs, the six pairs of the four
    /// single directions, and the low/high intensity pair; λ on the 0.01 grid.
    pub fn structured() -> Self {
        let pairs = [
            ("red", "green"),
            ("red", "blue"),
            ("green", "blue"),
            ("front", "rear"),
            ("front", "left"),
            ("front", "right"),
            ("rear", "left"),
            ("rear", "right"),
            ("left", "right"),
            ("lux140", "lux1400"),
        ];
        Self {
            pairs: pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            lambda_values: lambda_grid(0.01).expect("valid step"),
            episodes_per_condition: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, (a, b)) in self.pairs.iter().enumerate() {
            if a == b {
                return Err(Error::validation(format!("pairs[{i}]"), format!("pair repeats label {a:?}")));
            }
        }
        for (i, &l) in self.lambda_values.iter().enumerate() {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::validation(format!("lambda_values[{i}]"), format!("{l} is not inside (0, 1)")));
            }
            if i > 0 && l <= self.lambda_values[i - 1] {
                return Err(Error::validation(
                    format!("lambda_values[{i}]"),
                    "values must be strictly increasing",
                ));
            }
        }
        Ok(())
    }

    pub fn job_count(&self) -> usize {
        self.pairs.len() * self.lambda_values.len() * self.episodes_per_condition
    }
}

/// One synthetic episode to produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisJob {
    pub pair: (String, String),
    pub lambda: f64,
    pub episode_index: usize,
    /// Manifest path of the synthetic episode.
    pub output_path: PathBuf,
    pub parent_a: String,
    pub parent_b: String,
}

/// Label of the blended condition, safe for use as a directory name.
pub fn synthetic_label(a: &str, b: &str, lambda: f64) -> String {
    format!("mix-{a}-{b}-{lambda}")
}

/// The jobs of a grid plus the parent lookup needed to build their manifests.
#[derive(Debug, Clone)]
pub struct GridPlan {
    pub jobs: Vec<SynthesisJob>,
    parents: Vec<(usize, usize)>,
}

impl GridPlan {
    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn parent_indices(&self, i: usize) -> (usize, usize) {
        self.parents[i]
    }

    /// Parent manifests of job `i`, indexing the slice given to [`generate_grid`].
    pub fn parents<'a>(&self, i: usize, real: &'a [EpisodeManifest]) -> (&'a EpisodeManifest, &'a EpisodeManifest) {
        let (a, b) = self.parents[i];
        (&real[a], &real[b])
    }

    /// Manifest of synthetic job `i`.
    pub fn manifest(&self, i: usize, real: &[EpisodeManifest]) -> EpisodeManifest {
        let (a, b) = self.parents(i, real);
        synthetic_manifest(a, b, self.jobs[i].lambda)
    }

    pub fn manifests<'a>(&'a self, real: &'a [EpisodeManifest]) -> impl Iterator<Item = EpisodeManifest> + 'a {
        (0..self.jobs.len()).map(move |i| self.manifest(i, real))
    }

    /// JSON lines, one job per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for job in &self.jobs {
            out.push_str(&serde_json::to_string(job).expect("job serializes"));
            out.push('\n');
        }
        out
    }
}

/// Manifest of the episode `λ·a + (1−λ)·b`.
///
/// Streams, placements, trajectory and timestamps come from `a`; non-color
/// streams are recorded as copied from `a`.
pub fn synthetic_manifest(a: &EpisodeManifest, b: &EpisodeManifest, lambda: f64) -> EpisodeManifest {
    let label = synthetic_label(&a.lighting.label, &b.lighting.label, lambda);
    let copied_streams = a
        .streams
        .iter()
        .filter(|s| !s.is_color_image())
        .map(|s| s.name.clone())
        .collect();
    EpisodeManifest {
        episode_id: format!("{}__{label}", a.trajectory_id),
        task: a.task,
        trajectory_id: a.trajectory_id.clone(),
        lighting: blend_conditions(&a.lighting, &b.lighting, lambda, &label),
        streams: a.streams.clone(),
        placements: a.placements.clone(),
        provenance: Provenance::Synthetic {
            parent_a: a.episode_id.clone(),
            parent_b: b.episode_id.clone(),
            lambda,
            copied_streams,
        },
        timestamps_ms: a.timestamps_ms.clone(),
        scale: a.scale,
        calibration_profile: a.calibration_profile.clone(),
    }
}

/// Expands a grid spec against the real episodes into synthesis jobs.
///
/// For each pair, real episodes of condition A and B are matched by
/// trajectory id (synchronized replays share one), and the first
/// `episodes_per_condition` shared trajectories in id order are used.
pub fn generate_grid(spec: &SynthesisGridSpec, real: &[EpisodeManifest], output_root: &Path) -> Result<GridPlan> {
    spec.validate()?;
    let mut by_label: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, m) in real.iter().enumerate() {
        if m.provenance.is_real() {
            by_label.entry(m.lighting.label.as_str()).or_default().push(i);
        }
    }
    let resolve = |label: &str| {
        by_label
            .get(label)
            .ok_or_else(|| Error::Unresolved(format!("no real episodes with lighting label {label:?}")))
    };

    let mut jobs = Vec::with_capacity(spec.job_count());
    let mut parents = Vec::with_capacity(spec.job_count());
    for (label_a, label_b) in &spec.pairs {
        let (side_a, side_b) = (resolve(label_a)?, resolve(label_b)?);
        let b_by_traj: BTreeMap<&str, usize> = side_b.iter().map(|&i| (real[i].trajectory_id.as_str(), i)).collect();
        let mut matched: Vec<(usize, usize)> = side_a
            .iter()
            .filter_map(|&i| b_by_traj.get(real[i].trajectory_id.as_str()).map(|&j| (i, j)))
            .collect();
        matched.sort_by(|x, y| real[x.0].trajectory_id.cmp(&real[y.0].trajectory_id));
        matched.dedup_by(|x, y| real[x.0].trajectory_id == real[y.0].trajectory_id);
        if matched.len() < spec.episodes_per_condition {
            return Err(Error::Unresolved(format!(
                "pair ({label_a}, {label_b}) has {} synchronized episodes, need {}",
                matched.len(),
                spec.episodes_per_condition
            )));
        }
        for (episode_index, &(ia, ib)) in matched.iter().take(spec.episodes_per_condition).enumerate() {
            let (ma, mb) = (&real[ia], &real[ib]);
            if ma.task != mb.task {
                return Err(Error::Unresolved(format!(
                    "pair ({label_a}, {label_b}) mixes tasks {} and {}",
                    ma.task, mb.task
                )));
            }
            for &lambda in &spec.lambda_values {
                let label = synthetic_label(label_a, label_b, lambda);
                let episode_id = format!("{}__{label}", ma.trajectory_id);
                jobs.push(SynthesisJob {
                    pair: (label_a.clone(), label_b.clone()),
                    lambda,
                    episode_index,
                    output_path: dataset::manifest_path(output_root, ma.task, &label, &episode_id),
                    parent_a: ma.episode_id.clone(),
                    parent_b: mb.episode_id.clone(),
                });
                parents.push((ia, ib));
            }
        }
    }
    Ok(GridPlan { jobs, parents })
}

// ---------------------------------------------------------------------------
// Global HDR grading
// ---------------------------------------------------------------------------

/// Multiplies by `2^stops`.
pub fn scale_exposure(img: &RadianceImage, stops: f64) -> Result<RadianceImage> {
    if !stops.is_finite() {
        return Err(Error::invalid("exposure stops must be finite"));
    }
    let factor = stops.exp2() as f32;
    Ok(img.map(|v| v * factor))
}

/// Per-channel gains (>= 0), e.g. `(1, 0.9, 0.5)` for warm light.
pub fn adjust_color(img: &RadianceImage, gains: [f64; 3]) -> Result<RadianceImage> {
    channel_gains(img, gains)
}

/// Guard added inside the log-average.
pub const TONE_MAP_EPSILON: f64 = 1e-6;
pub const DEFAULT_TONE_KEY: f64 = 0.18;

/// `exp(mean(ln(ε + Y)))` over the image luminance.
pub fn log_average_luminance(img: &RadianceImage) -> Result<f64> {
    let luma = if img.channels() == 3 {
        img.luminance()?.data
    } else {
        img.data().to_vec()
    };
    let n = luma.len() as f64;
    Ok((luma.iter().map(|&y| (TONE_MAP_EPSILON + y as f64).ln()).sum::<f64>() / n).exp())
}

/// Global Reinhard operator with an explicit white point.
///
/// Samples are scaled by `key / log_average`, then mapped through
/// `v·(1 + v/white²)/(1 + v)` per channel and clipped to [0, 1].
pub fn tone_map(img: &RadianceImage, key: f64, white_point: f64) -> Result<RadianceImage> {
    if !(key > 0.0 && key.is_finite()) {
        return Err(Error::invalid(format!("key must be > 0, got {key}")));
    }
    if !(white_point > 0.0 && white_point.is_finite()) {
        return Err(Error::invalid(format!("white point must be > 0, got {white_point}")));
    }
    let scale = key / log_average_luminance(img)?;
    let inv_white2 = 1.0 / (white_point * white_point);
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let s = v as f64 * scale;
            (s * (1.0 + s * inv_white2) / (1.0 + s)).clamp(0.0, 1.0) as f32
        })
        .collect();
    Ok(RadianceImage::from_parts_unchecked(img.width(), img.height(), img.channels(), data))
}

/// [`tone_map`] with the white point at the brightest scaled luminance.
pub fn tone_map_auto(img: &RadianceImage, key: f64) -> Result<RadianceImage> {
    let scale = key / log_average_luminance(img)?;
    let max_luma = if img.channels() == 3 {
        img.luminance()?.data.iter().copied().fold(0.0f32, f32::max)
    } else {
        img.max_value()
    };
    let white = (max_luma as f64 * scale).max(TONE_MAP_EPSILON);
    tone_map(img, key, white)
}

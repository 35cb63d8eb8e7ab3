//! Episode manifests, on-disk layout, synchronization checks and placement
//! sampling.
//!
//! Layout:
//!
//! ```text
//! <root>/<task>/<condition_label>/<episode_id>/manifest.json
//! <root>/<task>/<condition_label>/<episode_id>/<stream>/<frame:06>.{png|pfm}
//! <root>/<task>/<condition_label>/<episode_id>/<stream>.csv
//! ```
//!
//! Image dims are stored as `[height, width, channels]` (or `[height, width]`
//! for depth); vector streams as `[length]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_bytes};
use crate::relight::LightingCondition;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_SYNC_TOLERANCE_MS: f64 = 33.0;
pub const DEFAULT_MIN_SEPARATION_MM: f64 = 30.0;
pub const DEFAULT_MAX_ATTEMPTS: usize = 10_000;
pub const FRAME_PLACEHOLDER: &str = "{frame:06}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "RGBStacking")]
    RgbStacking,
    DonutHanging,
    SparklingSorting,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::RgbStacking, Task::DonutHanging, Task::SparklingSorting];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::RgbStacking => "RGBStacking",
            Task::DonutHanging => "DonutHanging",
            Task::SparklingSorting => "SparklingSorting",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StorageFormat {
    #[serde(rename = "png8")]
    Png8,
    #[serde(rename = "png16-raw")]
    Png16Raw,
    #[serde(rename = "pfm")]
    Pfm,
    #[serde(rename = "csv")]
    Csv,
}

impl StorageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            StorageFormat::Png8 | StorageFormat::Png16Raw => "png",
            StorageFormat::Pfm => "pfm",
            StorageFormat::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamStorage {
    /// Path relative to the episode directory; image streams contain `{frame:06}`.
    pub pattern: String,
    pub format: StorageFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamDescriptor {
    pub name: String,
    pub dims: Vec<usize>,
    pub rate_hz: f64,
    pub storage: StreamStorage,
}

impl StreamDescriptor {
    /// Image stream stored one frame per file.
    pub fn image(name: &str, dims: &[usize], rate_hz: f64, format: StorageFormat) -> Self {
        Self {
            name: name.to_string(),
            dims: dims.to_vec(),
            rate_hz,
            storage: StreamStorage {
                pattern: format!("{name}/{FRAME_PLACEHOLDER}.{}", format.extension()),
                format,
            },
        }
    }

    /// Vector stream stored as one CSV file.
    pub fn vector(name: &str, len: usize, rate_hz: f64) -> Self {
        Self {
            name: name.to_string(),
            dims: vec![len],
            rate_hz,
            storage: StreamStorage {
                pattern: format!("{name}.csv"),
                format: StorageFormat::Csv,
            },
        }
    }

    pub fn is_image(&self) -> bool {
        self.storage.format != StorageFormat::Csv
    }

    /// Three-channel image stream, i.e. one whose content depends on lighting.
    pub fn is_color_image(&self) -> bool {
        self.is_image() && self.dims.len() == 3 && self.dims[2] == 3
    }

    /// Relative path of frame `index` (or the CSV file for vector streams).
    pub fn frame_path(&self, index: usize) -> String {
        self.storage.pattern.replace(FRAME_PLACEHOLDER, &format!("{index:06}"))
    }

    /// `(width, height, channels)` for image streams.
    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        match self.dims.as_slice() {
            [h, w] if self.is_image() => Some((*w, *h, 1)),
            [h, w, c] if self.is_image() => Some((*w, *h, *c)),
            _ => None,
        }
    }
}

pub const CAM_TOP_RGB: &str = "cam_top_rgb";
pub const CAM_TOP_DEPTH: &str = "cam_top_depth";
pub const CAM_WRIST_RGB: &str = "cam_wrist_rgb";
pub const CAM_WRIST_DEPTH: &str = "cam_wrist_depth";
pub const FORCE_TORQUE: &str = "force_torque";
pub const PROPRIOCEPTION: &str = "proprioception";

/// The six recorded streams with their sensor dimensions and rates. Depth is
/// stored as single-channel PFM in millimeters.
pub fn standard_streams(color_format: StorageFormat) -> Vec<StreamDescriptor> {
    vec![
        StreamDescriptor::image(CAM_TOP_RGB, &[1080, 1920, 3], 30.0, color_format),
        StreamDescriptor::image(CAM_TOP_DEPTH, &[480, 640], 30.0, StorageFormat::Pfm),
        StreamDescriptor::image(CAM_WRIST_RGB, &[480, 640, 3], 30.0, color_format),
        StreamDescriptor::image(CAM_WRIST_DEPTH, &[480, 640], 30.0, StorageFormat::Pfm),
        StreamDescriptor::vector(FORCE_TORQUE, 6, 10.0),
        StreamDescriptor::vector(PROPRIOCEPTION, 14, 30.0),
    ]
}

/// `standard_streams` with every image scaled to `width × height`.
pub fn mini_streams(color_format: StorageFormat, width: usize, height: usize) -> Vec<StreamDescriptor> {
    standard_streams(color_format)
        .into_iter()
        .map(|mut s| {
            if s.is_image() {
                s.dims[0] = height;
                s.dims[1] = width;
            }
            s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub role: String,
    /// Robot-base frame.
    pub position_mm: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Provenance {
    Real,
    Synthetic {
        parent_a: String,
        parent_b: String,
        lambda: f64,
        /// Streams copied verbatim from `parent_a` rather than interpolated.
        copied_streams: Vec<String>,
    },
}

impl Provenance {
    pub fn is_real(&self) -> bool {
        matches!(self, Provenance::Real)
    }
}

/// `Full` requires the sensor resolutions; `Mini` only relaxes image width
/// and height (for small fixtures and rendered test scenes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetScale {
    #[default]
    Full,
    Mini,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeManifest {
    pub episode_id: String,
    pub task: Task,
    /// Shared by every replay of one recorded trajectory.
    pub trajectory_id: String,
    pub lighting: LightingCondition,
    pub streams: Vec<StreamDescriptor>,
    pub placements: Vec<Placement>,
    pub provenance: Provenance,
    /// Per-stream capture times in milliseconds.
    pub timestamps_ms: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub scale: DatasetScale,
    /// Path of the calibration profile, relative to the dataset root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_profile: Option<String>,
}

impl EpisodeManifest {
    pub fn stream(&self, name: &str) -> Option<&StreamDescriptor> {
        self.streams.iter().find(|s| s.name == name)
    }

    pub fn frame_count(&self, stream: &str) -> usize {
        self.timestamps_ms.get(stream).map_or(0, Vec::len)
    }

    /// Timestamps at each stream's nominal rate, `frames` seconds·rate long.
    pub fn regular_timestamps(streams: &[StreamDescriptor], duration_s: f64) -> BTreeMap<String, Vec<f64>> {
        streams
            .iter()
            .map(|s| {
                let n = ((duration_s * s.rate_hz).round() as usize).max(1);
                let ts = (0..n).map(|i| i as f64 * 1000.0 / s.rate_hz).collect();
                (s.name.clone(), ts)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        check_id("episode_id", &self.episode_id)?;
        check_id("trajectory_id", &self.trajectory_id)?;
        self.lighting.validate()?;

        let mut names = BTreeSet::new();
        for (i, s) in self.streams.iter().enumerate() {
            let at = |field: &str| format!("streams[{i}].{field}");
            if s.name.is_empty() || !names.insert(s.name.as_str()) {
                return Err(Error::validation(at("name"), format!("empty or duplicate stream name {:?}", s.name)));
            }
            if !(s.rate_hz > 0.0 && s.rate_hz.is_finite()) {
                return Err(Error::validation(at("rate_hz"), format!("rate must be > 0, got {}", s.rate_hz)));
            }
            if s.dims.is_empty() || s.dims.contains(&0) {
                return Err(Error::validation(at("dims"), "dims must be non-empty and positive"));
            }
            if s.is_image() && s.image_shape().is_none() {
                return Err(Error::validation(at("dims"), "image streams need [height, width] or [height, width, channels]"));
            }
            let has_placeholder = s.storage.pattern.contains(FRAME_PLACEHOLDER);
            if s.storage.pattern.is_empty() || s.storage.pattern.starts_with('/') || s.storage.pattern.contains("..") {
                return Err(Error::validation(at("storage.pattern"), "pattern must be a relative path inside the episode"));
            }
            if s.is_image() != has_placeholder {
                return Err(Error::validation(
                    at("storage.pattern"),
                    format!("image streams need {FRAME_PLACEHOLDER}, CSV streams must not have it"),
                ));
            }
        }

        if self.provenance.is_real() {
            self.check_standard_streams()?;
        }

        let ts_names: BTreeSet<&str> = self.timestamps_ms.keys().map(String::as_str).collect();
        if ts_names != names {
            return Err(Error::validation(
                "timestamps_ms",
                format!("timestamp streams {ts_names:?} do not match stream set {names:?}"),
            ));
        }
        for (name, ts) in &self.timestamps_ms {
            for (k, w) in ts.windows(2).enumerate() {
                if !(w[1] > w[0]) {
                    return Err(Error::validation(
                        format!("timestamps_ms.{name}[{}]", k + 1),
                        "timestamps must be strictly increasing",
                    ));
                }
            }
            if let Some(k) = ts.iter().position(|t| !t.is_finite()) {
                return Err(Error::validation(format!("timestamps_ms.{name}[{k}]"), "timestamp is not finite"));
            }
        }

        for (i, p) in self.placements.iter().enumerate() {
            if p.position_mm.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("placements[{i}].position_mm"), "position is not finite"));
            }
        }

        if let Provenance::Synthetic {
            parent_a,
            parent_b,
            lambda,
            copied_streams,
        } = &self.provenance
        {
            if !(*lambda > 0.0 && *lambda < 1.0) {
                return Err(Error::validation("provenance.lambda", format!("lambda must be inside (0, 1), got {lambda}")));
            }
            if parent_a.is_empty() || parent_b.is_empty() || parent_a == parent_b {
                return Err(Error::validation("provenance", "synthetic episodes need two distinct parents"));
            }
            if let Some(s) = copied_streams.iter().find(|s| !names.contains(s.as_str())) {
                return Err(Error::validation("provenance.copied_streams", format!("unknown stream {s:?}")));
            }
        }
        Ok(())
    }

    fn check_standard_streams(&self) -> Result<()> {
        for expected in standard_streams(StorageFormat::Pfm) {
            let Some(s) = self.stream(&expected.name) else {
                return Err(Error::validation("streams", format!("missing required stream {:?}", expected.name)));
            };
            let at = format!("streams[{}]", expected.name);
            if s.rate_hz != expected.rate_hz {
                return Err(Error::validation(
                    format!("{at}.rate_hz"),
                    format!("expected {} Hz, got {}", expected.rate_hz, s.rate_hz),
                ));
            }
            if s.is_image() != expected.is_image() {
                return Err(Error::validation(format!("{at}.storage.format"), "wrong storage kind for stream"));
            }
            let dims_ok = match self.scale {
                DatasetScale::Full => s.dims == expected.dims,
                DatasetScale::Mini if expected.is_image() => {
                    s.dims.len() == expected.dims.len() && s.dims[2..] == expected.dims[2..]
                }
                DatasetScale::Mini => s.dims == expected.dims,
            };
            if !dims_ok {
                return Err(Error::validation(
                    format!("{at}.dims"),
                    format!("expected {:?}, got {:?}", expected.dims, s.dims),
                ));
            }
        }
        Ok(())
    }
}

fn check_id(field: &str, id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(Error::validation(field, format!("{id:?} is not a usable directory name")));
    }
    Ok(())
}

/// Canonical encoding: sorted keys, shortest round-trip floats, two-space
/// indent, trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let tree = serde_json::to_value(value).map_err(|e| Error::format("JSON", e.to_string()))?;
    let mut s = serde_json::to_string_pretty(&tree).map_err(|e| Error::format("JSON", e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Parses JSON into `T`, reporting failures with the offending field path.
pub fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::validation(if path.is_empty() { ".".into() } else { path }, e.into_inner().to_string())
    })
}

pub fn manifest_to_json(m: &EpisodeManifest) -> Result<String> {
    m.validate()?;
    canonical_json(m)
}

pub fn manifest_from_json(bytes: &[u8]) -> Result<EpisodeManifest> {
    let m: EpisodeManifest = parse_json(bytes)?;
    m.validate()?;
    Ok(m)
}

pub fn write_manifest(m: &EpisodeManifest, path: &Path) -> Result<()> {
    atomic_write(path, manifest_to_json(m)?.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<EpisodeManifest> {
    manifest_from_json(&read_bytes(path)?)
}

pub fn episode_dir(root: &Path, task: Task, label: &str, episode_id: &str) -> PathBuf {
    root.join(task.as_str()).join(label).join(episode_id)
}

pub fn manifest_path(root: &Path, task: Task, label: &str, episode_id: &str) -> PathBuf {
    episode_dir(root, task, label, episode_id).join(MANIFEST_FILE)
}

/// Where `m` lives under `root`.
pub fn manifest_location(root: &Path, m: &EpisodeManifest) -> PathBuf {
    manifest_path(root, m.task, &m.lighting.label, &m.episode_id)
}

/// Every `manifest.json` three levels below `root`, sorted.
pub fn discover_manifests(root: &Path) -> Result<Vec<PathBuf>> {
    fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                out.push(path);
            }
        }
        Ok(out)
    }
    let mut found = Vec::new();
    for task in subdirs(root)? {
        for label in subdirs(&task)? {
            for episode in subdirs(&label)? {
                let m = episode.join(MANIFEST_FILE);
                if m.is_file() {
                    found.push(m);
                }
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Reads every manifest under `root`, in path order.
pub fn load_dataset(root: &Path) -> Result<Vec<(PathBuf, EpisodeManifest)>> {
    discover_manifests(root)?
        .into_iter()
        .map(|p| read_manifest(&p).map(|m| (p, m)))
        .collect()
}

// ---------------------------------------------------------------------------
// Vector streams
// ---------------------------------------------------------------------------

pub fn csv_header(stream: &str, len: usize) -> Vec<String> {
    std::iter::once("timestamp_ms".to_string())
        .chain((0..len).map(|i| format!("{stream}_{i}")))
        .collect()
}

/// Header row then one `timestamp_ms, v0, v1, …` row per sample.
pub fn write_vector_csv(path: &Path, stream: &str, timestamps_ms: &[f64], rows: &[Vec<f64>]) -> Result<()> {
    if timestamps_ms.len() != rows.len() {
        return Err(Error::dims(format!("{} rows", timestamps_ms.len()), rows.len().to_string()));
    }
    let len = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().find(|r| r.len() != len) {
        return Err(Error::dims(format!("rows of length {len}"), r.len().to_string()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::format("CSV", e.to_string());
    w.write_record(csv_header(stream, len)).map_err(csv_err)?;
    for (t, row) in timestamps_ms.iter().zip(rows) {
        w.write_record(std::iter::once(t).chain(row).map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format("CSV", e.to_string()))?;
    atomic_write(path, &bytes)
}

/// Inverse of [`write_vector_csv`]: `(timestamps, rows)`.
pub fn read_vector_csv(path: &Path) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let bytes = read_bytes(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let csv_err = |e: csv::Error| Error::format("CSV", e.to_string());
    let header = r.headers().map_err(csv_err)?;
    if header.get(0) != Some("timestamp_ms") {
        return Err(Error::format("CSV", "first column must be timestamp_ms"));
    }
    let (mut ts, mut rows) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let mut values = rec.iter().map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| Error::format("CSV", format!("bad number {f:?}")))
        });
        ts.push(values.next().ok_or_else(|| Error::format("CSV", "empty row"))??);
        rows.push(values.collect::<Result<Vec<_>>>()?);
    }
    Ok((ts, rows))
}

// ---------------------------------------------------------------------------
// Synchronization
// ---------------------------------------------------------------------------

/// Largest spread `max − min` across sequences at any common index.
pub fn max_offset(sequences: &[&[f64]]) -> f64 {
    let n = sequences.iter().map(|s| s.len()).min().unwrap_or(0);
    (0..n)
        .map(|i| {
            let (lo, hi) = sequences
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s[i]), hi.max(s[i])));
            hi - lo
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub pass: bool,
    pub tolerance_ms: f64,
    pub max_offset_ms: BTreeMap<String, f64>,
}

/// Aligns each stream by frame index across episodes and checks that no
/// pair of timestamps is further apart than `tolerance_ms`.
pub fn verify_sync(episodes: &[EpisodeManifest], tolerance_ms: f64) -> Result<SyncReport> {
    if episodes.len() < 2 {
        return Err(Error::invalid("verify_sync needs at least two episodes"));
    }
    if !(tolerance_ms >= 0.0) {
        return Err(Error::invalid(format!("tolerance must be >= 0, got {tolerance_ms}")));
    }
    let first = &episodes[0];
    for (i, e) in episodes.iter().enumerate().skip(1) {
        if e.task != first.task {
            return Err(Error::validation(
                format!("episodes[{i}].task"),
                format!("{} differs from {}", e.task, first.task),
            ));
        }
        if !e.timestamps_ms.keys().eq(first.timestamps_ms.keys()) {
            return Err(Error::validation(format!("episodes[{i}].streams"), "stream sets differ"));
        }
    }
    let mut max_offset_ms = BTreeMap::new();
    for name in first.timestamps_ms.keys() {
        let seqs: Vec<&[f64]> = episodes.iter().map(|e| e.timestamps_ms[name].as_slice()).collect();
        let counts: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        if counts.iter().any(|&c| c != counts[0]) {
            return Err(Error::FrameCountMismatch {
                stream: name.clone(),
                counts,
            });
        }
        max_offset_ms.insert(name.clone(), max_offset(&seqs));
    }
    Ok(SyncReport {
        pass: max_offset_ms.values().all(|&o| o <= tolerance_ms),
        tolerance_ms,
        max_offset_ms,
    })
}

// ---------------------------------------------------------------------------
// Placement sampling
// ---------------------------------------------------------------------------

/// Axis-aligned placement range for one object on the table plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementPatch {
    pub role: String,
    pub min_mm: [f64; 2],
    pub max_mm: [f64; 2],
    #[serde(default)]
    pub height_mm: f64,
}

impl PlacementPatch {
    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.min_mm[0] + self.max_mm[0]), 0.5 * (self.min_mm[1] + self.max_mm[1])]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..2).all(|k| p[k] >= self.min_mm[k] && p[k] <= self.max_mm[k])
    }
}

fn default_separation() -> f64 {
    DEFAULT_MIN_SEPARATION_MM
}

fn default_attempts() -> usize {
    DEFAULT_MAX_ATTEMPTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementSpec {
    pub task: Task,
    pub patches: Vec<PlacementPatch>,
    #[serde(default = "default_separation")]
    pub min_separation_mm: f64,
    /// Permits zero-area patches (pinned objects).
    #[serde(default)]
    pub allow_degenerate: bool,
    /// Rejection budget per placement set.
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

impl PlacementSpec {
    pub fn new(task: Task, patches: Vec<PlacementPatch>) -> Self {
        Self {
            task,
            patches,
            min_separation_mm: DEFAULT_MIN_SEPARATION_MM,
            allow_degenerate: false,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patches.is_empty() {
            return Err(Error::validation("patches", "at least one patch is required"));
        }
        for (i, p) in self.patches.iter().enumerate() {
            let finite = p.min_mm.iter().chain(&p.max_mm).all(|v| v.is_finite()) && p.height_mm.is_finite();
            if !finite || (0..2).any(|k| p.min_mm[k] > p.max_mm[k]) {
                return Err(Error::validation(format!("patches[{i}]"), "bounds must be finite with min <= max"));
            }
            let positive_area = (0..2).all(|k| p.min_mm[k] < p.max_mm[k]);
            if !positive_area && !self.allow_degenerate {
                return Err(Error::validation(format!("patches[{i}]"), "patch has zero area"));
            }
        }
        if !(self.min_separation_mm >= 0.0 && self.min_separation_mm.is_finite()) {
            return Err(Error::validation("min_separation_mm", "separation must be finite and >= 0"));
        }
        if self.max_attempts == 0 {
            return Err(Error::validation("max_attempts", "must be >= 1"));
        }
        Ok(())
    }
}

/// `n` placement sets, each with one uniform position per patch, rejecting
/// sets whose objects are closer than the minimum separation.
pub fn sample_placements(spec: &PlacementSpec, seed: u64, n: usize) -> Result<Vec<Vec<Placement>>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_sq = spec.min_separation_mm * spec.min_separation_mm;
    (0..n)
        .map(|_| {
            for _ in 0..spec.max_attempts {
                let set: Vec<[f64; 3]> = spec
                    .patches
                    .iter()
                    .map(|p| {
                        let x = p.min_mm[0] + (p.max_mm[0] - p.min_mm[0]) * rng.random::<f64>();
                        let y = p.min_mm[1] + (p.max_mm[1] - p.min_mm[1]) * rng.random::<f64>();
                        [x, y, p.height_mm]
                    })
                    .collect();
                let separated = set.iter().enumerate().all(|(i, a)| {
                    set[i + 1..].iter().all(|b| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) >= min_sq)
                });
                if separated {
                    return Ok(spec
                        .patches
                        .iter()
                        .zip(set)
                        .map(|(p, position_mm)| Placement {
                            role: p.role.clone(),
                            position_mm,
                        })
                        .collect());
                }
            }
            Err(Error::RejectionBudgetExhausted {
                attempts: spec.max_attempts,
            })
        })
        .collect()
}

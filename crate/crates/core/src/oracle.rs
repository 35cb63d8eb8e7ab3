//! Analytic ground-truth renderer: a Lambertian plane lit by point lights,
//! seen by an orthographic camera from above.
//!
//! Pixel `(i, j)` sits at `(i·spacing, j·spacing, 0)` and receives
//! `albedo ⊙ Σ Φ·cosθ/d²` with `cosθ = h/d`. There are no shadows or
//! interreflections, so the image is exactly linear in every light.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    self, manifest_location, mini_streams, parse_json, standard_streams, write_manifest, DatasetScale, EpisodeManifest,
    Placement, Provenance, StorageFormat, Task, CAM_TOP_DEPTH, CAM_TOP_RGB, CAM_WRIST_DEPTH, CAM_WRIST_RGB,
};
use crate::error::{Error, Result};
use crate::image::RadianceImage;
use crate::io::{read_bytes, read_pfm, write_pfm};
use crate::relight::{HdrEpisode, LightingCondition};

pub const DEFAULT_GRID: usize = 64;
pub const DEFAULT_SPACING_MM: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointLight {
    pub position_mm: [f64; 3],
    pub rgb_intensity: [f64; 3],
}

impl PointLight {
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            position_mm: self.position_mm,
            rgb_intensity: self.rgb_intensity.map(|v| v * k),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleScene {
    albedo: RadianceImage,
    spacing_mm: f64,
    lights: Vec<PointLight>,
}

impl OracleScene {
    pub fn new(albedo: RadianceImage, spacing_mm: f64, lights: Vec<PointLight>) -> Result<Self> {
        albedo.require_rgb()?;
        if albedo.max_value() > 1.0 {
            return Err(Error::invalid("albedo must lie in [0, 1]"));
        }
        if !(spacing_mm > 0.0 && spacing_mm.is_finite()) {
            return Err(Error::invalid(format!("spacing must be > 0, got {spacing_mm}")));
        }
        for (i, l) in lights.iter().enumerate() {
            if !(l.position_mm[2] > 0.0) || l.position_mm.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("light {i} must sit above the plane")));
            }
            if l.rgb_intensity.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::invalid(format!("light {i} intensity must be finite and >= 0")));
            }
        }
        Ok(Self {
            albedo,
            spacing_mm,
            lights,
        })
    }

    pub fn albedo(&self) -> &RadianceImage {
        &self.albedo
    }

    pub fn spacing_mm(&self) -> f64 {
        self.spacing_mm
    }

    pub fn lights(&self) -> &[PointLight] {
        &self.lights
    }

    pub fn with_albedo(&self, albedo: RadianceImage) -> Result<Self> {
        Self::new(albedo, self.spacing_mm, self.lights.clone())
    }

    pub fn with_lights(&self, lights: Vec<PointLight>) -> Result<Self> {
        Self::new(self.albedo.clone(), self.spacing_mm, lights)
    }
}

/// Renders with the listed lights switched on.
pub fn render(scene: &OracleScene, active: &[usize]) -> Result<RadianceImage> {
    let mut weights = vec![0.0; scene.lights.len()];
    for &i in active {
        *weights
            .get_mut(i)
            .ok_or_else(|| Error::invalid(format!("light index {i} out of range")))? = 1.0;
    }
    render_weighted(scene, &weights)
}

/// Renders every light at its intensity times `weights[i]`.
pub fn render_weighted(scene: &OracleScene, weights: &[f64]) -> Result<RadianceImage> {
    if weights.len() != scene.lights.len() {
        return Err(Error::dims(format!("{} weights", scene.lights.len()), weights.len().to_string()));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::invalid("light weights must be finite and >= 0"));
    }
    let lights: Vec<PointLight> = scene
        .lights
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(l, &w)| l.scaled(w))
        .collect();
    let (w, h) = (scene.albedo.width(), scene.albedo.height());
    let albedo = scene.albedo.data();
    let mut data = vec![0f32; w * h * 3];
    data.par_chunks_mut(w * 3).enumerate().for_each(|(j, row)| {
        let y = j as f64 * scene.spacing_mm;
        for (i, px) in row.chunks_exact_mut(3).enumerate() {
            let x = i as f64 * scene.spacing_mm;
            let mut e = [0f64; 3];
            for l in &lights {
                let [lx, ly, lh] = l.position_mm;
                let d2 = (x - lx).powi(2) + (y - ly).powi(2) + lh * lh;
                let g = lh / (d2 * d2.sqrt());
                for (ec, phi) in e.iter_mut().zip(l.rgb_intensity) {
                    *ec += phi * g;
                }
            }
            let a = &albedo[(j * w + i) * 3..][..3];
            for c in 0..3 {
                px[c] = (a[c] as f64 * e[c]) as f32;
            }
        }
    });
    Ok(RadianceImage::from_parts_unchecked(w, h, 3, data))
}

/// A rectangle of fixed albedo sliding across the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovingPatch {
    pub albedo: [f32; 3],
    /// Size in pixels.
    pub size: [usize; 2],
    pub start: [f64; 2],
    /// Pixels per frame.
    pub velocity: [f64; 2],
}

/// A scene whose albedo changes over time while the lights stay fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleEpisode {
    pub scene: OracleScene,
    pub motion: Option<MovingPatch>,
    pub frames: usize,
    pub rate_hz: f64,
}

impl OracleEpisode {
    pub fn albedo_at(&self, t: usize) -> RadianceImage {
        let base = self.scene.albedo();
        let Some(m) = self.motion else {
            return base.clone();
        };
        let (w, h) = (base.width(), base.height());
        let x0 = (m.start[0] + m.velocity[0] * t as f64).round() as i64;
        let y0 = (m.start[1] + m.velocity[1] * t as f64).round() as i64;
        let mut data = base.data().to_vec();
        for y in y0.max(0)..(y0 + m.size[1] as i64).min(h as i64) {
            for x in x0.max(0)..(x0 + m.size[0] as i64).min(w as i64) {
                let k = (y as usize * w + x as usize) * 3;
                data[k..k + 3].copy_from_slice(&m.albedo);
            }
        }
        RadianceImage::from_parts_unchecked(w, h, 3, data)
    }

    pub fn scene_at(&self, t: usize) -> Result<OracleScene> {
        self.scene.with_albedo(self.albedo_at(t))
    }
}

/// Renders each frame independently with per-light weights.
pub fn render_episode_weighted(ep: &OracleEpisode, weights: &[f64]) -> Result<HdrEpisode> {
    if ep.frames == 0 {
        return Err(Error::invalid("episode needs at least one frame"));
    }
    if !(ep.rate_hz > 0.0) {
        return Err(Error::invalid("rate must be > 0"));
    }
    let frames = (0..ep.frames)
        .into_par_iter()
        .map(|t| render_weighted(&ep.scene_at(t)?, weights))
        .collect::<Result<Vec<_>>>()?;
    Ok(HdrEpisode::at_rate(frames, ep.rate_hz))
}

pub fn render_episode(ep: &OracleEpisode, active: &[usize]) -> Result<HdrEpisode> {
    let mut weights = vec![0.0; ep.scene.lights.len()];
    for &i in active {
        *weights
            .get_mut(i)
            .ok_or_else(|| Error::invalid(format!("light index {i} out of range")))? = 1.0;
    }
    render_episode_weighted(ep, &weights)
}

/// Random albedo in [0, 1] per pixel and `n_lights` lights over the grid.
///
/// Intensities are scaled by the squared light height so each light
/// contributes at most about 1.0 at its nadir.
pub fn random_scene(seed: u64, width: usize, height: usize, n_lights: usize) -> OracleScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let albedo: Vec<f32> = (0..width * height * 3).map(|_| rng.random::<f32>()).collect();
    let spacing = DEFAULT_SPACING_MM;
    let lights = (0..n_lights)
        .map(|_| {
            let h = rng.random_range(100.0..600.0);
            let pos = [
                rng.random_range(0.0..width as f64 * spacing),
                rng.random_range(0.0..height as f64 * spacing),
                h,
            ];
            let rgb = [0; 3].map(|_: i32| rng.random_range(0.05..1.0) * h * h);
            PointLight {
                position_mm: pos,
                rgb_intensity: rgb,
            }
        })
        .collect();
    OracleScene::new(
        RadianceImage::new(width, height, 3, albedo).expect("albedo in range"),
        spacing,
        lights,
    )
    .expect("valid random scene")
}

// ---------------------------------------------------------------------------
// Scene files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlbedoSource {
    Constant([f32; 3]),
    /// PFM path, relative to the scene file.
    Pfm(PathBuf),
    /// Two-tone checkerboard with square cells of `cell` pixels.
    Checker { a: [f32; 3], b: [f32; 3], cell: usize },
}

fn default_grid() -> [usize; 2] {
    [DEFAULT_GRID, DEFAULT_GRID]
}

fn default_spacing() -> f64 {
    DEFAULT_SPACING_MM
}

fn default_frames() -> usize {
    1
}

fn default_rate() -> f64 {
    30.0
}

/// JSON scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    /// `[width, height]` in pixels.
    #[serde(default = "default_grid")]
    pub grid: [usize; 2],
    #[serde(default = "default_spacing")]
    pub spacing_mm: f64,
    pub albedo: AlbedoSource,
    pub lights: Vec<PointLight>,
    #[serde(default)]
    pub motion: Option<MovingPatch>,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
}

impl SceneFile {
    pub fn build(&self, base_dir: &Path) -> Result<OracleEpisode> {
        let [w, h] = self.grid;
        let albedo = match &self.albedo {
            AlbedoSource::Constant(rgb) => RadianceImage::from_fn(w, h, 3, |_, _, c| rgb[c])?,
            AlbedoSource::Checker { a, b, cell } => {
                let cell = (*cell).max(1);
                RadianceImage::from_fn(w, h, 3, |x, y, c| if (x / cell + y / cell) % 2 == 0 { a[c] } else { b[c] })?
            }
            AlbedoSource::Pfm(path) => {
                let img = read_pfm(&base_dir.join(path))?;
                if (img.width(), img.height()) != (w, h) {
                    return Err(Error::dims(format!("{w}x{h} albedo"), img.shape_string()));
                }
                img
            }
        };
        Ok(OracleEpisode {
            scene: OracleScene::new(albedo, self.spacing_mm, self.lights.clone())?,
            motion: self.motion,
            frames: self.frames,
            rate_hz: self.rate_hz,
        })
    }
}

pub fn load_scene(path: &Path) -> Result<OracleEpisode> {
    let file: SceneFile = parse_json(&read_bytes(path)?)?;
    file.build(path.parent().unwrap_or(Path::new(".")))
}

// ---------------------------------------------------------------------------
// Dataset episodes
// ---------------------------------------------------------------------------

/// Identity and lighting of a rendered episode written into a dataset tree.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub task: Task,
    pub lighting: LightingCondition,
    pub trajectory_id: String,
    pub episode_id: String,
    pub placements: Vec<Placement>,
}

pub const CAMERA_HEIGHT_MM: f32 = 1000.0;
const FULL_TOP: (usize, usize) = (1920, 1080);
const FULL_WRIST: (usize, usize) = (640, 480);

fn resample_nearest(img: &RadianceImage, w: usize, h: usize) -> RadianceImage {
    let (sw, sh, c) = (img.width(), img.height(), img.channels());
    let data = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x * sw / w, y * sh / h)))
        .flat_map(|(x, y)| img.pixel(x, y).to_vec())
        .collect();
    RadianceImage::from_parts_unchecked(w, h, c, data)
}

/// Renders `ep` and writes it as a real episode under `root`.
///
/// A 1920×1080 albedo grid yields a full-resolution episode (wrist and depth
/// streams at 640×480); any other grid yields a mini episode with every image
/// stream at the grid size. Depth is the constant camera height and the
/// vector streams are pseudo-random but fixed by the trajectory id, so
/// episodes of one trajectory stay synchronized across lighting conditions.
pub fn write_dataset_episode(root: &Path, spec: &EpisodeSpec, ep: &OracleEpisode, weights: &[f64]) -> Result<PathBuf> {
    let (w, h) = (ep.scene.albedo().width(), ep.scene.albedo().height());
    let full = (w, h) == FULL_TOP;
    let (streams, scale) = if full {
        (standard_streams(StorageFormat::Pfm), DatasetScale::Full)
    } else {
        (mini_streams(StorageFormat::Pfm, w, h), DatasetScale::Mini)
    };
    let duration_s = ep.frames as f64 / ep.rate_hz;
    let timestamps_ms = streams
        .iter()
        .map(|s| {
            let period = 1000.0 / s.rate_hz;
            let n = ((duration_s * 1000.0 / period) - 1e-9).ceil().max(1.0) as usize;
            (s.name.clone(), (0..n).map(|k| k as f64 * period).collect())
        })
        .collect();
    let m = EpisodeManifest {
        episode_id: spec.episode_id.clone(),
        task: spec.task,
        trajectory_id: spec.trajectory_id.clone(),
        lighting: spec.lighting.clone(),
        streams,
        placements: spec.placements.clone(),
        provenance: Provenance::Real,
        timestamps_ms,
        scale,
        calibration_profile: None,
    };
    m.validate()?;
    let path = manifest_location(root, &m);
    let dir = path.parent().expect("manifest has a directory");

    let top = render_episode_weighted(ep, weights)?;
    let wrist_frames = if full {
        let k = w as f64 / FULL_WRIST.0 as f64;
        (0..ep.frames)
            .into_par_iter()
            .map(|t| {
                let albedo = resample_nearest(&ep.albedo_at(t), FULL_WRIST.0, FULL_WRIST.1);
                render_weighted(&OracleScene::new(albedo, ep.scene.spacing_mm * k, ep.scene.lights.clone())?, weights)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        top.frames.clone()
    };
    let depth_dims = if full { FULL_WRIST } else { (w, h) };
    let depth = RadianceImage::filled(depth_dims.0, depth_dims.1, 1, CAMERA_HEIGHT_MM)?;
    for s in &m.streams {
        let n = m.frame_count(&s.name);
        let frames: Vec<&RadianceImage> = match s.name.as_str() {
            CAM_TOP_RGB => top.frames.iter().take(n).collect(),
            CAM_WRIST_RGB => wrist_frames.iter().take(n).collect(),
            CAM_TOP_DEPTH | CAM_WRIST_DEPTH => vec![&depth; n],
            _ => Vec::new(),
        };
        for (t, frame) in frames.into_iter().enumerate() {
            write_pfm(&dir.join(s.frame_path(t)), frame)?;
        }
        if !s.is_image() {
            let mut rng = ChaCha8Rng::seed_from_u64(trajectory_seed(&spec.trajectory_id, &s.name));
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..s.dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            dataset::write_vector_csv(&dir.join(s.frame_path(0)), &s.name, &m.timestamps_ms[&s.name], &rows)?;
        }
    }
    write_manifest(&m, &path)?;
    Ok(path)
}

fn trajectory_seed(trajectory: &str, stream: &str) -> u64 {
    // FNV-1a, stable across builds
    trajectory
        .bytes()
        .chain([0])
        .chain(stream.bytes())
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

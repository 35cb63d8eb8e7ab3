//! Fitting the parameters the pipeline consumes: color matrix, white balance
//! gains, exposure and the lens shading gain map, plus lux bookkeeping.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{RadianceImage, LUMA_WEIGHTS};
use crate::io;
use crate::pipeline::{apply_exposure, color_correct, white_balance, ColorMatrix, Transfer};

/// Default box radius applied to flat fields before taking gain ratios.
pub const DEFAULT_SHADING_RADIUS: usize = 8;

/// Chart geometry: 4 rows of 6 patches, neutrals on the last row.
pub const CHART_ROWS: usize = 4;
pub const CHART_COLS: usize = 6;
pub const CHART_NEUTRALS: std::ops::Range<usize> = 18..24;

/// 24-patch reference chart as sRGB 8-bit codes, in reading order. The last
/// row is a neutral ramp, stored exactly gray.
pub const REFERENCE_CHART_SRGB: [[u8; 3]; 24] = [
    [115, 82, 68],   // dark skin
    [194, 150, 130], // light skin
    [98, 122, 157],  // blue sky
    [87, 108, 67],   // foliage
    [133, 128, 177], // blue flower
    [103, 189, 170], // bluish green
    [214, 126, 44],  // orange
    [80, 91, 166],   // purplish blue
    [193, 90, 99],   // moderate red
    [94, 60, 108],   // purple
    [157, 188, 64],  // yellow green
    [224, 163, 46],  // orange yellow
    [56, 61, 150],   // blue
    [70, 148, 73],   // green
    [175, 54, 60],   // red
    [231, 199, 31],  // yellow
    [187, 86, 149],  // magenta
    [8, 133, 161],   // cyan
    [243, 243, 243], // white
    [200, 200, 200], // neutral 8
    [160, 160, 160], // neutral 6.5
    [122, 122, 122], // neutral 5
    [85, 85, 85],    // neutral 3.5
    [52, 52, 52],    // black
];

/// The reference chart in linear RGB.
pub fn reference_chart() -> Vec<[f64; 3]> {
    REFERENCE_CHART_SRGB
        .iter()
        .map(|p| p.map(|c| Transfer::Srgb.decode(c as f64 / 255.0)))
        .collect()
}

/// Everything the pipeline needs beyond its stage switches.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProfile {
    pub ccm: ColorMatrix,
    pub wb_gains: [f64; 3],
    /// Per-pixel gains; `None` means unit gain everywhere.
    pub shading_map: Option<RadianceImage>,
    pub transfer: Transfer,
    pub exposure: f64,
}

impl Default for CalibrationProfile {
    fn default() -> Self {
        Self::identity()
    }
}

impl CalibrationProfile {
    pub fn identity() -> Self {
        Self {
            ccm: ColorMatrix::IDENTITY,
            wb_gains: [1.0; 3],
            shading_map: None,
            transfer: Transfer::Srgb,
            exposure: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.wb_gains.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::validation("wb_gains", format!("gains must be > 0, got {:?}", self.wb_gains)));
        }
        if self.wb_gains[1] != 1.0 {
            return Err(Error::validation("wb_gains[1]", "green gain must be exactly 1.0"));
        }
        if !(self.exposure > 0.0 && self.exposure.is_finite()) {
            return Err(Error::validation("exposure", format!("must be > 0, got {}", self.exposure)));
        }
        if !self.ccm.is_finite() {
            return Err(Error::validation("ccm", "non-finite entry"));
        }
        self.transfer.validate()?;
        if let Some(map) = &self.shading_map {
            if map.data().iter().any(|&g| g <= 0.0) {
                return Err(Error::validation("shading_map", "gains must be > 0"));
            }
        }
        Ok(())
    }

    /// Applies white balance, exposure and the color matrix to one linear RGB triple.
    pub fn correct_rgb(&self, rgb: [f64; 3]) -> [f64; 3] {
        let balanced = [
            rgb[0] * self.wb_gains[0] * self.exposure,
            rgb[1] * self.wb_gains[1] * self.exposure,
            rgb[2] * self.wb_gains[2] * self.exposure,
        ];
        self.ccm.apply(balanced)
    }

    /// Image-space version of [`correct_rgb`](Self::correct_rgb).
    pub fn correct_image(&self, img: &RadianceImage) -> Result<RadianceImage> {
        let balanced = white_balance(img, self.wb_gains)?;
        color_correct(&apply_exposure(&balanced, self.exposure)?, &self.ccm)
    }

    /// Writes `path` as JSON, with the shading map (if any) as a companion
    /// PFM named `<stem>.shading.pfm` next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let shading_map = match &self.shading_map {
            Some(map) => {
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let rel = format!("{stem}.shading.pfm");
                io::write_pfm(&path.with_file_name(&rel), map)?;
                Some(rel)
            }
            None => None,
        };
        let file = ProfileFile {
            ccm: self.ccm,
            wb_gains: self.wb_gains,
            transfer: self.transfer,
            exposure: self.exposure,
            shading_map,
        };
        let json = serde_json::to_vec_pretty(&file).expect("profile serializes");
        io::atomic_write(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = io::read_bytes(path)?;
        let de = &mut serde_json::Deserializer::from_slice(&bytes);
        let file: ProfileFile = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::validation(format!("{}:{}", path.display(), e.path()), e.inner().to_string()))?;
        let shading_map = match &file.shading_map {
            Some(rel) => {
                let base: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
                Some(io::read_pfm(&base.join(rel))?)
            }
            None => None,
        };
        let profile = Self {
            ccm: file.ccm,
            wb_gains: file.wb_gains,
            shading_map,
            transfer: file.transfer,
            exposure: file.exposure,
        };
        profile.validate()?;
        Ok(profile)
    }
}

/// On-disk form of a [`CalibrationProfile`].
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    ccm: ColorMatrix,
    wb_gains: [f64; 3],
    transfer: Transfer,
    exposure: f64,
    shading_map: Option<String>,
}

/// Least-squares 3x3 matrix `M` minimizing `Σ ‖M·measured_i − reference_i‖²`.
pub fn fit_ccm(measured: &[[f64; 3]], reference: &[[f64; 3]]) -> Result<ColorMatrix> {
    if measured.len() != reference.len() {
        return Err(Error::dims(
            format!("{} reference patches", measured.len()),
            format!("{}", reference.len()),
        ));
    }
    let n = measured.len();
    let a = DMatrix::from_fn(n, 3, |r, c| measured[r][c]);
    let b = DMatrix::from_fn(n, 3, |r, c| reference[r][c]);
    let svd = SVD::new(a, true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * 1e-10 * n.max(3) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < 3 || !(max_sv > 0.0) {
        return Err(Error::RankDeficient { rank });
    }
    // A·Mᵀ ≈ B
    let mt = svd.solve(&b, tol).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(ColorMatrix(std::array::from_fn(|r| std::array::from_fn(|c| mt[(c, r)]))))
}

/// Green-normalized gains `(Ḡ/R̄, 1, Ḡ/B̄)` from gray patch means.
pub fn fit_white_balance(gray_patches: &[[f64; 3]]) -> Result<[f64; 3]> {
    if gray_patches.is_empty() {
        return Err(Error::invalid("white balance needs at least one gray patch"));
    }
    let n = gray_patches.len() as f64;
    let mean: [f64; 3] = std::array::from_fn(|c| gray_patches.iter().map(|p| p[c]).sum::<f64>() / n);
    if mean.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::validation("gray_patches", format!("channel means must be > 0, got {mean:?}")));
    }
    Ok([mean[1] / mean[0], 1.0, mean[1] / mean[2]])
}

/// Clipped-window box mean computed from a summed-area table.
fn box_smooth(img: &RadianceImage, radius: usize) -> Vec<f64> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    if radius == 0 {
        return img.data().iter().map(|&v| v as f64).collect();
    }
    let stride = w + 1;
    let mut out = vec![0f64; w * h * ch];
    let mut sat = vec![0f64; (w + 1) * (h + 1)];
    for c in 0..ch {
        for y in 0..h {
            let mut row = 0f64;
            for x in 0..w {
                row += img.data()[(y * w + x) * ch + c] as f64;
                sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
            }
        }
        for y in 0..h {
            let (y0, y1) = (y.saturating_sub(radius), (y + radius + 1).min(h));
            for x in 0..w {
                let (x0, x1) = (x.saturating_sub(radius), (x + radius + 1).min(w));
                let sum = sat[y1 * stride + x1] - sat[y0 * stride + x1] - sat[y1 * stride + x0] + sat[y0 * stride + x0];
                out[(y * w + x) * ch + c] = sum / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    out
}

/// Pixel treated as the optical center: `(width / 2, height / 2)`.
pub fn center_pixel(width: usize, height: usize) -> (usize, usize) {
    (width / 2, height / 2)
}

/// Gain map `center / smoothed(p)` per channel, from a flat-field capture.
///
/// `smoothing_radius = 0` uses the flat field as-is.
pub fn fit_shading_map(flat_field: &RadianceImage, smoothing_radius: usize) -> Result<RadianceImage> {
    let (w, h, ch) = (flat_field.width(), flat_field.height(), flat_field.channels());
    let smooth = box_smooth(flat_field, smoothing_radius);
    if let Some(i) = smooth.iter().position(|&v| !(v > 0.0)) {
        let (p, c) = (i / ch, i % ch);
        return Err(Error::validation(
            format!("flat_field[{},{}][{c}]", p % w, p / w),
            "smoothed flat field must be strictly positive",
        ));
    }
    let (cx, cy) = center_pixel(w, h);
    let center: Vec<f64> = (0..ch).map(|c| smooth[(cy * w + cx) * ch + c]).collect();
    let data = smooth
        .iter()
        .enumerate()
        .map(|(i, &s)| (center[i % ch] / s) as f32)
        .collect();
    RadianceImage::new(w, h, ch, data)
}

/// Lux readings: four directions (front, rear, left, right), three repeats each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LuxMeasurement {
    readings: Vec<f64>,
    pub location_tag: String,
}

impl LuxMeasurement {
    pub const DIRECTIONS: usize = 4;
    pub const REPEATS: usize = 3;

    pub fn new(readings: Vec<f64>, location_tag: impl Into<String>) -> Result<Self> {
        let expected = Self::DIRECTIONS * Self::REPEATS;
        if readings.len() != expected {
            return Err(Error::validation(
                "readings",
                format!("expected {expected} readings (4 directions x 3 repeats), got {}", readings.len()),
            ));
        }
        if let Some(i) = readings.iter().position(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::validation(format!("readings[{i}]"), "lux must be finite and >= 0"));
        }
        Ok(Self {
            readings,
            location_tag: location_tag.into(),
        })
    }

    pub fn readings(&self) -> &[f64] {
        &self.readings
    }
}

pub fn average_lux(m: &LuxMeasurement) -> f64 {
    m.readings.iter().sum::<f64>() / m.readings.len() as f64
}

/// Mean linear RGB of each patch of a chart capture that fills the frame as a
/// `rows x cols` grid; only the central half of each cell is sampled.
pub fn sample_chart(img: &RadianceImage, rows: usize, cols: usize) -> Result<Vec<[f64; 3]>> {
    img.require_rgb()?;
    if rows == 0 || cols == 0 || img.width() < cols * 4 || img.height() < rows * 4 {
        return Err(Error::invalid(format!(
            "{}x{} capture too small for a {rows}x{cols} chart",
            img.width(),
            img.height()
        )));
    }
    let mut patches = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (x0, x1) = (c * img.width() / cols, (c + 1) * img.width() / cols);
            let (y0, y1) = (r * img.height() / rows, (r + 1) * img.height() / rows);
            let (qx, qy) = ((x1 - x0) / 4, (y1 - y0) / 4);
            let mut sum = [0f64; 3];
            let mut n = 0usize;
            for y in y0 + qy..y1 - qy {
                for x in x0 + qx..x1 - qx {
                    for (s, v) in sum.iter_mut().zip(img.pixel(x, y)) {
                        *s += *v as f64;
                    }
                    n += 1;
                }
            }
            patches.push(sum.map(|s| s / n as f64));
        }
    }
    Ok(patches)
}

/// Inputs to a full profile fit.
#[derive(Debug, Clone)]
pub struct ChartCapture {
    /// Measured linear RGB per patch, in the same order as `reference`.
    pub measured: Vec<[f64; 3]>,
    pub reference: Vec<[f64; 3]>,
    /// Indices of neutral patches used for white balance and exposure.
    pub neutrals: Vec<usize>,
}

impl ChartCapture {
    /// Measurements of the built-in 24-patch chart.
    pub fn with_reference_chart(measured: Vec<[f64; 3]>) -> Self {
        Self {
            measured,
            reference: reference_chart(),
            neutrals: CHART_NEUTRALS.collect(),
        }
    }
}

/// Fits white balance from the neutrals, then an exposure scalar matching
/// neutral luminance to the reference, then the color matrix on the balanced
/// and exposed patches.
pub fn fit_profile(
    chart: &ChartCapture,
    flat_field: Option<&RadianceImage>,
    smoothing_radius: usize,
    transfer: Transfer,
) -> Result<CalibrationProfile> {
    if chart.neutrals.is_empty() {
        return Err(Error::invalid("chart capture lists no neutral patches"));
    }
    let pick = |set: &[[f64; 3]], i: usize| {
        set.get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("neutral index {i} out of range")))
    };
    let gray: Vec<[f64; 3]> = chart.neutrals.iter().map(|&i| pick(&chart.measured, i)).collect::<Result<_>>()?;
    let wb_gains = fit_white_balance(&gray)?;

    let luma = |p: [f64; 3]| LUMA_WEIGHTS.iter().zip(p).map(|(w, v)| w * v).sum::<f64>();
    let mut measured_luma = 0.0;
    let mut reference_luma = 0.0;
    for &i in &chart.neutrals {
        let m = pick(&chart.measured, i)?;
        measured_luma += luma([m[0] * wb_gains[0], m[1], m[2] * wb_gains[2]]);
        reference_luma += luma(pick(&chart.reference, i)?);
    }
    if !(measured_luma > 0.0 && reference_luma > 0.0) {
        return Err(Error::validation("neutrals", "neutral patches must have positive luminance"));
    }
    let exposure = reference_luma / measured_luma;

    let balanced: Vec<[f64; 3]> = chart
        .measured
        .iter()
        .map(|m| std::array::from_fn(|c| m[c] * wb_gains[c] * exposure))
        .collect();
    let ccm = fit_ccm(&balanced, &chart.reference)?;
    let shading_map = flat_field.map(|f| fit_shading_map(f, smoothing_radius)).transpose()?;

    let profile = CalibrationProfile {
        ccm,
        wb_gains,
        shading_map,
        transfer,
        exposure,
    };
    profile.validate()?;
    Ok(profile)
}

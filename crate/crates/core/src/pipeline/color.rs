//! Per-pixel linear stages and the display transfer curve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{clamp_radiance, LdrImage, RadianceImage};

/// Row-major 3x3 color matrix, applied as `out = M · rgb`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColorMatrix(pub [[f64; 3]; 3]);

impl ColorMatrix {
    pub const IDENTITY: ColorMatrix = ColorMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn apply(&self, rgb: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * rgb[0] + m[0][1] * rgb[1] + m[0][2] * rgb[2],
            m[1][0] * rgb[0] + m[1][1] * rgb[1] + m[1][2] * rgb[2],
            m[2][0] * rgb[0] + m[2][1] * rgb[1] + m[2][2] * rgb[2],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Frobenius norm of `self - other`.
    pub fn frobenius_distance(&self, other: &ColorMatrix) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().flatten().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn inverse(&self) -> Option<ColorMatrix> {
        let m = nalgebra::Matrix3::from_fn(|r, c| self.0[r][c]);
        let inv = m.try_inverse()?;
        Some(ColorMatrix(std::array::from_fn(|r| std::array::from_fn(|c| inv[(r, c)]))))
    }
}

impl Default for ColorMatrix {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Multiplies each pixel by the gain map. A single-channel map scales all
/// channels; otherwise the map must match the image channel count.
pub fn lens_shading_correct(img: &RadianceImage, map: &RadianceImage) -> Result<RadianceImage> {
    if map.width() != img.width() || map.height() != img.height() {
        return Err(Error::dims(
            format!("{}x{} gain map", img.width(), img.height()),
            format!("{}x{}", map.width(), map.height()),
        ));
    }
    if map.channels() != 1 && map.channels() != img.channels() {
        return Err(Error::dims(
            format!("1 or {} gain channels", img.channels()),
            format!("{}", map.channels()),
        ));
    }
    if let Some(g) = map.data().iter().find(|&&g| g <= 0.0) {
        return Err(Error::invalid(format!("shading gains must be > 0, found {g}")));
    }
    let ch = img.channels();
    let data = if map.channels() == 1 {
        img.data()
            .chunks_exact(ch)
            .zip(map.data())
            .flat_map(|(px, &g)| px.iter().map(move |&v| v * g))
            .collect()
    } else {
        img.data().iter().zip(map.data()).map(|(&v, &g)| v * g).collect()
    };
    RadianceImage::from_clamped(img.width(), img.height(), ch, data)
}

fn scale_channels(img: &RadianceImage, gains: [f32; 3]) -> RadianceImage {
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|p| [p[0] * gains[0], p[1] * gains[1], p[2] * gains[2]])
        .map(clamp_radiance)
        .collect();
    RadianceImage::from_parts_unchecked(img.width(), img.height(), 3, data)
}

pub fn white_balance(img: &RadianceImage, gains: [f64; 3]) -> Result<RadianceImage> {
    img.require_rgb()?;
    if gains.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
        return Err(Error::invalid(format!("white balance gains must be > 0, got {gains:?}")));
    }
    Ok(scale_channels(img, gains.map(|g| g as f32)))
}

/// Per-channel multipliers that may be zero (creative grading, not calibration).
pub(crate) fn channel_gains(img: &RadianceImage, gains: [f64; 3]) -> Result<RadianceImage> {
    img.require_rgb()?;
    if gains.iter().any(|&g| !(g >= 0.0 && g.is_finite())) {
        return Err(Error::invalid(format!("channel gains must be >= 0, got {gains:?}")));
    }
    Ok(scale_channels(img, gains.map(|g| g as f32)))
}

/// Multiplies every sample by a linear exposure factor.
pub fn apply_exposure(img: &RadianceImage, factor: f64) -> Result<RadianceImage> {
    if !(factor >= 0.0 && factor.is_finite()) {
        return Err(Error::invalid(format!("exposure factor must be finite and >= 0, got {factor}")));
    }
    let f = factor as f32;
    Ok(img.map(|v| v * f))
}

/// Left-multiplies every RGB vector by `ccm`; negative results clamp to 0.
pub fn color_correct(img: &RadianceImage, ccm: &ColorMatrix) -> Result<RadianceImage> {
    img.require_rgb()?;
    if !ccm.is_finite() {
        return Err(Error::invalid("color matrix has non-finite entries"));
    }
    let m = ccm.0.map(|row| row.map(|v| v as f32));
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|p| {
            [
                m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
                m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
                m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
            ]
        })
        .map(clamp_radiance)
        .collect();
    Ok(RadianceImage::from_parts_unchecked(img.width(), img.height(), 3, data))
}

/// Display transfer curve used for 8-bit encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Transfer {
    /// Piecewise sRGB curve.
    #[default]
    Srgb,
    /// Pure power law `v^(1/gamma)`.
    Power { gamma: f64 },
    /// No curve: linear values quantized directly.
    Linear,
}

impl Transfer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Transfer::Power { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(Error::invalid(format!("gamma must be > 0, got {gamma}")))
            }
            _ => Ok(()),
        }
    }

    /// Linear [0, 1] to encoded [0, 1]; input is clipped first.
    pub fn encode(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        match *self {
            Transfer::Srgb => {
                if v <= 0.003_130_8 {
                    12.92 * v
                } else {
                    1.055 * v.powf(1.0 / 2.4) - 0.055
                }
            }
            Transfer::Power { gamma } => v.powf(1.0 / gamma),
            Transfer::Linear => v,
        }
    }

    /// Encoded [0, 1] back to linear.
    pub fn decode(&self, e: f64) -> f64 {
        let e = e.clamp(0.0, 1.0);
        match *self {
            Transfer::Srgb => {
                if e <= 0.040_45 {
                    e / 12.92
                } else {
                    ((e + 0.055) / 1.055).powf(2.4)
                }
            }
            Transfer::Power { gamma } => e.powf(gamma),
            Transfer::Linear => e,
        }
    }

    /// Encodes and quantizes to 8 bits, rounding half up.
    #[inline]
    pub fn encode_u8(&self, v: f32) -> u8 {
        (self.encode(v as f64) * 255.0 + 0.5).floor().min(255.0) as u8
    }

    pub fn decode_u8(&self, code: u8) -> f32 {
        self.decode(code as f64 / 255.0) as f32
    }
}

/// sRGB-encodes a linear RGB image to 8 bits.
pub fn gamma_encode(img: &RadianceImage) -> Result<LdrImage> {
    encode_ldr(img, Transfer::Srgb)
}

pub fn encode_ldr(img: &RadianceImage, transfer: Transfer) -> Result<LdrImage> {
    img.require_rgb()?;
    transfer.validate()?;
    let lut = EncodeLut::new(transfer);
    let data = img.data().iter().map(|&v| lut.encode(v)).collect();
    LdrImage::new(img.width(), img.height(), data)
}

/// Decodes an 8-bit image back to linear radiance with the exact inverse curve.
pub fn decode_ldr(img: &LdrImage, transfer: Transfer) -> Result<RadianceImage> {
    transfer.validate()?;
    let table: Vec<f32> = (0..=255u8).map(|c| transfer.decode_u8(c)).collect();
    let data = img.data().iter().map(|&c| table[c as usize]).collect();
    RadianceImage::new(img.width(), img.height(), 3, data)
}

/// Exact 8-bit quantizer: code `c` covers linear values in
/// `[threshold[c-1], threshold[c])`, with thresholds found by bisection on the
/// transfer curve. Gives the same answer as [`Transfer::encode_u8`] at a
/// fraction of the cost.
struct EncodeLut {
    transfer: Transfer,
    thresholds: [f32; 255],
}

impl EncodeLut {
    fn new(transfer: Transfer) -> Self {
        let mut thresholds = [0f32; 255];
        for (c, t) in thresholds.iter_mut().enumerate() {
            let above = |bits: u32| transfer.encode_u8(f32::from_bits(bits)) > c as u8;
            // bisect over bit patterns, which order like the values for v >= 0
            let (mut lo, mut hi) = (0u32, 1f32.to_bits());
            if above(lo) {
                *t = 0.0;
                continue;
            }
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if above(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            *t = f32::from_bits(hi);
        }
        Self { transfer, thresholds }
    }

    #[inline]
    fn encode(&self, v: f32) -> u8 {
        if !(v > 0.0) {
            return self.transfer.encode_u8(0.0);
        }
        self.thresholds.partition_point(|&t| t <= v) as u8
    }
}

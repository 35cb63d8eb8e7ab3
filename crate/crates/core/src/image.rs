//! Pixel buffers and luminance primitives.
//!
//! [`RadianceImage`] holds linear relative radiance: values are proportional
//! to scene radiance, finite and non-negative, so sums and scalings of images
//! correspond to sums and scalings of the illumination that produced them.
//! [`LdrImage`] is the 8-bit display encoding and is never used for light
//! arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rec. 709 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// Linear floating-point image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl RadianceImage {
    /// Builds an image, rejecting negative or non-finite samples.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_shape(width, height, channels, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation(
                format!("data[{i}]"),
                format!("radiance must be finite and >= 0, got {}", data[i]),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image, clamping negatives (and NaN) to zero.
    pub fn from_clamped(width: usize, height: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        check_shape(width, height, channels, data.len())?;
        for v in &mut data {
            *v = clamp_radiance(*v);
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::filled(width, height, channels, 0.0)
    }

    /// Evaluates `f(x, y, channel)` at every sample; results are clamped to be non-negative.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::from_clamped(width, height, channels, data)
    }

    // Internal constructor for buffers already known to satisfy the invariants.
    pub(crate) fn from_parts_unchecked(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &RadianceImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    pub(crate) fn require_shape(&self, other: &RadianceImage) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dims(self.shape_string(), other.shape_string()))
        }
    }

    pub(crate) fn require_rgb(&self) -> Result<()> {
        if self.channels == 3 {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "operation needs a 3-channel image, got {} channel(s)",
                self.channels
            )))
        }
    }

    /// Applies `f` to every sample, clamping the result to the radiance domain.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> RadianceImage {
        let data = self.data.iter().map(|&v| clamp_radiance(f(v))).collect();
        Self::from_parts_unchecked(self.width, self.height, self.channels, data)
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }
}

#[inline]
pub(crate) fn clamp_radiance(v: f32) -> f32 {
    // NaN fails the comparison and maps to zero as well.
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn check_shape(width: usize, height: usize, channels: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("empty image {width}x{height}")));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::invalid(format!("channels must be 1 or 3, got {channels}")));
    }
    let expected = width * height * channels;
    if len != expected {
        return Err(Error::dims(
            format!("{expected} samples ({width}x{height}x{channels})"),
            format!("{len} samples"),
        ));
    }
    Ok(())
}

/// 8-bit gamma-encoded RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LdrImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LdrImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_shape(width, height, 3, data.len())?;
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Which measurement domain a luminance value or histogram lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    LinearRadiance,
    #[serde(rename = "encoded-8bit")]
    Encoded8Bit,
}

/// Single-channel image tagged with its domain.
#[derive(Debug, Clone, PartialEq)]
pub struct LumaImage {
    pub width: usize,
    pub height: usize,
    pub domain: Domain,
    pub data: Vec<f32>,
}

impl LumaImage {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

impl TryFrom<&RadianceImage> for LumaImage {
    type Error = Error;

    /// Wraps a single-channel radiance image.
    fn try_from(img: &RadianceImage) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::invalid("expected a single-channel image"));
        }
        Ok(LumaImage {
            width: img.width(),
            height: img.height(),
            domain: Domain::LinearRadiance,
            data: img.data().to_vec(),
        })
    }
}

#[inline]
fn luma(r: f64, g: f64, b: f64) -> f32 {
    // f64 accumulation makes equal-channel pixels round back to the exact input.
    (LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b) as f32
}

/// Per-pixel Rec. 709 luminance, evaluated in the image's own domain.
pub trait Luminance {
    fn luminance(&self) -> Result<LumaImage>;
}

impl Luminance for RadianceImage {
    fn luminance(&self) -> Result<LumaImage> {
        self.require_rgb()?;
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| luma(p[0] as f64, p[1] as f64, p[2] as f64))
            .collect();
        Ok(LumaImage {
            width: self.width,
            height: self.height,
            domain: Domain::LinearRadiance,
            data,
        })
    }
}

impl Luminance for LdrImage {
    fn luminance(&self) -> Result<LumaImage> {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| luma(p[0] as f64, p[1] as f64, p[2] as f64))
            .collect();
        Ok(LumaImage {
            width: self.width,
            height: self.height,
            domain: Domain::Encoded8Bit,
            data,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LuminanceHistogram {
    pub bin_count: usize,
    pub range: [f64; 2],
    pub counts: Vec<u64>,
    pub domain: Domain,
}

impl LuminanceHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts divided by the total; all zeros for an empty histogram.
    pub fn normalized(&self) -> Vec<f64> {
        let total = self.total();
        if total == 0 {
            return vec![0.0; self.bin_count];
        }
        self.counts.iter().map(|&c| c as f64 / total as f64).collect()
    }
}

/// Bins every pixel; out-of-range values are clamped into the edge bins.
pub fn histogram(img: &LumaImage, bins: usize, range: [f64; 2]) -> Result<LuminanceHistogram> {
    let [lo, hi] = range;
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("histogram range [{lo}, {hi}] is empty")));
    }
    if img.is_empty() {
        return Err(Error::invalid("cannot histogram an empty image"));
    }
    let mut counts = vec![0u64; bins];
    let scale = bins as f64 / (hi - lo);
    let last = (bins - 1) as f64;
    for &p in &img.data {
        let pos = ((p as f64 - lo) * scale).floor();
        // NaN maps to bin 0 through the clamp
        let bin = if pos >= 0.0 { pos.min(last) } else { 0.0 };
        counts[bin as usize] += 1;
    }
    Ok(LuminanceHistogram {
        bin_count: bins,
        range,
        counts,
        domain: img.domain,
    })
}

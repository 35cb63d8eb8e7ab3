//! RAW16 frames, their PNG + sidecar container, and decoding to linear RGB.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RadianceImage;
use crate::io::{self, Png16};

/// Color filter array layout, named by the 2x2 tile read row by row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Cfa {
    #[default]
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
    /// Already demosaiced: interleaved RGB triplets.
    NoneRgb,
}

impl Cfa {
    pub fn as_str(self) -> &'static str {
        match self {
            Cfa::Rggb => "RGGB",
            Cfa::Bggr => "BGGR",
            Cfa::Grbg => "GRBG",
            Cfa::Gbrg => "GBRG",
            Cfa::NoneRgb => "NONE-RGB",
        }
    }

    pub fn is_mosaic(self) -> bool {
        self != Cfa::NoneRgb
    }

    /// Channel index (0 = R, 1 = G, 2 = B) sampled at `(x, y)`.
    #[inline]
    pub fn channel_at(self, x: usize, y: usize) -> usize {
        let tile = match self {
            Cfa::Rggb => [0, 1, 1, 2],
            Cfa::Bggr => [2, 1, 1, 0],
            Cfa::Grbg => [1, 0, 2, 1],
            Cfa::Gbrg => [1, 2, 0, 1],
            Cfa::NoneRgb => panic!("NONE-RGB frames have no mosaic"),
        };
        tile[(y & 1) * 2 + (x & 1)]
    }
}

impl FromStr for Cfa {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "RGGB" => Cfa::Rggb,
            "BGGR" => Cfa::Bggr,
            "GRBG" => Cfa::Grbg,
            "GBRG" => Cfa::Gbrg,
            "NONE-RGB" => Cfa::NoneRgb,
            other => return Err(Error::UnknownCfa(other.to_string())),
        })
    }
}

impl fmt::Display for Cfa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Cfa {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Cfa {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// 16-bit sensor frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub width: usize,
    pub height: usize,
    pub cfa: Cfa,
    pub black_level: u16,
    pub white_level: u16,
    pub data: Vec<u16>,
}

impl RawFrame {
    pub const BIT_DEPTH: u32 = 16;

    pub fn new(width: usize, height: usize, cfa: Cfa, black_level: u16, white_level: u16, data: Vec<u16>) -> Result<Self> {
        let frame = Self {
            width,
            height,
            cfa,
            black_level,
            white_level,
            data,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn samples_per_pixel(&self) -> usize {
        if self.cfa.is_mosaic() {
            1
        } else {
            3
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!("empty raw frame {}x{}", self.width, self.height)));
        }
        if self.black_level >= self.white_level {
            return Err(Error::validation(
                "black_level",
                format!("black level {} must be below white level {}", self.black_level, self.white_level),
            ));
        }
        let expected = self.width * self.height * self.samples_per_pixel();
        if self.data.len() != expected {
            return Err(Error::dims(format!("{expected} raw samples"), format!("{}", self.data.len())));
        }
        Ok(())
    }

    pub fn sidecar(&self) -> RawSidecar {
        RawSidecar {
            width: self.width,
            height: self.height,
            cfa: self.cfa.to_string(),
            black_level: self.black_level,
            white_level: self.white_level,
        }
    }
}

/// The `*.raw.json` description stored next to a RAW16 PNG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub width: usize,
    pub height: usize,
    pub cfa: String,
    pub black_level: u16,
    pub white_level: u16,
}

/// `frame.png` -> `frame.raw.json`.
pub fn sidecar_path(png_path: &Path) -> PathBuf {
    png_path.with_extension("raw.json")
}

pub fn write_raw_container(png_path: &Path, raw: &RawFrame) -> Result<()> {
    raw.validate()?;
    io::write_png16(
        png_path,
        &Png16 {
            width: raw.width,
            height: raw.height,
            channels: raw.samples_per_pixel(),
            data: raw.data.clone(),
        },
    )?;
    let json = serde_json::to_vec_pretty(&raw.sidecar()).expect("sidecar serializes");
    io::atomic_write(&sidecar_path(png_path), &json)
}

pub fn read_raw_container(png_path: &Path) -> Result<RawFrame> {
    let side_path = sidecar_path(png_path);
    let side_bytes = io::read_bytes(&side_path)?;
    let de = &mut serde_json::Deserializer::from_slice(&side_bytes);
    let side: RawSidecar = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::validation(format!("{}:{}", side_path.display(), e.path()), e.inner().to_string()))?;
    let cfa: Cfa = side.cfa.parse()?;
    let png = io::read_png16(png_path)?;
    let expected_channels = if cfa.is_mosaic() { 1 } else { 3 };
    if png.width != side.width || png.height != side.height || png.channels != expected_channels {
        return Err(Error::dims(
            format!("{}x{}x{} per sidecar", side.width, side.height, expected_channels),
            format!("{}x{}x{} in {}", png.width, png.height, png.channels, png_path.display()),
        ));
    }
    RawFrame::new(side.width, side.height, cfa, side.black_level, side.white_level, png.data)
}

/// Normalizes sensor counts to [0, 1] relative radiance, without demosaicing.
/// Mosaiced frames come back single-channel.
pub fn normalize_raw(raw: &RawFrame) -> Result<RadianceImage> {
    raw.validate()?;
    let black = raw.black_level as f32;
    let inv_range = 1.0 / (raw.white_level as f32 - black);
    let data = raw
        .data
        .iter()
        .map(|&v| ((v as f32 - black) * inv_range).max(0.0))
        .collect();
    Ok(RadianceImage::from_parts_unchecked(
        raw.width,
        raw.height,
        raw.samples_per_pixel(),
        data,
    ))
}

/// Decodes a RAW16 frame to linear RGB (normalize, then bilinear demosaic).
pub fn decode_raw(raw: &RawFrame) -> Result<RadianceImage> {
    let normalized = normalize_raw(raw)?;
    if raw.cfa.is_mosaic() {
        Ok(demosaic_bilinear(&normalized, raw.cfa))
    } else {
        Ok(normalized)
    }
}

/// Bilinear demosaic of a normalized single-channel mosaic.
///
/// Missing samples are the mean of same-color sites among the four edge
/// neighbors, falling back to the four diagonal neighbors (red at blue sites
/// and vice versa). Neighbors outside the frame are skipped.
pub fn demosaic_bilinear(mosaic: &RadianceImage, cfa: Cfa) -> RadianceImage {
    assert_eq!(mosaic.channels(), 1, "demosaic expects a single-channel mosaic");
    assert!(cfa.is_mosaic());
    let (w, h) = (mosaic.width(), mosaic.height());
    let src = mosaic.data();
    let mut out = vec![0f32; w * h * 3];

    const EDGE: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
    const DIAG: [(isize, isize); 4] = [(-1, -1), (1, -1), (-1, 1), (1, 1)];

    let average = |x: usize, y: usize, ch: usize, offsets: &[(isize, isize); 4]| -> Option<f32> {
        let mut sum = 0f32;
        let mut n = 0u32;
        for &(dx, dy) in offsets {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if cfa.channel_at(nx, ny) == ch {
                sum += src[ny * w + nx];
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f32)
    };

    for y in 0..h {
        for x in 0..w {
            let here = cfa.channel_at(x, y);
            let o = (y * w + x) * 3;
            for ch in 0..3 {
                out[o + ch] = if ch == here {
                    src[y * w + x]
                } else {
                    average(x, y, ch, &EDGE)
                        .or_else(|| average(x, y, ch, &DIAG))
                        .unwrap_or(0.0)
                };
            }
        }
    }
    RadianceImage::from_parts_unchecked(w, h, 3, out)
}

/// Samples a linear RGB image through the CFA, quantizing to sensor counts.
/// Inverse of [`decode_raw`] up to quantization and demosaic interpolation.
pub fn mosaic_from_rgb(img: &RadianceImage, cfa: Cfa, black_level: u16, white_level: u16) -> Result<RawFrame> {
    img.require_rgb()?;
    let (w, h) = (img.width(), img.height());
    let range = white_level as f64 - black_level as f64;
    let quantize = |v: f32| -> u16 {
        let counts = black_level as f64 + v as f64 * range;
        (counts + 0.5).floor().clamp(0.0, u16::MAX as f64) as u16
    };
    let data = if cfa.is_mosaic() {
        let mut d = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                d.push(quantize(img.pixel(x, y)[cfa.channel_at(x, y)]));
            }
        }
        d
    } else {
        img.data().iter().map(|&v| quantize(v)).collect()
    };
    RawFrame::new(w, h, cfa, black_level, white_level, data)
}

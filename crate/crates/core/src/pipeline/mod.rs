//! RAW16 to 8-bit processing pipeline.
//!
//! Stages run in a fixed order:
//!
//! ```text
//! decode -> denoise -> lens shading -> white balance -> exposure -> CCM -> encode
//! ```
//!
//! Decode and exposure always run. Every other stage can be switched off, in
//! which case it is the identity; switching off the encode stage quantizes
//! linear values directly instead of applying the transfer curve. No stage
//! changes the image dimensions.

mod bilateral;
mod color;
mod raw;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationProfile;
use crate::error::Result;
use crate::image::{LdrImage, RadianceImage};

pub use bilateral::{bilateral_denoise, BilateralParams};
pub use color::{
    apply_exposure, color_correct, decode_ldr, encode_ldr, gamma_encode, lens_shading_correct, white_balance,
    ColorMatrix, Transfer,
};
pub(crate) use color::channel_gains;
pub use raw::{
    decode_raw, demosaic_bilinear, mosaic_from_rgb, normalize_raw, read_raw_container, sidecar_path,
    write_raw_container, Cfa, RawFrame, RawSidecar,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageFlags {
    pub denoise: bool,
    pub shading: bool,
    pub white_balance: bool,
    pub color_correct: bool,
    pub gamma_encode: bool,
}

impl Default for StageFlags {
    fn default() -> Self {
        Self::all()
    }
}

impl StageFlags {
    pub fn all() -> Self {
        Self {
            denoise: true,
            shading: true,
            white_balance: true,
            color_correct: true,
            gamma_encode: true,
        }
    }

    pub fn none() -> Self {
        Self {
            denoise: false,
            shading: false,
            white_balance: false,
            color_correct: false,
            gamma_encode: false,
        }
    }

    /// Disables a stage by name; returns false for unknown names.
    pub fn disable(&mut self, stage: &str) -> bool {
        match stage {
            "denoise" => self.denoise = false,
            "shading" => self.shading = false,
            "white_balance" | "white-balance" => self.white_balance = false,
            "color_correct" | "color-correct" => self.color_correct = false,
            "gamma_encode" | "gamma-encode" | "gamma" => self.gamma_encode = false,
            _ => return false,
        }
        true
    }

    pub const NAMES: [&'static str; 5] = ["denoise", "shading", "white_balance", "color_correct", "gamma_encode"];
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub stages: StageFlags,
    pub bilateral: BilateralParams,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.bilateral.validate()
    }
}

/// Runs every linear stage on an already-decoded image, stopping before the
/// 8-bit encode.
pub fn process_linear(img: &RadianceImage, cal: &CalibrationProfile, cfg: &PipelineConfig) -> Result<RadianceImage> {
    cfg.validate()?;
    cal.validate()?;
    img.require_rgb()?;
    let s = &cfg.stages;
    let mut cur = if s.denoise {
        bilateral_denoise(img, &cfg.bilateral)?
    } else {
        img.clone()
    };
    if s.shading {
        if let Some(map) = &cal.shading_map {
            cur = lens_shading_correct(&cur, map)?;
        }
    }
    if s.white_balance {
        cur = white_balance(&cur, cal.wb_gains)?;
    }
    if cal.exposure != 1.0 {
        cur = apply_exposure(&cur, cal.exposure)?;
    }
    if s.color_correct {
        cur = color_correct(&cur, &cal.ccm)?;
    }
    Ok(cur)
}

/// Encodes the output of [`process_linear`] with the profile's transfer curve
/// (or linear quantization when the encode stage is off).
pub fn encode_output(img: &RadianceImage, cal: &CalibrationProfile, cfg: &PipelineConfig) -> Result<LdrImage> {
    let transfer = if cfg.stages.gamma_encode {
        cal.transfer
    } else {
        Transfer::Linear
    };
    encode_ldr(img, transfer)
}

/// Full pipeline for an HDR frame that is already demosaiced (for example a
/// synthesized one).
pub fn process_hdr(img: &RadianceImage, cal: &CalibrationProfile, cfg: &PipelineConfig) -> Result<LdrImage> {
    encode_output(&process_linear(img, cal, cfg)?, cal, cfg)
}

pub fn process_frame(raw: &RawFrame, cal: &CalibrationProfile, cfg: &PipelineConfig) -> Result<LdrImage> {
    process_hdr(&decode_raw(raw)?, cal, cfg)
}

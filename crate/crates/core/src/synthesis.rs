//! Materializes synthesis jobs on disk.
//!
//! Each synthetic episode directory gets its interpolated color frames, the
//! copied lighting-independent streams, its manifest, and finally a
//! `checksums.json` listing the SHA-256 of every file. An episode whose
//! checksums all verify is complete and is skipped on resume.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::dataset::{canonical_json, parse_json, verify_sync, write_manifest, EpisodeManifest, StorageFormat};
use crate::error::{Error, Result};
use crate::image::RadianceImage;
use crate::io::{atomic_write, read_bytes, read_pfm, write_pfm};
use crate::pipeline::{read_raw_container, sidecar_path, write_raw_container, RawFrame};
use crate::relight::{interpolate_frame, GridPlan};

pub const CHECKSUM_FILE: &str = "checksums.json";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    pub sync_tolerance_ms: f64,
    /// Skip episodes whose checksums already verify.
    pub resume: bool,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            sync_tolerance_ms: crate::dataset::DEFAULT_SYNC_TOLERANCE_MS,
            resume: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobOutcome {
    Written,
    Skipped,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// True when `dir/checksums.json` exists and every listed file matches.
pub fn episode_complete(dir: &Path) -> bool {
    let Ok(bytes) = fs::read(dir.join(CHECKSUM_FILE)) else {
        return false;
    };
    let Ok(sums) = parse_json::<BTreeMap<String, String>>(&bytes) else {
        return false;
    };
    !sums.is_empty()
        && sums
            .iter()
            .all(|(rel, sum)| fs::read(dir.join(rel)).is_ok_and(|b| &sha256_hex(&b) == sum))
}

/// Writes the checksum file covering `files` (relative to `dir`).
pub fn write_checksums(dir: &Path, files: &[String]) -> Result<()> {
    let mut sums = BTreeMap::new();
    for rel in files {
        sums.insert(rel.clone(), sha256_hex(&read_bytes(&dir.join(rel))?));
    }
    atomic_write(&dir.join(CHECKSUM_FILE), canonical_json(&sums)?.as_bytes())
}

/// Runs job `i` of `plan`. `manifest_paths[k]` is where `manifests[k]` was read.
pub fn run_job(
    plan: &GridPlan,
    i: usize,
    manifests: &[EpisodeManifest],
    manifest_paths: &[PathBuf],
    opts: &SynthesisOptions,
) -> Result<JobOutcome> {
    let job = &plan.jobs[i];
    let out_dir = job
        .output_path
        .parent()
        .ok_or_else(|| Error::invalid("job output path has no parent"))?;
    if opts.resume && episode_complete(out_dir) {
        return Ok(JobOutcome::Skipped);
    }
    let (ia, ib) = plan.parent_indices(i);
    let (a, b) = (&manifests[ia], &manifests[ib]);
    let dir_of = |k: usize| manifest_paths[k].parent().map(Path::to_path_buf).unwrap_or_default();
    let out = plan.manifest(i, manifests);
    synthesize_episode(a, &dir_of(ia), b, &dir_of(ib), job.lambda, &out, out_dir, opts.sync_tolerance_ms)?;
    Ok(JobOutcome::Written)
}

/// Writes the episode `λ·a + (1−λ)·b` described by `out` into `out_dir`.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_episode(
    a: &EpisodeManifest,
    a_dir: &Path,
    b: &EpisodeManifest,
    b_dir: &Path,
    lambda: f64,
    out: &EpisodeManifest,
    out_dir: &Path,
    sync_tolerance_ms: f64,
) -> Result<()> {
    let report = verify_sync(&[a.clone(), b.clone()], sync_tolerance_ms)?;
    if !report.pass {
        let worst = report.max_offset_ms.values().copied().fold(0.0, f64::max);
        return Err(Error::Unsynchronized(format!(
            "{} and {} are {worst} ms apart (tolerance {sync_tolerance_ms} ms)",
            a.episode_id, b.episode_id
        )));
    }
    let mut written = Vec::new();
    for stream in &a.streams {
        let frames = a.frame_count(&stream.name);
        if !stream.is_color_image() {
            for t in 0..if stream.is_image() { frames } else { 1 } {
                let rel = stream.frame_path(t);
                copy_file(&a_dir.join(&rel), &out_dir.join(&rel))?;
                written.push(rel.clone());
                let side = sidecar_path(Path::new(&rel));
                if a_dir.join(&side).is_file() {
                    copy_file(&a_dir.join(&side), &out_dir.join(&side))?;
                    written.push(side.to_string_lossy().into_owned());
                }
            }
            continue;
        }
        let other = b
            .stream(&stream.name)
            .filter(|s| s.dims == stream.dims && s.storage.format == stream.storage.format)
            .ok_or_else(|| Error::validation(format!("streams[{}]", stream.name), "parent streams differ"))?;
        for t in 0..frames {
            let rel = stream.frame_path(t);
            let (pa, pb, po) = (a_dir.join(&rel), b_dir.join(other.frame_path(t)), out_dir.join(&rel));
            match stream.storage.format {
                StorageFormat::Pfm => {
                    let frame = interpolate_frame(&read_pfm(&pa)?, &read_pfm(&pb)?, lambda)?;
                    check_shape(&frame, stream.image_shape(), &pa)?;
                    write_pfm(&po, &frame)?;
                }
                StorageFormat::Png16Raw => {
                    let raw = interpolate_raw(&read_raw_container(&pa)?, &read_raw_container(&pb)?, lambda)?;
                    write_raw_container(&po, &raw)?;
                    written.push(sidecar_path(Path::new(&rel)).to_string_lossy().into_owned());
                }
                StorageFormat::Png8 => {
                    return Err(Error::validation(
                        format!("streams[{}].storage.format", stream.name),
                        "8-bit encoded frames are not linear in light and cannot be interpolated",
                    ))
                }
                StorageFormat::Csv => unreachable!("color streams are images"),
            }
            written.push(rel);
        }
    }
    write_manifest(out, &out_dir.join(crate::dataset::MANIFEST_FILE))?;
    written.push(crate::dataset::MANIFEST_FILE.to_string());
    write_checksums(out_dir, &written)
}

fn check_shape(img: &RadianceImage, expected: Option<(usize, usize, usize)>, path: &Path) -> Result<()> {
    let actual = (img.width(), img.height(), img.channels());
    match expected {
        Some(e) if e != actual => Err(Error::dims(
            format!("{e:?} per manifest"),
            format!("{actual:?} in {}", path.display()),
        )),
        _ => Ok(()),
    }
}

fn copy_file(from: &Path, to: &Path) -> Result<()> {
    atomic_write(to, &read_bytes(from)?)
}

/// Blends sensor counts; valid because normalization is affine with the
/// same black and white levels on both sides.
pub fn interpolate_raw(a: &RawFrame, b: &RawFrame, lambda: f64) -> Result<RawFrame> {
    if (a.width, a.height, a.cfa, a.black_level, a.white_level) != (b.width, b.height, b.cfa, b.black_level, b.white_level) {
        return Err(Error::dims(
            format!("{}x{} {} [{}, {}]", a.width, a.height, a.cfa.as_str(), a.black_level, a.white_level),
            format!("{}x{} {} [{}, {}]", b.width, b.height, b.cfa.as_str(), b.black_level, b.white_level),
        ));
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let v = (lambda * x as f64 + (1.0 - lambda) * y as f64 + 0.5).floor();
            v.clamp(x.min(y) as f64, x.max(y) as f64) as u16
        })
        .collect();
    RawFrame::new(a.width, a.height, a.cfa, a.black_level, a.white_level, data)
}

/// Reads every frame of an HDR image stream of an episode.
pub fn read_hdr_stream(dir: &Path, m: &EpisodeManifest, stream: &str) -> Result<Vec<RadianceImage>> {
    let s = m
        .stream(stream)
        .ok_or_else(|| Error::invalid(format!("episode {} has no stream {stream:?}", m.episode_id)))?;
    (0..m.frame_count(stream))
        .map(|t| {
            let path = dir.join(s.frame_path(t));
            match s.storage.format {
                StorageFormat::Pfm => read_pfm(&path),
                StorageFormat::Png16Raw => crate::pipeline::decode_raw(&read_raw_container(&path)?),
                _ => Err(Error::invalid(format!("stream {stream:?} is not stored as HDR"))),
            }
        })
        .collect()
}

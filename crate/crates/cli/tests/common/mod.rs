#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relight_core::dataset::{Task, DatasetScale, EpisodeManifest, Placement, Provenance, StorageFormat, standard_streams};
use relight_core::oracle::{write_dataset_episode, EpisodeSpec, MovingPatch, OracleEpisode, random_scene};
use relight_core::relight::catalog_condition;

pub fn relight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relight"))
        .args(args)
        .env_remove("ROBOLIGHT_DATASET_ROOT")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", stdout(o)))
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("UTF-8 path")
}

/// An oracle episode of `frames` frames on a `w`×`h` grid with a moving patch.
pub fn oracle_episode(seed: u64, w: usize, h: usize, lights: usize, frames: usize) -> OracleEpisode {
    OracleEpisode {
        scene: random_scene(seed, w, h, lights),
        motion: Some(MovingPatch {
            albedo: [0.9, 0.9, 0.9],
            size: [w / 4 + 1, h / 4 + 1],
            start: [1.0, 1.0],
            velocity: [1.5, 0.75],
        }),
        frames,
        rate_hz: 30.0,
    }
}

/// Writes one mini real episode per `(label, trajectory)` for an RGBStacking
/// scene. Label `i` lights only lamp `i` of a two-lamp scene.
pub fn build_dataset(root: &Path, labels: &[&str], trajectories: usize, frames: usize, size: usize) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for t in 0..trajectories {
        let ep = oracle_episode(t as u64, size, size, 2, frames);
        for (i, label) in labels.iter().enumerate() {
            let mut weights = vec![0.0; 2];
            weights[i % 2] = 1.0;
            let trajectory_id = format!("traj-{t:04}");
            let spec = EpisodeSpec {
                task: Task::RgbStacking,
                lighting: catalog_condition(Task::RgbStacking, label).expect("catalog label"),
                episode_id: format!("{trajectory_id}__{label}"),
                trajectory_id,
                placements: Vec::new(),
            };
            out.push(write_dataset_episode(root, &spec, &ep, &weights).expect("episode written"));
        }
    }
    out
}

/// A full-scale real manifest with no frames on disk.
pub fn bare_manifest(task: Task, label: &str, trajectory: &str) -> EpisodeManifest {
    let streams = standard_streams(StorageFormat::Pfm);
    EpisodeManifest {
        episode_id: format!("{trajectory}__{label}"),
        task,
        trajectory_id: trajectory.into(),
        lighting: catalog_condition(task, label).expect("catalog label"),
        timestamps_ms: EpisodeManifest::regular_timestamps(&streams, 0.2),
        streams,
        placements: vec![Placement {
            role: "target".into(),
            position_mm: [400.0, 0.0, 0.0],
        }],
        provenance: Provenance::Real,
        scale: DatasetScale::Full,
        calibration_profile: None,
    }
}

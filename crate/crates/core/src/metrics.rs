//! Image fidelity metrics and roll-out statistics.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{parse_json, Task};
use crate::error::{Error, Result};
use crate::image::{LdrImage, LuminanceHistogram, RadianceImage};
use crate::io::read_bytes;

/// Images PSNR can compare, with their nominal peak.
pub trait PsnrImage {
    const PEAK: f64;
    fn shape(&self) -> (usize, usize, usize);
    fn squared_error(&self, other: &Self) -> f64;
}

impl PsnrImage for LdrImage {
    const PEAK: f64 = 255.0;

    fn shape(&self) -> (usize, usize, usize) {
        (self.width(), self.height(), 3)
    }

    fn squared_error(&self, other: &Self) -> f64 {
        self.data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum()
    }
}

impl PsnrImage for RadianceImage {
    const PEAK: f64 = 1.0;

    fn shape(&self) -> (usize, usize, usize) {
        (self.width(), self.height(), self.channels())
    }

    fn squared_error(&self, other: &Self) -> f64 {
        self.data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum()
    }
}

/// `10·log10(peak² / MSE)`; `f64::INFINITY` when the images are equal.
pub fn psnr<T: PsnrImage>(a: &T, b: &T) -> Result<f64> {
    psnr_with_peak(a, b, T::PEAK)
}

pub fn psnr_with_peak<T: PsnrImage>(a: &T, b: &T, peak: f64) -> Result<f64> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::dims(format!("{sa:?}"), format!("{sb:?}")));
    }
    if !(peak > 0.0) {
        return Err(Error::invalid("peak must be > 0"));
    }
    let n = (sa.0 * sa.1 * sa.2) as f64;
    let mse = a.squared_error(b) / n;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

/// `1 − Σ min(p1ᵢ, p2ᵢ)` over normalized histograms, in [0, 1].
pub fn histogram_distance(h1: &LuminanceHistogram, h2: &LuminanceHistogram) -> Result<f64> {
    if h1.bin_count != h2.bin_count || h1.range != h2.range || h1.domain != h2.domain {
        return Err(Error::dims(
            format!("{} bins over {:?} ({:?})", h1.bin_count, h1.range, h1.domain),
            format!("{} bins over {:?} ({:?})", h2.bin_count, h2.range, h2.domain),
        ));
    }
    if h1.counts.len() != h1.bin_count || h2.counts.len() != h2.bin_count {
        return Err(Error::invalid("histogram counts do not match bin_count"));
    }
    match (h1.total(), h2.total()) {
        (0, 0) => return Ok(0.0),
        (0, _) | (_, 0) => return Ok(1.0),
        _ => {}
    }
    let overlap: f64 = h1
        .normalized()
        .iter()
        .zip(h2.normalized())
        .map(|(p, q)| p.min(q))
        .sum();
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Roll-outs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOutcome {
    pub object: String,
    pub success: bool,
    /// Millimeters, robot-base frame, at gripper closure.
    pub predicted_position: [f64; 3],
    pub true_position: [f64; 3],
}

impl StageOutcome {
    pub fn error_mm(&self) -> f64 {
        (0..3)
            .map(|k| (self.predicted_position[k] - self.true_position[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutRecord {
    pub task: Task,
    pub lighting_label: String,
    pub stages: Vec<StageOutcome>,
}

impl RolloutRecord {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::validation("stages", "at least one stage is required"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.predicted_position.iter().chain(&s.true_position).any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("stages[{i}]"), "positions must be finite"));
            }
        }
        Ok(())
    }
}

/// Parses a JSON-lines roll-out log; blank lines are skipped.
pub fn parse_rollouts(text: &str) -> Result<Vec<RolloutRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RolloutRecord = parse_json(line.as_bytes()).map_err(|e| match e {
            Error::Validation { path, reason } => Error::validation(format!("line {}: {path}", n + 1), reason),
            other => other,
        })?;
        rec.validate()
            .map_err(|e| Error::validation(format!("line {}", n + 1), e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_rollouts(path: &Path) -> Result<Vec<RolloutRecord>> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format("JSONL", "log is not UTF-8"))?;
    parse_rollouts(&text)
}

/// Stage objects shared by every roll-out, in stage order.
fn stage_objects(rollouts: &[RolloutRecord]) -> Result<Vec<String>> {
    let first = rollouts.first().ok_or_else(|| Error::invalid("no roll-outs"))?;
    first.validate()?;
    let objects: Vec<String> = first.stages.iter().map(|s| s.object.clone()).collect();
    for (i, r) in rollouts.iter().enumerate().skip(1) {
        r.validate()?;
        if r.task != first.task {
            return Err(Error::validation(format!("rollouts[{i}].task"), "roll-outs mix tasks"));
        }
        if !r.stages.iter().map(|s| &s.object).eq(objects.iter()) {
            return Err(Error::validation(format!("rollouts[{i}].stages"), "stage structure differs"));
        }
    }
    Ok(objects)
}

fn per_object(rollouts: &[RolloutRecord], f: impl Fn(&StageOutcome) -> f64) -> Result<Vec<(String, f64)>> {
    let objects = stage_objects(rollouts)?;
    let n = rollouts.len() as f64;
    Ok(objects
        .into_iter()
        .enumerate()
        .map(|(k, obj)| (obj, rollouts.iter().map(|r| f(&r.stages[k])).sum::<f64>() / n))
        .collect())
}

/// Successes ÷ roll-outs for each stage object, in stage order.
pub fn stage_success_rates(rollouts: &[RolloutRecord]) -> Result<Vec<(String, f64)>> {
    per_object(rollouts, |s| if s.success { 1.0 } else { 0.0 })
}

/// Mean 3D Euclidean prediction error in mm for each stage object, over all
/// attempts.
pub fn prediction_error(rollouts: &[RolloutRecord]) -> Result<Vec<(String, f64)>> {
    per_object(rollouts, StageOutcome::error_mm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectStats {
    pub object: String,
    pub success_rate: f64,
    pub prediction_error_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: String,
    pub rollouts: usize,
    pub objects: Vec<ObjectStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub task: Task,
    /// Which attempts the prediction error averages over.
    pub prediction_error_over: String,
    pub rows: Vec<ConditionRow>,
}

/// Groups roll-outs by lighting label (in first-seen order) and computes
/// both statistics per group.
pub fn build_report(rollouts: &[RolloutRecord]) -> Result<RobustnessReport> {
    stage_objects(rollouts)?;
    let mut labels: Vec<&str> = Vec::new();
    for r in rollouts {
        if !labels.contains(&r.lighting_label.as_str()) {
            labels.push(&r.lighting_label);
        }
    }
    let rows = labels
        .into_iter()
        .map(|label| {
            let group: Vec<RolloutRecord> = rollouts.iter().filter(|r| r.lighting_label == label).cloned().collect();
            let sr = stage_success_rates(&group)?;
            let pe = prediction_error(&group)?;
            Ok(ConditionRow {
                condition: label.to_string(),
                rollouts: group.len(),
                objects: sr
                    .into_iter()
                    .zip(pe)
                    .map(|((object, success_rate), (_, prediction_error_mm))| ObjectStats {
                        object,
                        success_rate,
                        prediction_error_mm,
                    })
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(RobustnessReport {
        task: rollouts[0].task,
        prediction_error_over: "all-attempts".into(),
        rows,
    })
}

impl RobustnessReport {
    fn objects(&self) -> Vec<&str> {
        self.rows
            .first()
            .map(|r| r.objects.iter().map(|o| o.object.as_str()).collect())
            .unwrap_or_default()
    }

    /// Plain-text table: one row per condition, `S.R.` and `P.E.` per object.
    pub fn to_table(&self) -> String {
        let objects = self.objects();
        let mut header = vec!["Condition".to_string()];
        for o in &objects {
            header.push(format!("{o} S.R."));
            header.push(format!("{o} P.E."));
        }
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                std::iter::once(r.condition.clone())
                    .chain(
                        r.objects
                            .iter()
                            .flat_map(|o| [format!("{:.2}", o.success_rate), format!("{:.2}", o.prediction_error_mm)]),
                    )
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| body.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let line = |cells: &[String], out: &mut String| {
            let row: Vec<String> = cells.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            let _ = writeln!(out, "{}", row.join(" | ").trim_end());
        };
        line(&header, &mut out);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "{}", rule.join("-+-"));
        for r in &body {
            line(r, &mut out);
        }
        out
    }

    /// Long-format CSV: `condition,object,success_rate,prediction_error_mm`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::format("CSV", e.to_string());
        w.write_record(["condition", "object", "success_rate", "prediction_error_mm"])
            .map_err(err)?;
        for r in &self.rows {
            for o in &r.objects {
                w.write_record([
                    r.condition.as_str(),
                    o.object.as_str(),
                    &o.success_rate.to_string(),
                    &o.prediction_error_mm.to_string(),
                ])
                .map_err(err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::format("CSV", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

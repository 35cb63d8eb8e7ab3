//! `relight` command-line front end.
//!
//! Progress goes to stderr; artifacts go to files and machine-readable
//! results to stdout. Failures print a JSON error object on stderr and exit
//! with 1 (usage), 2 (validation) or 3 (I/O).

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use relight_core::error::Error;

pub use commands::execute;

pub const DATASET_ROOT_ENV: &str = "ROBOLIGHT_DATASET_ROOT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "relight", version, about = "Linear-radiance HDR processing and lighting synthesis")]
pub struct Cli {
    /// Suppress progress messages.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Develop RAW16 containers into 8-bit PNG.
    Process(ProcessArgs),
    /// Fit a calibration profile from a chart capture and a flat field.
    Calibrate(CalibrateArgs),
    /// Blend synchronized real episodes into synthetic lighting conditions.
    Synthesize(SynthesizeArgs),
    /// Synchronization and fidelity checks.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Apply a lighting-condition shift.
    Shift(ShiftArgs),
    /// Exposure, color and tone-map scaling of HDR frames.
    Scale(ScaleArgs),
    /// Success-rate and prediction-error tables from a roll-out log.
    Report(ReportArgs),
    /// Render analytic test scenes.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone, Copy, Args)]
pub struct WorkerArgs {
    /// Worker threads.
    #[arg(long, default_value_t = default_workers(), value_parser = parse_workers)]
    pub workers: usize,
}

fn parse_workers(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("worker count must be an integer >= 1, got {s:?}")),
    }
}

#[derive(Debug, Args)]
pub struct ProcessArgs {
    /// RAW container (`.png` with `.raw.json` sidecar) or a directory of them.
    #[arg(long)]
    pub input: PathBuf,
    /// Output PNG, or output directory when the input is a directory.
    #[arg(long)]
    pub output: PathBuf,
    /// Calibration profile JSON; identity when omitted.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Pipeline configuration JSON (stage switches, bilateral parameters).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stage to switch off; repeatable (denoise, shading, white_balance, color_correct, gamma_encode).
    #[arg(long = "disable")]
    pub disable: Vec<String>,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Capture of the 24-patch chart filling the frame (PFM or RAW container).
    #[arg(long)]
    pub chart: PathBuf,
    /// Flat-field capture (PFM or RAW container).
    #[arg(long)]
    pub flat: Option<PathBuf>,
    /// Box-smoothing radius for the shading map, in pixels.
    #[arg(long, default_value_t = relight_core::calibration::DEFAULT_SHADING_RADIUS)]
    pub shading_radius: usize,
    /// Transfer curve: `srgb`, `linear` or `power:<gamma>`.
    #[arg(long, default_value = "srgb")]
    pub transfer: String,
    /// Profile JSON to write.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Root of the real dataset.
    #[arg(long, env = DATASET_ROOT_ENV)]
    pub dataset_root: PathBuf,
    /// Root for synthetic episodes.
    #[arg(long)]
    pub output: PathBuf,
    /// Comma-separated `A:B` condition pairs; the structured ten pairs when omitted.
    #[arg(long, conflicts_with = "grid")]
    pub pairs: Option<String>,
    /// Grid spec JSON (pairs, lambda_values, episodes_per_condition).
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Spacing of the interior lambda grid.
    #[arg(long, default_value_t = 0.01, conflicts_with = "grid")]
    pub lambda_step: f64,
    /// Synchronized episodes per pair.
    #[arg(long, default_value_t = 200, conflicts_with = "grid")]
    pub episodes: usize,
    /// Maximum timestamp offset between parents.
    #[arg(long, default_value_t = relight_core::dataset::DEFAULT_SYNC_TOLERANCE_MS)]
    pub tolerance_ms: f64,
    /// Print the job plan as JSON lines and exit.
    #[arg(long)]
    pub dry_run: bool,
    /// Rewrite episodes even when their checksums verify.
    #[arg(long)]
    pub no_resume: bool,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Debug, Subcommand)]
pub enum VerifyCommand {
    /// Check that episodes are frame-aligned in time.
    Sync(SyncArgs),
    /// PSNR and luminance-histogram distance between two images.
    Fidelity(FidelityArgs),
}

#[derive(Debug, Args)]
pub struct SyncArgs {
    /// Manifest paths to compare.
    #[arg(long, num_args = 1.., conflicts_with = "trajectory")]
    pub episodes: Vec<PathBuf>,
    /// Compare every real episode of this trajectory under the dataset root.
    #[arg(long, requires = "dataset_root")]
    pub trajectory: Option<String>,
    #[arg(long, env = DATASET_ROOT_ENV)]
    pub dataset_root: Option<PathBuf>,
    #[arg(long, default_value_t = relight_core::dataset::DEFAULT_SYNC_TOLERANCE_MS)]
    pub tolerance_ms: f64,
}

#[derive(Debug, Args)]
pub struct FidelityArgs {
    /// Ground truth image (8-bit PNG or PFM).
    #[arg(long)]
    pub reference: PathBuf,
    /// Image under test, same kind as the reference.
    #[arg(long)]
    pub candidate: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub bins: usize,
    /// Histogram range `lo,hi`; 0,256 for PNG and 0,1 for PFM by default.
    #[arg(long)]
    pub range: Option<String>,
    /// Also write the JSON result here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ShiftArgs {
    /// Lighting condition JSON.
    #[arg(long, conflicts_with_all = ["task", "label"])]
    pub input: Option<PathBuf>,
    /// Catalog task, used with --label instead of --input.
    #[arg(long, requires = "label")]
    pub task: Option<String>,
    #[arg(long, requires = "task")]
    pub label: Option<String>,
    /// color-blue, direction-right or intensity-all.
    #[arg(long)]
    pub kind: String,
    #[arg(long, default_value_t = 0.5)]
    pub factor: f64,
    /// Lights counted as right side, e.g. `L2,L3,L4`.
    #[arg(long)]
    pub right_side: Option<String>,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    /// PFM frame or directory of PFM frames.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file, or directory when the input is a directory.
    #[arg(long)]
    pub output: PathBuf,
    /// Exposure change in stops.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub stops: f64,
    /// Per-channel gains `r,g,b`.
    #[arg(long)]
    pub gains: Option<String>,
    /// Apply the global tone-mapping operator after scaling.
    #[arg(long)]
    pub tone_map: bool,
    #[arg(long, default_value_t = relight_core::relight::DEFAULT_TONE_KEY)]
    pub key: f64,
    /// White point in scaled units; brightest scaled luminance when omitted.
    #[arg(long)]
    pub white: Option<f64>,
    /// Write sRGB 8-bit PNG instead of PFM.
    #[arg(long)]
    pub encode: bool,
    #[command(flatten)]
    pub workers: WorkerArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Roll-out log, one JSON record per line.
    #[arg(long)]
    pub log: PathBuf,
    /// Directory for report.json, report.txt and report.csv.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum OracleCommand {
    /// Render every frame of a scene to PFM files.
    Render(OracleRenderArgs),
    /// Render a scene as a real episode inside a dataset tree.
    Episode(OracleEpisodeArgs),
}

#[derive(Debug, Args)]
pub struct LightSelection {
    /// Comma-separated indices of lights to switch on; all when omitted.
    #[arg(long, conflicts_with = "weights")]
    pub lights: Option<String>,
    /// Comma-separated per-light weights.
    #[arg(long)]
    pub weights: Option<String>,
}

#[derive(Debug, Args)]
pub struct OracleRenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub select: LightSelection,
}

#[derive(Debug, Args)]
pub struct OracleEpisodeArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, env = DATASET_ROOT_ENV)]
    pub dataset_root: PathBuf,
    #[arg(long)]
    pub task: String,
    /// Lighting label; catalog conditions are used when the label matches one.
    #[arg(long)]
    pub label: String,
    #[arg(long)]
    pub trajectory: String,
    /// Defaults to `<trajectory>__<label>`.
    #[arg(long)]
    pub episode_id: Option<String>,
    #[command(flatten)]
    pub select: LightSelection,
}

/// Why a command failed.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Core(Error::Io { .. }) => EXIT_IO,
            Failure::Core(Error::InvalidArgument(_)) => EXIT_USAGE,
            Failure::Core(e) if e.is_validation() => EXIT_VALIDATION,
            Failure::Core(_) => EXIT_USAGE,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_USAGE => "usage",
            EXIT_VALIDATION => "validation",
            _ => "io",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let message = match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        };
        let mut err = serde_json::json!({
            "code": self.exit_code(),
            "kind": self.kind(),
            "message": message,
        });
        match self {
            Failure::Core(Error::Validation { path, .. }) => err["field"] = path.clone().into(),
            Failure::Core(Error::Io { path, .. }) => err["path"] = path.display().to_string().into(),
            _ => {}
        }
        serde_json::json!({ "error": err })
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let f = Failure::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", f.to_json());
            return f.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("{}", f.to_json());
            f.exit_code()
        }
    }
}

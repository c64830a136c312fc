//! Command-line front end: dataset generation, training, transfer
//! evaluation, ablation grids, sensor synchronization and self-test.
//!
//! Every command resolves its settings as defaults, then the `--config`
//! TOML file, then flags, and writes the resolved settings into its reports.
//! Failures print one JSON line on stderr and exit with a code from
//! [`ExitKind`].

mod commands;
mod config;
pub mod selftest;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{AppConfig, SyncSettings};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage: bad flags, inconsistent options or invalid configuration
  3  io/format: missing files, malformed containers or inputs
  4  numeric: non-finite loss or a failed numeric estimate
  5  acceptance: a self-test threshold was not met

Errors are reported as one JSON line on stderr:
  {\"error\":{\"code\":3,\"kind\":\"io\",\"message\":\"...\"}}";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Usage,
    Io,
    Numeric,
    Acceptance,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Usage => 2,
            ExitKind::Io => 3,
            ExitKind::Numeric => 4,
            ExitKind::Acceptance => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExitKind::Usage => "usage",
            ExitKind::Io => "io",
            ExitKind::Numeric => "numeric",
            ExitKind::Acceptance => "acceptance",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Usage, message)
    }

    /// The single stderr line for this error.
    pub fn line(&self) -> String {
        serde_json::json!({"error": {"code": self.kind.code(), "kind": self.kind.name(), "message": self.message}})
            .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.name(), self.message)
    }
}

impl From<crate::data::DataError> for CliError {
    fn from(e: crate::data::DataError) -> Self {
        use crate::data::DataError as E;
        let kind = match &e {
            E::Config(_) => ExitKind::Usage,
            _ => ExitKind::Io,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<crate::nn::NnError> for CliError {
    fn from(e: crate::nn::NnError) -> Self {
        use crate::nn::NnError as E;
        let kind = match &e {
            E::Config(_) => ExitKind::Usage,
            E::Tensor(crate::tensor::TensorError::Io(_) | crate::tensor::TensorError::Format(_)) => ExitKind::Io,
            E::Checkpoint(_) | E::Io(_) | E::UnknownParam(_) | E::DuplicateParam(_) => ExitKind::Io,
            _ => ExitKind::Numeric,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<crate::trainer::TrainError> for CliError {
    fn from(e: crate::trainer::TrainError) -> Self {
        use crate::trainer::TrainError as E;
        match e {
            E::Nn(n) => n.into(),
            E::Data(d) => d.into(),
            E::Config(_) => CliError::usage(e.to_string()),
            E::NonFinite(_) => CliError::new(ExitKind::Numeric, e.to_string()),
            E::Checkpoint(_) | E::Io(_) => CliError::new(ExitKind::Io, e.to_string()),
        }
    }
}

impl From<crate::transfer::TransferError> for CliError {
    fn from(e: crate::transfer::TransferError) -> Self {
        use crate::transfer::TransferError as E;
        match e {
            E::Nn(n) => n.into(),
            E::Io(_) => CliError::new(ExitKind::Io, e.to_string()),
            E::NonFinite(_) | E::BackboneModified | E::Metric(_) => CliError::new(ExitKind::Numeric, e.to_string()),
            E::Geometry(_) | E::EmptySplit(_) => CliError::usage(e.to_string()),
        }
    }
}

impl From<crate::sync::SyncError> for CliError {
    fn from(e: crate::sync::SyncError) -> Self {
        use crate::sync::SyncError as E;
        let kind = match &e {
            E::Format(_) | E::Csv(_) | E::Wav(_) | E::Io(_) => ExitKind::Io,
            E::RateMismatch(..) => ExitKind::Usage,
            _ => ExitKind::Numeric,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(ExitKind::Io, e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "ego-interact", version, about = "Interaction-supervised representation learning on egocentric sequences", after_help = EXIT_CODES)]
pub struct Cli {
    /// TOML file layered over the defaults; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic interaction dataset.
    GenData(GenDataArgs),
    /// Train a representation with one objective mode.
    Train(TrainArgs),
    /// Frozen-backbone transfer evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Train and evaluate every cell of a modes x masks grid.
    Ablate(AblateArgs),
    /// Sensor synchronization utilities.
    #[command(subcommand)]
    Sync(SyncCommand),
    /// Compare movement prediction from frames alone and frames plus gaze.
    MovementFromGaze(MovementFromGazeArgs),
    /// Run the acceptance checks.
    SelfTest(SelfTestArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_name = "N")]
    pub seqs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-pixel Gaussian noise standard deviation.
    #[arg(long, value_name = "SIGMA")]
    pub noise: Option<f64>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// vis, vis-attn, vis-move or vis-move-attn.
    #[arg(long)]
    pub mode: Option<String>,
    /// infonce, ae or none.
    #[arg(long)]
    pub visual: Option<String>,
    /// Comma-separated parts excluded from the movement loss: torso, neck,
    /// arms, legs or a single side such as left_arm.
    #[arg(long, value_name = "PARTS")]
    pub mask_parts: Option<String>,
    /// Checkpoint directory; the report is written to `report.csv` inside it.
    #[arg(long, value_name = "CKPT")]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, value_name = "CKPT")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "CKPT")]
    pub ckpt: PathBuf,
    /// `all` or a comma-separated subset of scene, action, dynamics,
    /// walkable, depth.
    #[arg(long, default_value = "all")]
    pub tasks: String,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    /// Labelled dataset; a synthetic world matching the checkpoint is
    /// generated from `--seed` when omitted.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Row label; defaults to the checkpoint's objective mode.
    #[arg(long)]
    pub label: Option<String>,
    /// Add a row for a randomly initialized backbone of the same shape.
    #[arg(long)]
    pub random_baseline: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// `MODES x MASKS`: comma-separated modes (or `all`), then optionally
    /// `x` and comma-separated masks where `none` masks nothing and `+`
    /// joins parts, e.g. `vis,vis-move-attn x none,legs,arms+legs`.
    #[arg(long, default_value = "all")]
    pub grid: String,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub visual: Option<String>,
    #[arg(long, default_value = "scene")]
    pub tasks: String,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum SyncCommand {
    /// Delay of B relative to A, from audio cross-correlation.
    AudioOffset {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        min_overlap: Option<f64>,
    },
    /// Gaze-camera to head-camera homography from `x1,y1,x2,y2` pairs.
    Homography {
        correspondences: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-frame part movement labels from `timestamp,sensor_id,qw,qx,qy,qz`.
    LabelMoves {
        imu: PathBuf,
        #[arg(long, default_value_t = 6.0)]
        fps: f64,
        /// Label CSV destination; stdout when omitted.
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct MovementFromGazeArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Result CSV destination; stdout when omitted.
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelfTestArgs {
    /// Also run the end-to-end ordering experiment (tens of minutes).
    #[arg(long)]
    pub full: bool,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Command output goes to `out`, progress
/// and errors to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = write!(out, "{}", e.render());
                return if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand {
                    ExitKind::Usage.code()
                } else {
                    0
                };
            }
            let _ = e.print();
            let first = e.render().to_string();
            let first = first.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::usage(first).line());
            return ExitKind::Usage.code();
        }
    };
    match commands::dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.kind.code()
        }
    }
}

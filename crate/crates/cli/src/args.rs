use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Quantum network distributions and neural-network local models.
#[derive(Debug, Parser)]
#[command(name = "netlocal", version)]
pub struct Cli {
    /// Directory for results and manifests.
    #[arg(long, global = true, env = "NETLOCAL_OUT_DIR", default_value = "netlocal-out")]
    pub out_dir: PathBuf,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Compute the outcome distribution of a quantum realization.
    QuantumDist(QuantumDistArgs),
    /// Train a local model for a target distribution.
    Fit(FitArgs),
    /// Train local models over a parameter grid.
    Scan(ScanArgs),
    /// Measure the sampling error of empirical distributions.
    Calibrate(CalibrateArgs),
    /// Tabulate the response functions stored in a checkpoint.
    ExportStrats(ExportArgs),
    /// Re-run the command recorded in a manifest.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct NetworkArgs {
    /// Ring preset (`triangle`, `square`, `pentagon`) or a JSON config file.
    #[arg(long, default_value = "triangle")]
    pub network: String,

    /// Hilbert-space wiring, e.g. `5,0,1,2,3,4`. Presets default to the ring
    /// wiring; config files with several sources require it.
    #[arg(long)]
    pub wiring: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum StateName {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
    Rotated1,
    Rotated2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PovmName {
    Rgb4,
    Tetra,
    Computational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct QuantumDistArgs {
    #[command(flatten)]
    pub network: NetworkArgs,

    /// State family prepared by every source.
    #[arg(long, default_value = "psi_plus", conflicts_with = "state_file")]
    pub states: StateName,

    /// Rotation angle of the rotated state families, in `[0, π]`.
    #[arg(long, default_value_t = 0.0)]
    pub theta: f64,

    /// Raw state for every source: JSON with `dims` and `amplitudes` or
    /// `density` as `[re, im]` pairs.
    #[arg(long)]
    pub state_file: Option<PathBuf>,

    /// Measurement performed by every party.
    #[arg(long, default_value = "rgb4", conflicts_with = "povm_file")]
    pub povm: PovmName,

    /// `u²` of the four-outcome measurement.
    #[arg(long, default_value_t = 1.0)]
    pub u2: f64,

    /// Angle of the tetrahedral joint measurement, in `[0, π/2]`.
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,

    /// Dimension of the computational-basis measurement.
    #[arg(long, default_value_t = 4)]
    pub dim: usize,

    /// Raw POVM for every party: JSON with `effects`.
    #[arg(long)]
    pub povm_file: Option<PathBuf>,

    /// Werner visibility applied to every two-qubit source.
    #[arg(long, default_value_t = 1.0)]
    pub visibility: f64,

    /// Outcomes merged into one at every party, e.g. `01`.
    #[arg(long)]
    pub coarse: Option<String>,

    #[arg(long, value_enum, default_value = "json")]
    pub format: DistFormat,

    /// Stem of the output file names.
    #[arg(long, default_value = "dist")]
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Kl,
    Euclid,
}

/// Model and optimizer settings shared by `fit` and `scan`.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 60)]
    pub width: usize,

    #[arg(long, default_value_t = 4)]
    pub depth: usize,

    /// Reported distance. `euclid` with `--stage2` trains on KL first;
    /// `euclid` alone trains on the Euclidean distance throughout.
    #[arg(long, value_enum, default_value = "kl")]
    pub loss: LossName,

    /// Euclidean iterations after the KL stage; 0 disables the second stage.
    #[arg(long, default_value_t = 0)]
    pub stage2: usize,

    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,

    #[arg(long, default_value_t = 1_000)]
    pub patience: usize,

    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Hidden-variable samples of the final evaluation.
    #[arg(long, default_value_t = 1_000_000)]
    pub eval_samples: usize,

    /// Independent initializations; the best final model is kept.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,

    /// Initial sampling bias `B`.
    #[arg(long, default_value_t = 4.0)]
    pub bias: f64,

    #[arg(long, default_value_t = 10.0)]
    pub bias_max: f64,

    #[arg(long, default_value_t = 1_000)]
    pub n_min: usize,

    #[arg(long, default_value_t = 10_000_000)]
    pub n_max: usize,

    /// Iterations without improvement before `B` grows.
    #[arg(long, default_value_t = 100)]
    pub stagnation_window: usize,

    /// Moving-average window of the loss used for patience.
    #[arg(long, default_value_t = 50)]
    pub smoothing_window: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Ring preset (`triangle`, `square`, `pentagon`) or a JSON config file.
    #[arg(long, default_value = "triangle")]
    pub network: String,

    /// Row-major target distribution: JSON array or one value per line.
    #[arg(long)]
    pub target: PathBuf,

    /// Outcomes per party for preset networks; inferred from the target
    /// length when omitted.
    #[arg(long)]
    pub outcomes: Option<usize>,

    #[command(flatten)]
    pub train: TrainArgs,

    /// Stem of the output file names.
    #[arg(long, default_value = "fit")]
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Triangle RGB4 distributions over `u²`.
    Rgb4UScan,
    /// RGB4 at fixed `u²` with Werner noise over `V`.
    Rgb4Visibility,
    /// Rotated states and tetrahedral measurements over `θ x μ`.
    Grid2d,
    /// One `(θ, μ)` realization with Werner noise over `V`.
    Robustness,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ScanArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,

    /// Ring preset for `grid2d` and `robustness`.
    #[arg(long, default_value = "triangle")]
    pub network: String,

    /// `u²` values of `rgb4-u-scan` as `lo:hi:n` or a comma list.
    #[arg(long, default_value = "0.5:1:11")]
    pub u2_grid: String,

    /// Fixed `u²` of `rgb4-visibility`.
    #[arg(long, default_value_t = 0.85)]
    pub u2: f64,

    /// Visibility values as `lo:hi:n` or a comma list.
    #[arg(long, default_value = "0.8,0.85,0.9,0.95,0.975,1")]
    pub v_grid: String,

    /// Fixed visibility of `rgb4-u-scan`.
    #[arg(long, default_value_t = 1.0)]
    pub visibility: f64,

    /// Rotated-state family (1 or 2).
    #[arg(long, default_value_t = 1)]
    pub family: u8,

    /// `θ` values of `grid2d`.
    #[arg(long, default_value = "0:3.141592653589793:11")]
    pub theta_grid: String,

    /// `μ` values of `grid2d`.
    #[arg(long, default_value = "0:1.5707963267948966:11")]
    pub mu_grid: String,

    /// `θ` of `robustness`.
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    pub theta: f64,

    /// `μ` of `robustness`.
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,

    /// Outcomes merged into one at every party, e.g. `01`.
    #[arg(long)]
    pub coarse: Option<String>,

    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,

    #[command(flatten)]
    pub train: TrainArgs,

    /// Scan name used in the output file names; defaults to the preset.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CalibrateArgs {
    /// Outcome counts: comma list or decade range such as `1e1..1e3`.
    #[arg(long, default_value = "4,16,64,256")]
    pub outcomes: String,

    /// Sample counts: comma list or decade range.
    #[arg(long, default_value = "1e3..1e6")]
    pub samples: String,

    #[arg(long, default_value_t = 1000)]
    pub trials: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value = "calibration")]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Parties to export; defaults to every party with two sources.
    #[arg(long = "party")]
    pub parties: Vec<String>,

    /// Lattice points per hidden-variable axis.
    #[arg(long, default_value_t = 100)]
    pub resolution: usize,

    #[arg(long, default_value = "strategies")]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

//! `nrsfm`: command-line front end for the nrsfm-core library.
//!
//! Four subcommands cover the full workflow: `synthesize` writes a benchmark
//! dataset directory, `reconstruct` recovers a 3D shape sequence from 2D
//! tracks, `evaluate` scores an estimate against ground truth, and `sweep`
//! produces error tables over noise and outlier grids. Solver settings
//! resolve with the precedence flags > `--config` JSON file > built-in
//! defaults.

mod commands;

use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nrsfm_core::prelude::*;

#[derive(Parser)]
#[command(
    name = "nrsfm",
    version,
    about = "Dense non-rigid structure-from-motion from 2D feature tracks"
)]
struct Cli {
    /// Base seed for scene generation and contamination.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Worker threads for sweep cells (capped at the available cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// JSON solver-configuration file (individual flags override it).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory (for evaluate: the report file path).
    #[arg(long, global = true, value_name = "PATH")]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset directory.
    Synthesize(SynthesizeArgs),
    /// Reconstruct a 3D shape sequence from 2D tracks.
    Reconstruct(ReconstructArgs),
    /// Score a reconstructed shape file against ground truth.
    Evaluate(EvaluateArgs),
    /// Build error tables over noise and outlier grids.
    Sweep(SweepArgs),
}

/// Grid dimensions parsed from `ROWSxCOLS`.
#[derive(Clone, Copy, Debug)]
pub struct GridArg {
    pub rows: usize,
    pub cols: usize,
}

fn parse_grid(s: &str) -> Result<GridArg, String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS (e.g. 10x10), got {s:?}"))?;
    let rows = r.trim().parse().map_err(|_| format!("bad row count {r:?}"))?;
    let cols = c.trim().parse().map_err(|_| format!("bad column count {c:?}"))?;
    if rows == 0 || cols == 0 {
        return Err("grid needs at least one row and one column".into());
    }
    Ok(GridArg { rows, cols })
}

/// Rotation axis parsed from `X,Y,Z`.
#[derive(Clone, Copy, Debug)]
pub struct AxisArg(pub [f64; 3]);

fn parse_axis(s: &str) -> Result<AxisArg, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three components X,Y,Z, got {s:?}"));
    }
    let mut axis = [0.0; 3];
    for (slot, part) in axis.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("bad axis component {part:?}"))?;
    }
    if axis.iter().all(|v| *v == 0.0) {
        return Err("axis must be nonzero".into());
    }
    Ok(AxisArg(axis))
}

/// A list of sweep values: `START:STEP:END` (inclusive) or `V1,V2,...`.
#[derive(Clone, Debug)]
pub struct ScheduleArg(pub Vec<f64>);

fn parse_schedule(s: &str) -> Result<ScheduleArg, String> {
    let parse_one = |part: &str| {
        part.trim()
            .parse::<f64>()
            .map_err(|_| format!("bad value {part:?}"))
            .and_then(|v| {
                if v.is_finite() && v >= 0.0 {
                    Ok(v)
                } else {
                    Err(format!("values must be finite and nonnegative, got {part:?}"))
                }
            })
    };
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected START:STEP:END, got {s:?}"));
        }
        let start = parse_one(parts[0])?;
        let step = parse_one(parts[1])?;
        let end = parse_one(parts[2])?;
        if step <= 0.0 {
            return Err("STEP must be positive".into());
        }
        if end < start {
            return Err("END must be at least START".into());
        }
        let n = ((end - start) / step).round() as usize;
        let last = start + step * n as f64;
        if (last - end).abs() > 1e-9 * end.abs().max(1.0) {
            return Err(format!("range {s:?} does not land on END (last value {last})"));
        }
        Ok(ScheduleArg(
            (0..=n).map(|k| start + step * k as f64).collect(),
        ))
    } else {
        s.split(',')
            .map(parse_one)
            .collect::<Result<Vec<f64>, String>>()
            .map(ScheduleArg)
    }
}

/// Outlier ratios read values >= 1 as percentages, so `4` means 4%.
fn percent_normalized(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| if v >= 1.0 { v / 100.0 } else { v })
        .collect()
}

#[derive(Args, Clone, Copy, Debug)]
pub struct SceneFlags {
    /// Number of deformation modes.
    #[arg(long, default_value_t = 2)]
    pub basis_rank: usize,

    /// Deformation strength; 0 gives a rigid scene.
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,

    /// Camera rotation axis as X,Y,Z.
    #[arg(long, default_value = "0.25,1,0.15", value_parser = parse_axis, allow_hyphen_values = true)]
    pub axis: AxisArg,

    /// Sweep angle of the first frame, in radians.
    #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
    pub angle_start: f64,

    /// Per-frame sweep angle increment, in radians.
    #[arg(long, default_value_t = 0.05, allow_hyphen_values = true)]
    pub angle_step: f64,
}

impl SceneFlags {
    fn spec(&self, grid: GridArg, frames: usize, seed: u64) -> Result<SceneSpec> {
        let path = RotationPath::swept(self.axis.0, self.angle_start, self.angle_step, frames)?;
        Ok(SceneSpec {
            rows: grid.rows,
            cols: grid.cols,
            frames,
            basis_rank: self.basis_rank,
            deformation_amplitude: self.amplitude,
            rotation_path: path,
            seed,
        })
    }
}

#[derive(Args, Debug)]
pub struct SynthesizeArgs {
    /// Grid dimensions, e.g. 10x10.
    #[arg(long, value_parser = parse_grid)]
    pub grid: GridArg,

    /// Number of frames.
    #[arg(long)]
    pub frames: usize,

    #[command(flatten)]
    pub scene: SceneFlags,

    /// Gaussian noise ratio baked into the stored tracks.
    #[arg(long)]
    pub noise: Option<f64>,

    /// Outlier fraction baked into the stored tracks (>= 1 means percent).
    #[arg(long)]
    pub outliers: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodArg {
    /// Per-frame pseudo-inverse baseline.
    Pinv,
    /// Closed-form temporal smoothing.
    Temporal,
    /// Quadratic spatial-temporal solve.
    StL2,
    /// Robust spatial-temporal IRLS solve (default).
    StL1,
}

impl MethodArg {
    pub fn label(self) -> &'static str {
        match self {
            MethodArg::Pinv => "pinv",
            MethodArg::Temporal => "temporal",
            MethodArg::StL2 => "st-l2",
            MethodArg::StL1 => "st-l1",
        }
    }
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// Dataset directory containing manifest.json.
    pub dataset: Option<PathBuf>,

    /// Headerless CSV with the 2F×P track matrix (alternative to a dataset).
    #[arg(long, value_name = "FILE", conflicts_with = "dataset")]
    pub tracks_csv: Option<PathBuf>,

    /// Headerless CSV with 2F×3 stacked rotation blocks.
    #[arg(long, value_name = "FILE")]
    pub rotations_csv: Option<PathBuf>,

    /// Grid dimensions of the CSV tracks, e.g. 10x10.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<GridArg>,

    /// Reconstruction method.
    #[arg(long, value_enum, default_value_t = MethodArg::StL1)]
    pub method: MethodArg,

    /// Estimate rotations from the tracks (rigid assumption) when no
    /// rotation data is available. Centers the tracks per frame first.
    #[arg(long)]
    pub estimate_rotations: bool,

    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Estimated 3F×P shape file.
    pub estimate: PathBuf,

    /// Ground-truth 3F×P shape file.
    pub ground_truth: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Dataset directory to sweep on (alternative to --grid/--frames).
    pub dataset: Option<PathBuf>,

    /// Grid dimensions of a generated scene, e.g. 12x12.
    #[arg(long, value_parser = parse_grid, conflicts_with = "dataset")]
    pub grid: Option<GridArg>,

    /// Number of frames of a generated scene.
    #[arg(long, conflicts_with = "dataset")]
    pub frames: Option<usize>,

    #[command(flatten)]
    pub scene: SceneFlags,

    /// Noise ratios as START:STEP:END or V1,V2,...
    #[arg(long, value_parser = parse_schedule)]
    pub noise: Option<ScheduleArg>,

    /// Outlier ratios as START:STEP:END or V1,V2,... (>= 1 means percent).
    #[arg(long, value_parser = parse_schedule)]
    pub outliers: Option<ScheduleArg>,

    /// Contamination repeats per setting.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,

    #[command(flatten)]
    pub solver: SolverFlags,
}

/// Solver settings; every flag overrides the config file and the defaults.
#[derive(Args, Clone, Debug, Default)]
pub struct SolverFlags {
    /// Temporal smoothness weight.
    #[arg(long)]
    pub lambda1: Option<f64>,

    /// Spatial smoothness weight.
    #[arg(long)]
    pub lambda2: Option<f64>,

    /// Robust smoothing width (default: 1e-4 x the largest track magnitude).
    #[arg(long)]
    pub delta: Option<f64>,

    /// Maximum IRLS outer iterations.
    #[arg(long)]
    pub irls_max_iters: Option<usize>,

    /// Maximum inner iterations per quadratic subproblem.
    #[arg(long)]
    pub cg_max_iters: Option<usize>,

    /// Inner relative-residual tolerance.
    #[arg(long)]
    pub cg_tol: Option<f64>,

    /// Outer relative objective-decrease tolerance.
    #[arg(long)]
    pub objective_tol: Option<f64>,

    /// Use the gradient-descent inner solver instead of conjugate gradients.
    #[arg(long)]
    pub gradient_descent: bool,
}

/// Known keys of the JSON config file (the field names of `SolverConfig`).
const CONFIG_KEYS: [&str; 8] = [
    "lambda1",
    "lambda2",
    "delta",
    "irls_max_iters",
    "cg_max_iters",
    "cg_tol",
    "objective_tol",
    "method",
];

fn resolve_config(path: Option<&Path>, flags: &SolverFlags) -> Result<SolverConfig> {
    let mut cfg = match path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            let map = value
                .as_object()
                .with_context(|| format!("{}: config must be a JSON object", path.display()))?;
            for key in map.keys() {
                ensure!(
                    CONFIG_KEYS.contains(&key.as_str()),
                    "{}: unknown config key {key:?} (known keys: {})",
                    path.display(),
                    CONFIG_KEYS.join(", ")
                );
            }
            serde_json::from_value(value)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => SolverConfig::default(),
    };
    if let Some(v) = flags.lambda1 {
        cfg.lambda1 = v;
    }
    if let Some(v) = flags.lambda2 {
        cfg.lambda2 = v;
    }
    if let Some(v) = flags.delta {
        cfg.delta = Some(v);
    }
    if let Some(v) = flags.irls_max_iters {
        cfg.irls_max_iters = v;
    }
    if let Some(v) = flags.cg_max_iters {
        cfg.cg_max_iters = v;
    }
    if let Some(v) = flags.cg_tol {
        cfg.cg_tol = v;
    }
    if let Some(v) = flags.objective_tol {
        cfg.objective_tol = v;
    }
    if flags.gradient_descent {
        cfg.method = SubproblemMethod::GradientDescent;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        let cap = std::thread::available_parallelism()
            .map(NonZeroUsize::get)
            .unwrap_or(1);
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.clamp(1, cap))
            .build_global()
            .context("initializing the worker pool")?;
    }
    let output = cli.output.as_deref();
    match &cli.command {
        Command::Synthesize(args) => commands::cmd_synthesize(args, cli.seed, output),
        Command::Reconstruct(args) => {
            let cfg = resolve_config(cli.config.as_deref(), &args.solver)?;
            commands::cmd_reconstruct(args, &cfg, output)
        }
        Command::Evaluate(args) => commands::cmd_evaluate(args, output),
        Command::Sweep(args) => {
            let cfg = resolve_config(cli.config.as_deref(), &args.solver)?;
            commands::cmd_sweep(args, &cfg, cli.seed, output)
        }
    }
}

//! Reconstruction error metric and experiment sweeps.
//!
//! The error metric is the normalized per-frame RMS 3D error
//! `e_i = ‖Ŝ_i − S_i‖_F / ‖S_i‖_F` after removing per-frame centroids from
//! both stacks and resolving the orthographic depth-reflection ambiguity by
//! a single global z-flip of the estimate when that lowers the mean error.
//!
//! [`run_sweep`] drives the full experiment protocol: one synthetic scene,
//! a grid of contamination settings, several seeds per setting, and four
//! methods per cell — the pseudo-inverse and temporal-only baselines, the
//! L2 spatial-temporal solve, and the robust L1 pipeline.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{CoreError, Result};
use crate::model::ShapeStack;
use crate::solver::{
    irls_reconstruct, solve_quadratic_subproblem, IrlsWeights, SolveReport, SolverConfig,
};
use crate::spatial::build_laplacian;
use crate::synth::{generate_scene, inject_noise, inject_outliers, SceneSpec};
use crate::temporal::{build_temporal_operator, solve_pseudo_inverse, solve_temporal};

/// Per-frame and mean normalized RMS 3D error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// e_i per frame, after centering and flip resolution.
    pub per_frame_error: Vec<f64>,
    /// Arithmetic mean of the per-frame errors.
    pub mean_error: f64,
    /// Whether the global depth flip was applied to the estimate.
    pub flip_applied: bool,
}

/// Removes the per-frame centroid from every frame of a stack.
fn center_frames(s: &ShapeStack) -> DMatrix<f64> {
    let mut data = s.data().clone();
    let p = s.points();
    for row in 0..data.nrows() {
        let mean = data.row(row).sum() / p as f64;
        for col in 0..p {
            data[(row, col)] -= mean;
        }
    }
    data
}

fn frame_errors(est: &DMatrix<f64>, gt: &DMatrix<f64>, frames: usize, points: usize, flip_z: bool) -> Result<Vec<f64>> {
    let mut errors = Vec::with_capacity(frames);
    for i in 0..frames {
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for row in 0..3 {
            let sign = if flip_z && row == 2 { -1.0 } else { 1.0 };
            for col in 0..points {
                let e = sign * est[(3 * i + row, col)];
                let g = gt[(3 * i + row, col)];
                num += (e - g) * (e - g);
                den += g * g;
            }
        }
        if den == 0.0 {
            return Err(CoreError::UndefinedNormalization { frame: i });
        }
        errors.push((num / den).sqrt());
    }
    Ok(errors)
}

/// Normalized RMS 3D error between an estimate and the ground truth.
pub fn rms_error(s_est: &ShapeStack, s_gt: &ShapeStack) -> Result<ErrorReport> {
    if s_est.frames() != s_gt.frames() || s_est.points() != s_gt.points() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{}x{} shape stack", 3 * s_gt.frames(), s_gt.points()),
            found: format!("{}x{}", 3 * s_est.frames(), s_est.points()),
        });
    }
    let frames = s_gt.frames();
    let points = s_gt.points();
    let est = center_frames(s_est);
    let gt = center_frames(s_gt);
    let plain = frame_errors(&est, &gt, frames, points, false)?;
    let flipped = frame_errors(&est, &gt, frames, points, true)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (errors, flip_applied) = if mean(&flipped) < mean(&plain) {
        (flipped, true)
    } else {
        (plain, false)
    };
    let mean_error = mean(&errors);
    Ok(ErrorReport {
        per_frame_error: errors,
        mean_error,
        flip_applied,
    })
}

/// Reconstruction method identifiers used across sweeps and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    /// Per-frame pseudo-inverse S = R†W.
    PseudoInverse,
    /// Closed-form temporal-only solve.
    TemporalOnly,
    /// L2 spatial-temporal quadratic solve.
    SpatialTemporalL2,
    /// Robust L1 spatial-temporal IRLS pipeline.
    SpatialTemporalL1,
}

impl MethodKind {
    /// All methods, in the canonical reporting order.
    pub fn all() -> [MethodKind; 4] {
        [
            MethodKind::PseudoInverse,
            MethodKind::TemporalOnly,
            MethodKind::SpatialTemporalL2,
            MethodKind::SpatialTemporalL1,
        ]
    }

    /// Short stable label used in tables and on the command line.
    pub fn label(&self) -> &'static str {
        match self {
            MethodKind::PseudoInverse => "pinv",
            MethodKind::TemporalOnly => "temporal",
            MethodKind::SpatialTemporalL2 => "st-l2",
            MethodKind::SpatialTemporalL1 => "st-l1",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MethodKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pinv" => Ok(MethodKind::PseudoInverse),
            "temporal" => Ok(MethodKind::TemporalOnly),
            "st-l2" => Ok(MethodKind::SpatialTemporalL2),
            "st-l1" => Ok(MethodKind::SpatialTemporalL1),
            other => Err(CoreError::InvalidParameter {
                name: "method",
                reason: format!("unknown method '{other}' (expected pinv, temporal, st-l2 or st-l1)"),
            }),
        }
    }
}

/// One contamination setting of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Setting {
    /// Uncontaminated tracks.
    Clean,
    /// Gaussian noise with ratio r (σ = r·max|W|).
    Noise(f64),
    /// Outlier fraction of (frame, point) observations.
    Outliers(f64),
}

impl Setting {
    fn label(&self) -> &'static str {
        match self {
            Setting::Clean => "clean",
            Setting::Noise(_) => "noise",
            Setting::Outliers(_) => "outliers",
        }
    }

    fn value(&self) -> Option<f64> {
        match self {
            Setting::Clean => None,
            Setting::Noise(v) | Setting::Outliers(v) => Some(*v),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.value() {
            Some(v) => write!(f, "{} {}", self.label(), v),
            None => f.write_str(self.label()),
        }
    }
}

/// One (setting, seed, method) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: Setting,
    pub seed: u64,
    pub method: MethodKind,
    pub mean_error: f64,
    pub converged: bool,
    /// Full solver report for the robust pipeline rows; `None` for the
    /// closed-form baselines.
    pub report: Option<SolveReport>,
}

/// Per-setting, per-method statistics over the repeat seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub setting: Setting,
    pub method: MethodKind,
    pub mean_error: f64,
    /// Sample standard deviation over seeds (0 for a single run).
    pub std_error: f64,
    pub runs: usize,
    pub all_converged: bool,
}

/// Complete sweep output: every cell row plus per-setting aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
}

impl SweepTable {
    /// Aggregate for one (setting, method) pair, if present.
    pub fn aggregate(&self, setting: Setting, method: MethodKind) -> Option<&SweepAggregate> {
        self.aggregates
            .iter()
            .find(|a| a.setting == setting && a.method == method)
    }

    /// Renders the table as CSV: one `cell` record per (setting, seed,
    /// method) and one `aggregate` record per (setting, method).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("record,setting,value,seed,method,mean_error,std_error,converged\n");
        let fmt_value = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.rows {
            out.push_str(&format!(
                "cell,{},{},{},{},{},,{}\n",
                row.setting.label(),
                fmt_value(row.setting.value()),
                row.seed,
                row.method,
                row.mean_error,
                row.converged
            ));
        }
        for agg in &self.aggregates {
            out.push_str(&format!(
                "aggregate,{},{},,{},{},{},{}\n",
                agg.setting.label(),
                fmt_value(agg.setting.value()),
                agg.method,
                agg.mean_error,
                agg.std_error,
                agg.all_converged
            ));
        }
        out
    }
}

/// Runs the full experiment protocol for one scene.
///
/// Every noise ratio and outlier ratio becomes one setting; an empty
/// contamination grid runs a single clean cell. Each contaminated setting
/// is repeated with seeds 1..=repeats; all four methods run on every cell
/// against the same contaminated tracks. Solver non-convergence is recorded
/// in the rows, never aborting the sweep. Cells may execute in parallel;
/// the output ordering and values are deterministic.
pub fn run_sweep(
    spec: &SceneSpec,
    noise_grid: &[f64],
    outlier_grid: &[f64],
    cfg: &SolverConfig,
    repeats: usize,
) -> Result<SweepTable> {
    let scene = generate_scene(spec)?;
    run_sweep_on_scene(&scene, noise_grid, outlier_grid, cfg, repeats)
}

/// [`run_sweep`] over an existing scene (for example one loaded from disk)
/// instead of a generative spec. The scene's tracks are treated as the
/// clean observations that each cell contaminates.
pub fn run_sweep_on_scene(
    scene: &crate::synth::Scene,
    noise_grid: &[f64],
    outlier_grid: &[f64],
    cfg: &SolverConfig,
    repeats: usize,
) -> Result<SweepTable> {
    cfg.validate()?;
    if repeats == 0 {
        return Err(CoreError::InvalidParameter {
            name: "repeats",
            reason: "must be at least 1".into(),
        });
    }

    let mut settings: Vec<Setting> = Vec::new();
    settings.extend(noise_grid.iter().map(|r| Setting::Noise(*r)));
    settings.extend(outlier_grid.iter().map(|r| Setting::Outliers(*r)));
    if settings.is_empty() {
        settings.push(Setting::Clean);
    }

    let mut cells: Vec<(Setting, u64)> = Vec::new();
    for setting in &settings {
        match setting {
            Setting::Clean => cells.push((*setting, 0)),
            _ => cells.extend((1..=repeats as u64).map(|seed| (*setting, seed))),
        }
    }

    let cell_rows: Vec<Result<Vec<SweepRow>>> = cells
        .par_iter()
        .map(|&(setting, seed)| run_cell(scene, setting, seed, cfg))
        .collect();
    let mut rows = Vec::with_capacity(cells.len() * 4);
    for cell in cell_rows {
        rows.extend(cell?);
    }

    let mut aggregates = Vec::new();
    for setting in &settings {
        for method in MethodKind::all() {
            let errors: Vec<f64> = rows
                .iter()
                .filter(|r| r.setting == *setting && r.method == method)
                .map(|r| r.mean_error)
                .collect();
            let all_converged = rows
                .iter()
                .filter(|r| r.setting == *setting && r.method == method)
                .all(|r| r.converged);
            let n = errors.len();
            let mean = errors.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            aggregates.push(SweepAggregate {
                setting: *setting,
                method,
                mean_error: mean,
                std_error: std,
                runs: n,
                all_converged,
            });
        }
    }

    Ok(SweepTable { rows, aggregates })
}

fn run_cell(
    scene: &crate::synth::Scene,
    setting: Setting,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<Vec<SweepRow>> {
    let w = match setting {
        Setting::Clean => scene.tracks.clone(),
        Setting::Noise(r) => inject_noise(&scene.tracks, r, seed)?,
        Setting::Outliers(r) => inject_outliers(&scene.tracks, r, seed)?.0,
    };
    let r = &scene.rotations;
    let gt = &scene.ground_truth;
    let mut rows = Vec::with_capacity(4);

    let s_pinv = solve_pseudo_inverse(&w, r)?;
    rows.push(SweepRow {
        setting,
        seed,
        method: MethodKind::PseudoInverse,
        mean_error: rms_error(&s_pinv, gt)?.mean_error,
        converged: true,
        report: None,
    });

    let s_temporal = solve_temporal(&w, r, cfg.lambda1)?;
    rows.push(SweepRow {
        setting,
        seed,
        method: MethodKind::TemporalOnly,
        mean_error: rms_error(&s_temporal, gt)?.mean_error,
        converged: true,
        report: None,
    });

    let op_h = build_temporal_operator(w.frames(), 1)?;
    let op_a = build_laplacian(scene.topology.clone());
    let unit_weights = IrlsWeights::uniform(w.frames(), w.points(), 1.0);
    let (s_l2, l2_report) =
        solve_quadratic_subproblem(&w, r, &unit_weights, &op_h, &op_a, cfg, &s_temporal)?;
    rows.push(SweepRow {
        setting,
        seed,
        method: MethodKind::SpatialTemporalL2,
        mean_error: rms_error(&s_l2, gt)?.mean_error,
        converged: l2_report.converged,
        report: None,
    });

    let (s_l1, l1_report) = irls_reconstruct(&w, r, &scene.topology, cfg, None)?;
    rows.push(SweepRow {
        setting,
        seed,
        method: MethodKind::SpatialTemporalL1,
        mean_error: rms_error(&s_l1, gt)?.mean_error,
        converged: l1_report.converged,
        report: Some(l1_report),
    });

    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::RotationPath;

    fn stack(frames: usize, points: usize, f: impl Fn(usize, usize) -> f64) -> ShapeStack {
        ShapeStack::new(DMatrix::from_fn(3 * frames, points, f)).unwrap()
    }

    fn wavy(frames: usize, points: usize) -> ShapeStack {
        stack(frames, points, |r, c| {
            ((r * 7 + c * 3) % 11) as f64 * 0.4 - 1.7 + (r as f64 * 0.23).sin()
        })
    }

    #[test]
    fn identical_stacks_have_zero_error() {
        let s = wavy(4, 9);
        let report = rms_error(&s, &s).unwrap();
        assert!(report.per_frame_error.iter().all(|e| *e == 0.0));
        assert_eq!(report.mean_error, 0.0);
        assert!(!report.flip_applied);
    }

    #[test]
    fn depth_flip_is_detected_and_resolved() {
        let gt = wavy(3, 8);
        let mut flipped = gt.data().clone();
        for i in 0..3 {
            for c in 0..8 {
                flipped[(3 * i + 2, c)] = -flipped[(3 * i + 2, c)];
            }
        }
        let report = rms_error(&ShapeStack::new(flipped).unwrap(), &gt).unwrap();
        assert!(report.flip_applied, "flip should be detected");
        assert!(
            report.mean_error < 1e-14,
            "flip-resolved error {} should vanish",
            report.mean_error
        );
    }

    #[test]
    fn uniform_scaling_gives_exactly_ten_percent() {
        let gt = wavy(5, 12);
        let scaled = ShapeStack::new(1.1 * gt.data()).unwrap();
        let report = rms_error(&scaled, &gt).unwrap();
        for (i, e) in report.per_frame_error.iter().enumerate() {
            assert!(
                (e - 0.1).abs() < 1e-12,
                "frame {i} error {e} should be 0.1"
            );
        }
        assert!((report.mean_error - 0.1).abs() < 1e-12);
    }

    #[test]
    fn per_frame_translations_do_not_change_the_error() {
        let gt = wavy(4, 10);
        let mut est = gt.data().clone();
        for i in 0..4 {
            for row in 0..3 {
                let offset = (i * 3 + row) as f64 * 0.9 - 2.0;
                for c in 0..10 {
                    est[(3 * i + row, c)] += offset;
                }
            }
        }
        let report = rms_error(&ShapeStack::new(est).unwrap(), &gt).unwrap();
        assert!(
            report.mean_error < 1e-12,
            "translated copy should have zero error, got {}",
            report.mean_error
        );
    }

    #[test]
    fn zero_ground_truth_frame_is_undefined() {
        let gt = ShapeStack::new(DMatrix::zeros(6, 5)).unwrap();
        let est = wavy(2, 5);
        assert!(matches!(
            rms_error(&est, &gt),
            Err(CoreError::UndefinedNormalization { frame: 0 })
        ));
    }

    #[test]
    fn mismatched_stacks_are_rejected() {
        assert!(matches!(
            rms_error(&wavy(3, 8), &wavy(3, 9)),
            Err(CoreError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn method_labels_round_trip() {
        for method in MethodKind::all() {
            assert_eq!(method.label().parse::<MethodKind>().unwrap(), method);
        }
        assert!("l2".parse::<MethodKind>().is_err());
    }

    fn tiny_spec() -> SceneSpec {
        SceneSpec {
            rows: 4,
            cols: 4,
            frames: 5,
            basis_rank: 1,
            deformation_amplitude: 0.4,
            rotation_path: RotationPath::swept([0.2, 1.0, 0.1], -0.3, 0.06, 5).unwrap(),
            seed: 2,
        }
    }

    #[test]
    fn empty_contamination_grid_runs_a_single_clean_cell() {
        let cfg = SolverConfig {
            lambda1: 0.5,
            lambda2: 1e-3,
            ..SolverConfig::default()
        };
        let table = run_sweep(&tiny_spec(), &[], &[], &cfg, 5).unwrap();
        assert_eq!(table.rows.len(), 4, "one row per method");
        assert!(table.rows.iter().all(|r| r.setting == Setting::Clean));
        assert_eq!(table.aggregates.len(), 4);
        assert!(table.aggregates.iter().all(|a| a.runs == 1 && a.std_error == 0.0));
    }

    #[test]
    fn sweep_row_counts_match_the_protocol() {
        let cfg = SolverConfig {
            lambda1: 0.5,
            lambda2: 1e-3,
            irls_max_iters: 5,
            ..SolverConfig::default()
        };
        let table = run_sweep(&tiny_spec(), &[0.02, 0.04], &[0.05], &cfg, 3).unwrap();
        // 3 settings × 3 seeds × 4 methods.
        assert_eq!(table.rows.len(), 36);
        assert_eq!(table.aggregates.len(), 12);
        for agg in &table.aggregates {
            assert_eq!(agg.runs, 3, "aggregate over 3 seeds for {:?}", agg.setting);
        }
        // Robust rows carry their solver reports.
        assert!(table
            .rows
            .iter()
            .filter(|r| r.method == MethodKind::SpatialTemporalL1)
            .all(|r| r.report.is_some()));
    }

    #[test]
    fn sweeps_are_bitwise_reproducible() {
        let cfg = SolverConfig {
            lambda1: 0.5,
            lambda2: 1e-3,
            irls_max_iters: 4,
            ..SolverConfig::default()
        };
        let a = run_sweep(&tiny_spec(), &[0.03], &[], &cfg, 2).unwrap();
        let b = run_sweep(&tiny_spec(), &[0.03], &[], &cfg, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}

//! Implementations of the four CLI subcommands. Each command is a thin shell:
//! the numerical work is a direct call into nrsfm-core, so outputs match the
//! corresponding library results exactly.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use nrsfm_core::prelude::*;
use serde::Serialize;

use nrsfm_cli::dataset::{self, Contamination, DatasetManifest, GridDims};
use nrsfm_cli::mesh;

use crate::{percent_normalized, EvaluateArgs, MethodArg, ReconstructArgs, SweepArgs, SynthesizeArgs};

/// `synthesize`: generate a scene and write it as a dataset directory.
pub fn cmd_synthesize(args: &SynthesizeArgs, seed: u64, output: Option<&Path>) -> Result<()> {
    let spec = args.scene.spec(args.grid, args.frames, seed)?;
    let scene = generate_scene(&spec)?;

    let dir = output.unwrap_or(Path::new("dataset"));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut tracks = scene.tracks.clone();
    let mut contamination = None;
    if args.noise.is_some() || args.outliers.is_some() {
        let mut record = Contamination {
            seed: Some(seed),
            ..Contamination::default()
        };
        if let Some(r) = args.noise {
            tracks = inject_noise(&tracks, r, seed)?;
            record.noise = Some(r);
        }
        if let Some(raw) = args.outliers {
            let ratio = percent_normalized(&[raw])[0];
            let (corrupted, mask) = inject_outliers(&tracks, ratio, seed)?;
            tracks = corrupted;
            dataset::write_outlier_mask(&dir.join("outliers.csv"), &mask)?;
            record.outliers = Some(ratio);
            record.outlier_count = Some(mask.len());
            record.outlier_mask = Some("outliers.csv".into());
        }
        contamination = Some(record);
    }

    dataset::write_matrix(&dir.join("tracks.bin"), tracks.data())?;
    dataset::write_matrix(&dir.join("gt-shape.bin"), scene.ground_truth.data())?;
    dataset::write_matrix(
        &dir.join("rotations.bin"),
        &dataset::rotation_matrix(&scene.rotations),
    )?;
    dataset::write_topology(&dir.join("topology.json"), &scene.topology)?;

    let manifest = DatasetManifest {
        version: dataset::MANIFEST_VERSION.to_string(),
        frames: args.frames,
        points: scene.topology.points(),
        grid: GridDims {
            rows: args.grid.rows,
            cols: args.grid.cols,
        },
        tracks: "tracks.bin".into(),
        topology: "topology.json".into(),
        ground_truth: Some("gt-shape.bin".into()),
        rotations: Some("rotations.bin".into()),
        contamination,
    };
    let manifest_path = dir.join(dataset::MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text + "\n")
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    println!("{}", manifest_path.display());
    Ok(())
}

/// Everything `report.json` records about a reconstruction run.
#[derive(Serialize)]
struct ReconstructionReport<'a> {
    method: &'static str,
    frames: usize,
    points: usize,
    /// Where the camera rotations came from: `dataset`, `csv`, or `estimated`.
    rotations: &'static str,
    /// Whether the tracks were centered per frame before solving (done only
    /// for estimated rotations, which require centered input).
    tracks_centered: bool,
    config: &'a SolverConfig,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solve: Option<SolveReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    subproblem: Option<SubproblemReport>,
    shape: &'static str,
    mesh_frames: usize,
}

/// `reconstruct`: solve for the shape sequence and export it.
pub fn cmd_reconstruct(args: &ReconstructArgs, cfg: &SolverConfig, output: Option<&Path>) -> Result<()> {
    let (mut tracks, topology, file_rotations) = if let Some(dir) = &args.dataset {
        let ds = dataset::load_dataset(dir)?;
        (ds.tracks, ds.topology, ds.rotations)
    } else {
        let csv_path = args
            .tracks_csv
            .as_ref()
            .context("provide a dataset directory or --tracks-csv")?;
        let grid = args
            .grid
            .context("--grid ROWSxCOLS is required with --tracks-csv")?;
        let tracks = TrackMatrix::new(dataset::read_matrix_csv(csv_path)?)?;
        let topology = GridTopology::full(grid.rows, grid.cols)?;
        ensure!(
            topology.points() == tracks.points(),
            "{}: tracks have {} points but --grid {}x{} implies {}",
            csv_path.display(),
            tracks.points(),
            grid.rows,
            grid.cols,
            topology.points()
        );
        (tracks, topology, None)
    };

    let mut tracks_centered = false;
    let (rotations, rotation_source) = if let Some(path) = &args.rotations_csv {
        let stack = dataset::rotation_stack_from_matrix(&dataset::read_matrix_csv(path)?)?;
        (stack, "csv")
    } else if let Some(stack) = file_rotations {
        (stack, "dataset")
    } else if args.estimate_rotations {
        let (centered, _offsets) = center_tracks(&tracks);
        tracks = centered;
        tracks_centered = true;
        (estimate_rigid_rotations(&tracks)?.into_stack(), "estimated")
    } else {
        bail!(
            "no camera rotations available: supply a dataset with a rotation file, \
             --rotations-csv, or --estimate-rotations"
        );
    };

    let frames = tracks.frames();
    let points = tracks.points();
    let (shape, converged, solve, subproblem) = match args.method {
        MethodArg::Pinv => (solve_pseudo_inverse(&tracks, &rotations)?, true, None, None),
        MethodArg::Temporal => (
            solve_temporal(&tracks, &rotations, cfg.lambda1)?,
            true,
            None,
            None,
        ),
        MethodArg::StL2 => {
            let op_h = build_temporal_operator(frames, 1)?;
            let op_a = build_laplacian(topology.clone());
            let weights = IrlsWeights::uniform(frames, points, 1.0);
            let init = solve_temporal(&tracks, &rotations, cfg.lambda1)?;
            let (s, report) =
                solve_quadratic_subproblem(&tracks, &rotations, &weights, &op_h, &op_a, cfg, &init)?;
            let converged = report.converged;
            (s, converged, None, Some(report))
        }
        MethodArg::StL1 => {
            let (s, report) = irls_reconstruct(&tracks, &rotations, &topology, cfg, None)?;
            let converged = report.converged;
            (s, converged, Some(report), None)
        }
    };

    let warning = (!converged).then(|| {
        "the solver stopped at its iteration limit before reaching tolerance".to_string()
    });

    let dir = output.unwrap_or(Path::new("reconstruction"));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    dataset::write_matrix(&dir.join("shape.bin"), shape.data())?;
    let mesh_frames = mesh::write_frame_meshes(&dir.join("meshes"), &shape, &topology)?;

    let report = ReconstructionReport {
        method: args.method.label(),
        frames,
        points,
        rotations: rotation_source,
        tracks_centered,
        config: cfg,
        converged,
        warning: warning.clone(),
        solve,
        subproblem,
        shape: "shape.bin",
        mesh_frames,
    };
    let report_path = dir.join("report.json");
    let text = serde_json::to_string_pretty(&report)?;
    fs::write(&report_path, text + "\n")
        .with_context(|| format!("writing {}", report_path.display()))?;

    if let Some(w) = &warning {
        eprintln!("warning: {w}");
    }
    println!("{}", report_path.display());
    Ok(())
}

/// `evaluate`: normalized RMS error of an estimate against ground truth.
pub fn cmd_evaluate(args: &EvaluateArgs, output: Option<&Path>) -> Result<()> {
    let estimate = ShapeStack::new(dataset::read_matrix(&args.estimate)?)?;
    let ground_truth = ShapeStack::new(dataset::read_matrix(&args.ground_truth)?)?;
    let report = rms_error(&estimate, &ground_truth)?;

    println!("{:.4}", report.mean_error);
    if report.flip_applied {
        println!("note: a global depth flip was applied to the estimate before comparison");
    }

    let path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("error-report.json"));
    let text = serde_json::to_string_pretty(&report)?;
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// `sweep`: error tables over noise and outlier grids.
pub fn cmd_sweep(args: &SweepArgs, cfg: &SolverConfig, seed: u64, output: Option<&Path>) -> Result<()> {
    let noise = args.noise.as_ref().map(|s| s.0.clone()).unwrap_or_default();
    let outliers = args
        .outliers
        .as_ref()
        .map(|s| percent_normalized(&s.0))
        .unwrap_or_default();

    let table = if let Some(dir) = &args.dataset {
        let ds = dataset::load_dataset(dir)?;
        let rotations = ds
            .rotations
            .context("sweeping a dataset needs its rotation file")?;
        let ground_truth = ds
            .ground_truth
            .context("sweeping a dataset needs its ground-truth shape file")?;
        let scene = Scene {
            tracks: ds.tracks,
            rotations,
            ground_truth,
            topology: ds.topology,
        };
        run_sweep_on_scene(&scene, &noise, &outliers, cfg, args.repeats)?
    } else {
        let grid = args
            .grid
            .context("provide a dataset directory or --grid with --frames")?;
        let frames = args.frames.context("provide --frames with --grid")?;
        let spec = args.scene.spec(grid, frames, seed)?;
        run_sweep(&spec, &noise, &outliers, cfg, args.repeats)?
    };

    let dir = output.unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv_path = dir.join("sweep.csv");
    fs::write(&csv_path, table.to_csv_string())
        .with_context(|| format!("writing {}", csv_path.display()))?;
    let json_path = dir.join("sweep.json");
    let text = serde_json::to_string_pretty(&table)?;
    fs::write(&json_path, text + "\n")
        .with_context(|| format!("writing {}", json_path.display()))?;
    println!("{}", csv_path.display());
    println!("{}", json_path.display());
    Ok(())
}

//! On-disk dataset layout: a JSON manifest describing flat binary matrices.
//!
//! A dataset is a directory containing `manifest.json` plus the matrix files
//! it names. Matrix files are little-endian and start with a 16-byte header:
//! the 8-byte magic `NRSFMB01`, then `rows` and `cols` as `u32`, followed by
//! `rows × cols` IEEE-754 `f64` values in row-major order. The reader rejects
//! bad magic, truncated payloads, and trailing bytes, so round trips are
//! byte-exact.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use nalgebra::{DMatrix, Matrix2x3};
use nrsfm_core::prelude::*;
use serde::{Deserialize, Serialize};

/// Leading bytes of every binary matrix file.
pub const MATRIX_MAGIC: [u8; 8] = *b"NRSFMB01";
/// Format tag checked when a manifest is loaded.
pub const MANIFEST_VERSION: &str = "nrsfm-dataset/1";
/// Manifest file name inside a dataset directory.
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes a matrix as a flat binary file (16-byte header + row-major f64).
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let file =
        File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    out.write_all(&MATRIX_MAGIC)?;
    let rows = u32::try_from(m.nrows()).context("matrix has too many rows for the format")?;
    let cols = u32::try_from(m.ncols()).context("matrix has too many columns for the format")?;
    out.write_all(&rows.to_le_bytes())?;
    out.write_all(&cols.to_le_bytes())?;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.write_all(&m[(r, c)].to_le_bytes())?;
        }
    }
    out.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Reads a binary matrix file written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut input = BufReader::new(file);
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .with_context(|| format!("{}: file too short for a header", path.display()))?;
    ensure!(
        magic == MATRIX_MAGIC,
        "{}: not a matrix file (bad magic {:?})",
        path.display(),
        magic
    );
    let mut dim = [0u8; 4];
    input.read_exact(&mut dim)?;
    let rows = u32::from_le_bytes(dim) as usize;
    input.read_exact(&mut dim)?;
    let cols = u32::from_le_bytes(dim) as usize;
    let mut payload = vec![0u8; rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).context("matrix dimensions overflow")?];
    input.read_exact(&mut payload).with_context(|| {
        format!(
            "{}: payload truncated (expected {rows}x{cols} values)",
            path.display()
        )
    })?;
    let mut rest = [0u8; 1];
    ensure!(
        input.read(&mut rest)? == 0,
        "{}: trailing bytes after the {rows}x{cols} payload",
        path.display()
    );
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let at = (r * cols + c) * 8;
            m[(r, c)] = f64::from_le_bytes(payload[at..at + 8].try_into().expect("8-byte slice"));
        }
    }
    Ok(m)
}

/// Reads a headerless CSV of numbers into a matrix, one row per record.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("reading {}", path.display()))?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().with_context(|| {
                    format!("{}: record {}: not a number: {field:?}", path.display(), line + 1)
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    ensure!(!rows.is_empty(), "{}: no records", path.display());
    Ok(DMatrix::from_fn(rows.len(), rows[0].len(), |r, c| rows[r][c]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TopologyFile {
    rows: usize,
    cols: usize,
    /// Row-major presence flags, `rows × cols` entries.
    present: Vec<bool>,
}

/// Writes a grid topology as JSON presence flags.
pub fn write_topology(path: &Path, topo: &GridTopology) -> Result<()> {
    let file = TopologyFile {
        rows: topo.rows(),
        cols: topo.cols(),
        present: topo.point_index().iter().map(Option::is_some).collect(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Reads a topology file written by [`write_topology`].
pub fn read_topology(path: &Path) -> Result<GridTopology> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: TopologyFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    ensure!(
        file.present.len() == file.rows * file.cols,
        "{}: {} presence flags for a {}x{} grid",
        path.display(),
        file.present.len(),
        file.rows,
        file.cols
    );
    let topo = GridTopology::from_mask(file.rows, file.cols, &file.present)?;
    Ok(topo)
}

/// Flattens a rotation stack into the 2F×3 matrix stored on disk.
pub fn rotation_matrix(r: &RotationStack) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * r.frames(), 3);
    for (i, block) in r.blocks().iter().enumerate() {
        for row in 0..2 {
            for col in 0..3 {
                m[(2 * i + row, col)] = block[(row, col)];
            }
        }
    }
    m
}

/// Rebuilds a rotation stack from a 2F×3 matrix of stacked camera blocks.
pub fn rotation_stack_from_matrix(m: &DMatrix<f64>) -> Result<RotationStack> {
    ensure!(
        m.ncols() == 3 && m.nrows() > 0 && m.nrows() % 2 == 0,
        "rotation matrix must be 2Fx3, got {}x{}",
        m.nrows(),
        m.ncols()
    );
    let blocks = (0..m.nrows() / 2)
        .map(|i| Matrix2x3::from_fn(|row, col| m[(2 * i + row, col)]))
        .collect();
    let stack = assemble_rotation(blocks)?;
    Ok(stack)
}

/// Writes an outlier mask as a two-column CSV with a `frame,point` header.
pub fn write_outlier_mask(path: &Path, mask: &OutlierMask) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    writer.write_record(["frame", "point"])?;
    for (frame, point) in mask.pairs() {
        writer.write_record([frame.to_string(), point.to_string()])?;
    }
    writer
        .flush()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Grid dimensions as recorded in the manifest.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridDims {
    pub rows: usize,
    pub cols: usize,
}

/// Contamination applied on top of the clean tracks, if any.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Contamination {
    /// Gaussian noise ratio r (σ = r·max|W|).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    /// Fraction of (frame, point) observations replaced by outliers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outliers: Option<f64>,
    /// Seed the contamination was drawn with.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Number of corrupted observations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outlier_count: Option<usize>,
    /// CSV file listing the corrupted (frame, point) pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outlier_mask: Option<String>,
}

/// `manifest.json`: declared dimensions plus relative paths to the files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub frames: usize,
    pub points: usize,
    pub grid: GridDims,
    /// 2F×P track matrix file.
    pub tracks: String,
    /// Topology JSON file.
    pub topology: String,
    /// 3F×P ground-truth shape file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    /// 2F×3 stacked camera blocks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotations: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contamination: Option<Contamination>,
}

/// A loaded dataset with every declared dimension verified.
pub struct Dataset {
    pub tracks: TrackMatrix,
    pub topology: GridTopology,
    pub rotations: Option<RotationStack>,
    pub ground_truth: Option<ShapeStack>,
}

/// Loads and validates the dataset in `dir`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", manifest_path.display()))?;
    ensure!(
        manifest.version == MANIFEST_VERSION,
        "{}: unsupported dataset version {:?} (this build reads {MANIFEST_VERSION:?})",
        manifest_path.display(),
        manifest.version
    );

    let tracks_raw = read_matrix(&dir.join(&manifest.tracks))?;
    if tracks_raw.nrows() != 2 * manifest.frames || tracks_raw.ncols() != manifest.points {
        bail!(
            "{}: tracks file is {}x{} but the manifest declares {} frames and {} points",
            manifest.tracks,
            tracks_raw.nrows(),
            tracks_raw.ncols(),
            manifest.frames,
            manifest.points
        );
    }
    let tracks = TrackMatrix::new(tracks_raw)?;

    let topology = read_topology(&dir.join(&manifest.topology))?;
    ensure!(
        topology.rows() == manifest.grid.rows
            && topology.cols() == manifest.grid.cols
            && topology.points() == manifest.points,
        "{}: topology is {}x{} with {} points but the manifest declares {}x{} with {}",
        manifest.topology,
        topology.rows(),
        topology.cols(),
        topology.points(),
        manifest.grid.rows,
        manifest.grid.cols,
        manifest.points
    );

    let rotations = match &manifest.rotations {
        Some(rel) => {
            let m = read_matrix(&dir.join(rel))?;
            ensure!(
                m.nrows() == 2 * manifest.frames,
                "{rel}: rotation file has {} rows but the manifest declares {} frames",
                m.nrows(),
                manifest.frames
            );
            Some(rotation_stack_from_matrix(&m)?)
        }
        None => None,
    };

    let ground_truth = match &manifest.ground_truth {
        Some(rel) => {
            let m = read_matrix(&dir.join(rel))?;
            if m.nrows() != 3 * manifest.frames || m.ncols() != manifest.points {
                bail!(
                    "{rel}: ground-truth file is {}x{} but the manifest declares {} frames and {} points",
                    m.nrows(),
                    m.ncols(),
                    manifest.frames,
                    manifest.points
                );
            }
            Some(ShapeStack::new(m)?)
        }
        None => None,
    };

    Ok(Dataset {
        tracks,
        topology,
        rotations,
        ground_truth,
    })
}

//! Measurement-model types: track matrices, camera stacks, shape stacks, and
//! the pixel-grid topology used by the spatial regularizer.
//!
//! Conventions
//! -----------
//! * `W` is 2F×P: frame `i` occupies rows `2i` (u-coordinates) and `2i+1`
//!   (v-coordinates), one column per tracked point.
//! * `R` is the block-diagonal stack of F row-orthonormal 2×3 camera blocks;
//!   it is never materialized as a dense 2F×3F matrix.
//! * `S` is 3F×P: frame `i` occupies rows `3i..3i+3` (x, y, z).
//! * `vec`/`ivec` flatten a shape stack row-major (coordinate rows stacked in
//!   order), so the conceptual spatial filter acts block-diagonally on it.

use nalgebra::{DMatrix, DVector, Matrix2x3};

use crate::error::{CoreError, Result};

/// Tolerance for the row-orthonormality check `R_i R_iᵀ = I₂`.
pub const ROTATION_ORTHONORMALITY_TOL: f64 = 1e-8;

fn ensure_finite(data: &DMatrix<f64>, what: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CoreError::DataValidation {
            reason: format!("{what} contains non-finite entries"),
        })
    }
}

/// 2F×P stacked 2D feature tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackMatrix {
    frames: usize,
    points: usize,
    data: DMatrix<f64>,
}

impl TrackMatrix {
    /// Wraps a 2F×P matrix of finite track coordinates.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = data.shape();
        if rows == 0 || rows % 2 != 0 || cols == 0 {
            return Err(CoreError::ShapeMismatch {
                expected: "2F x P with F >= 1, P >= 1".into(),
                found: format!("{rows} x {cols}"),
            });
        }
        ensure_finite(&data, "track matrix")?;
        Ok(Self {
            frames: rows / 2,
            points: cols,
            data,
        })
    }

    /// Number of frames F.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Number of tracked points P.
    pub fn points(&self) -> usize {
        self.points
    }

    /// The underlying 2F×P matrix.
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Consumes the wrapper and returns the raw matrix.
    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    /// Largest absolute coordinate, used for noise and smoothing scales.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Whether every row mean is within `1e-6 * max|W|` of zero.
    pub fn is_centered(&self) -> bool {
        let tol = 1e-6 * self.max_abs().max(f64::MIN_POSITIVE);
        (0..2 * self.frames).all(|r| self.data.row(r).mean().abs() <= tol)
    }
}

/// Subtracts each row's mean so every frame is centered on the object.
///
/// Returns the centered tracks together with the per-row offsets that were
/// removed, so reconstructions can be reported in the original image frame.
pub fn center_tracks(w: &TrackMatrix) -> (TrackMatrix, DVector<f64>) {
    let mut data = w.data.clone();
    let mut offsets = DVector::zeros(data.nrows());
    for r in 0..data.nrows() {
        let mean = data.row(r).mean();
        offsets[r] = mean;
        data.row_mut(r).add_scalar_mut(-mean);
    }
    (
        TrackMatrix {
            frames: w.frames,
            points: w.points,
            data,
        },
        offsets,
    )
}

/// F row-orthonormal 2×3 camera blocks forming the block-diagonal operator R.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationStack {
    blocks: Vec<Matrix2x3<f64>>,
}

/// Validates the blocks and assembles the block-diagonal camera operator.
pub fn assemble_rotation(blocks: Vec<Matrix2x3<f64>>) -> Result<RotationStack> {
    if blocks.is_empty() {
        return Err(CoreError::ShapeMismatch {
            expected: "at least one 2x3 camera block".into(),
            found: "0 blocks".into(),
        });
    }
    for (i, b) in blocks.iter().enumerate() {
        if !b.iter().all(|v| v.is_finite()) {
            return Err(CoreError::RotationInvalid {
                frame: i,
                reason: "non-finite entries".into(),
            });
        }
        let gram = b * b.transpose();
        let dev = (gram - nalgebra::Matrix2::identity()).abs().max();
        if dev > ROTATION_ORTHONORMALITY_TOL {
            return Err(CoreError::RotationInvalid {
                frame: i,
                reason: format!("max |R_i R_i^T - I| = {dev:.3e} exceeds {ROTATION_ORTHONORMALITY_TOL:.0e}"),
            });
        }
    }
    Ok(RotationStack { blocks })
}

impl RotationStack {
    /// Number of frames F.
    pub fn frames(&self) -> usize {
        self.blocks.len()
    }

    /// The 2×3 camera block of frame `i`.
    pub fn block(&self, i: usize) -> &Matrix2x3<f64> {
        &self.blocks[i]
    }

    /// All camera blocks in frame order.
    pub fn blocks(&self) -> &[Matrix2x3<f64>] {
        &self.blocks
    }

    /// Applies the block-diagonal operator: returns `R * S` (2F×P) for a raw
    /// 3F×P matrix, frame by frame, without assembling a dense R.
    pub fn apply_matrix(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let f = self.frames();
        let p = s.ncols();
        assert_eq!(s.nrows(), 3 * f, "shape stack rows must equal 3F");
        let mut out = DMatrix::zeros(2 * f, p);
        for i in 0..f {
            let prod = self.blocks[i] * s.view((3 * i, 0), (3, p));
            out.view_mut((2 * i, 0), (2, p)).copy_from(&prod);
        }
        out
    }

    /// Applies the transpose operator: returns `Rᵀ * X` (3F×P) for a raw
    /// 2F×P matrix.
    pub fn transpose_apply_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let f = self.frames();
        let p = x.ncols();
        assert_eq!(x.nrows(), 2 * f, "track matrix rows must equal 2F");
        let mut out = DMatrix::zeros(3 * f, p);
        for i in 0..f {
            let prod = self.blocks[i].transpose() * x.view((2 * i, 0), (2, p));
            out.view_mut((3 * i, 0), (3, p)).copy_from(&prod);
        }
        out
    }
}

/// 3F×P stacked shape sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeStack {
    frames: usize,
    points: usize,
    data: DMatrix<f64>,
}

impl ShapeStack {
    /// Wraps a 3F×P matrix of finite world coordinates.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = data.shape();
        if rows == 0 || rows % 3 != 0 || cols == 0 {
            return Err(CoreError::ShapeMismatch {
                expected: "3F x P with F >= 1, P >= 1".into(),
                found: format!("{rows} x {cols}"),
            });
        }
        ensure_finite(&data, "shape stack")?;
        Ok(Self {
            frames: rows / 3,
            points: cols,
            data,
        })
    }

    /// Number of frames F.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Number of points P.
    pub fn points(&self) -> usize {
        self.points
    }

    /// The underlying 3F×P matrix.
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Consumes the wrapper and returns the raw matrix.
    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    /// The 3×P block of frame `i`.
    pub fn frame(&self, i: usize) -> DMatrix<f64> {
        self.data.view((3 * i, 0), (3, self.points)).into_owned()
    }

    /// Row-major flattening: entry `r * P + p` holds `S[r, p]`.
    pub fn vec(&self) -> DVector<f64> {
        let (rows, cols) = self.data.shape();
        let mut v = DVector::zeros(rows * cols);
        for r in 0..rows {
            for p in 0..cols {
                v[r * cols + p] = self.data[(r, p)];
            }
        }
        v
    }

    /// Inverse of [`ShapeStack::vec`]: rebuilds the 3F×P stack.
    pub fn ivec(frames: usize, points: usize, v: &DVector<f64>) -> Result<Self> {
        if v.len() != 3 * frames * points {
            return Err(CoreError::ShapeMismatch {
                expected: format!("vector of length {}", 3 * frames * points),
                found: format!("length {}", v.len()),
            });
        }
        let mut data = DMatrix::zeros(3 * frames, points);
        for r in 0..3 * frames {
            for p in 0..points {
                data[(r, p)] = v[r * points + p];
            }
        }
        Self::new(data)
    }
}

/// Reprojects a shape stack through the cameras: `W = R S`.
pub fn reproject(r: &RotationStack, s: &ShapeStack) -> Result<TrackMatrix> {
    if r.frames() != s.frames() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{} frames (rotation stack)", r.frames()),
            found: format!("{} frames (shape stack)", s.frames()),
        });
    }
    TrackMatrix::new(r.apply_matrix(s.data()))
}

/// Pixel-grid topology: which grid cells carry a tracked point, and the
/// mapping from cells to track-matrix columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTopology {
    rows: usize,
    cols: usize,
    point_index: Vec<Option<usize>>,
    points: usize,
}

/// The 8-connected neighbor offsets of a grid cell.
const NEIGHBOR_OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

impl GridTopology {
    /// Builds a topology from an explicit cell-to-column mapping.
    ///
    /// Present cells must map to distinct indices covering `0..P` exactly.
    pub fn new(rows: usize, cols: usize, point_index: Vec<Option<usize>>) -> Result<Self> {
        if rows == 0 || cols == 0 || point_index.len() != rows * cols {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{rows}*{cols} cell entries"),
                found: format!("{}", point_index.len()),
            });
        }
        let points = point_index.iter().flatten().count();
        if points == 0 {
            return Err(CoreError::DataValidation {
                reason: "topology has no present cells".into(),
            });
        }
        let mut seen = vec![false; points];
        for idx in point_index.iter().flatten() {
            if *idx >= points || seen[*idx] {
                return Err(CoreError::DataValidation {
                    reason: format!("point indices must cover 0..{points} exactly once"),
                });
            }
            seen[*idx] = true;
        }
        Ok(Self {
            rows,
            cols,
            point_index,
            points,
        })
    }

    /// Full rectangular grid; cells numbered row-major.
    pub fn full(rows: usize, cols: usize) -> Result<Self> {
        let point_index = (0..rows * cols).map(Some).collect();
        Self::new(rows, cols, point_index)
    }

    /// Grid with absent cells given by a row-major presence mask; present
    /// cells are numbered row-major in order of appearance.
    pub fn from_mask(rows: usize, cols: usize, present: &[bool]) -> Result<Self> {
        if present.len() != rows * cols {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{rows}*{cols} mask entries"),
                found: format!("{}", present.len()),
            });
        }
        let mut next = 0usize;
        let point_index = present
            .iter()
            .map(|&p| {
                if p {
                    let idx = next;
                    next += 1;
                    Some(idx)
                } else {
                    None
                }
            })
            .collect();
        Self::new(rows, cols, point_index)
    }

    /// Grid rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Grid columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of present cells P.
    pub fn points(&self) -> usize {
        self.points
    }

    /// Column index of cell `(r, c)`, or `None` for absent/out-of-range cells.
    pub fn index_of(&self, r: isize, c: isize) -> Option<usize> {
        if r < 0 || c < 0 || r as usize >= self.rows || c as usize >= self.cols {
            return None;
        }
        self.point_index[r as usize * self.cols + c as usize]
    }

    /// The raw cell-to-column mapping, row-major.
    pub fn point_index(&self) -> &[Option<usize>] {
        &self.point_index
    }

    /// Column indices of the present 8-neighbors of cell `(r, c)`.
    pub fn neighbors(&self, r: usize, c: usize) -> Vec<usize> {
        NEIGHBOR_OFFSETS
            .iter()
            .filter_map(|&(dr, dc)| self.index_of(r as isize + dr, c as isize + dc))
            .collect()
    }

    /// Iterates over present cells as `(row, col, column index)`.
    pub fn present_cells(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (0..self.cols).filter_map(move |c| {
                self.point_index[r * self.cols + c].map(|idx| (r, c, idx))
            })
        })
    }
}

//! 8-neighbor Laplacian spatial smoothness operator.
//!
//! The operator is a sparse P×P matrix L over the grid points: row j has
//! center weight −(number of present 8-neighbors of j) and +1 for each
//! present neighbor, so every row sums to zero and constant shapes are
//! never penalized. On a fully interior point this is the classic 3×3
//! kernel (center −8, eight +1). At grid borders and around absent cells
//! the stencil is truncated to the neighbors that exist.
//!
//! Conceptually the spatial penalty acts on vec(S) through a block-diagonal
//! matrix with 3F copies of L; that matrix is never materialized. Instead L
//! is applied identically to each of the 3F coordinate rows of S, in
//! difference form `out[j] = Σ_{k∈N(j)} (S_k − S_j)` so that constant rows
//! filter to exact zeros.

use nalgebra::DMatrix;

use crate::error::{CoreError, Result};
use crate::model::{GridTopology, ShapeStack};

/// Sparse spatial Laplacian bound to the grid topology it was built from.
///
/// Only the neighbor lists are stored (CSR-style row pointers plus column
/// indices); off-diagonal weights are implicitly +1 and the diagonal is the
/// negated neighbor count.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialOperator {
    topology: GridTopology,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

/// Builds the truncated-stencil 8-neighbor Laplacian for a grid topology.
///
/// Isolated points (no present neighbors) get an all-zero row and are left
/// unconstrained by the spatial term.
pub fn build_laplacian(topology: GridTopology) -> SpatialOperator {
    let points = topology.points();
    let mut row_ptr = Vec::with_capacity(points + 1);
    let mut col_idx = Vec::new();
    row_ptr.push(0);
    // Walk points in index order so rows line up with shape columns.
    let mut cells: Vec<(usize, usize, usize)> = topology
        .present_cells()
        .map(|(r, c, idx)| (idx, r, c))
        .collect();
    cells.sort_unstable();
    for (idx, r, c) in cells {
        debug_assert_eq!(idx, row_ptr.len() - 1, "present_cells must cover 0..P");
        let mut neighbors = topology.neighbors(r, c);
        neighbors.sort_unstable();
        col_idx.extend_from_slice(&neighbors);
        row_ptr.push(col_idx.len());
    }
    SpatialOperator {
        topology,
        row_ptr,
        col_idx,
    }
}

impl SpatialOperator {
    /// The grid topology this operator was built from.
    pub fn topology(&self) -> &GridTopology {
        &self.topology
    }

    /// Number of grid points P.
    pub fn points(&self) -> usize {
        self.topology.points()
    }

    /// Present neighbors of point `j`, sorted by index.
    pub fn neighbors_of(&self, j: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[j]..self.row_ptr[j + 1]]
    }

    /// Number of present neighbors of point `j` (the negated center weight).
    pub fn degree(&self, j: usize) -> usize {
        self.row_ptr[j + 1] - self.row_ptr[j]
    }

    /// Applies L to every row of a matrix: `out = M·Lᵀ`.
    ///
    /// Computed in difference form so constant rows map to exact zeros.
    pub fn apply_to_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.points();
        assert_eq!(m.ncols(), p, "matrix columns must equal grid points");
        let mut out = DMatrix::zeros(m.nrows(), p);
        for j in 0..p {
            for &k in self.neighbors_of(j) {
                for row in 0..m.nrows() {
                    out[(row, j)] += m[(row, k)] - m[(row, j)];
                }
            }
        }
        out
    }

    /// Applies LᵀL to every row of a matrix (L is symmetric, so this is two
    /// passes of `apply_to_matrix`).
    pub fn gram_apply_to_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.apply_to_matrix(&self.apply_to_matrix(m))
    }

    /// Dense P×P form of L, for small-grid tests and diagnostics.
    pub fn dense(&self) -> DMatrix<f64> {
        let p = self.points();
        let mut out = DMatrix::zeros(p, p);
        for j in 0..p {
            out[(j, j)] = -(self.degree(j) as f64);
            for &k in self.neighbors_of(j) {
                out[(j, k)] = 1.0;
            }
        }
        out
    }
}

/// Filters every coordinate row of a shape stack through the Laplacian.
pub fn apply_spatial(op: &SpatialOperator, s: &ShapeStack) -> Result<ShapeStack> {
    if s.points() != op.points() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{} points (spatial operator)", op.points()),
            found: format!("{} points (shape stack)", s.points()),
        });
    }
    ShapeStack::new(op.apply_to_matrix(s.data()))
}

//! Camera rotation ingestion: validation/projection of provided blocks and
//! a rigid-factorization fallback estimator.
//!
//! The reconstruction pipeline treats the per-frame 2×3 camera blocks as
//! fixed inputs. The primary path is ingesting known rotations (synthetic
//! scenes carry their ground truth); [`estimate_rigid_rotations`] is a
//! clearly-labeled fallback that factorizes the track matrix as if the
//! scene were rigid — rank-3 truncation followed by a metric upgrade — and
//! is adequate for demos on gently deforming data, not a substitute for a
//! dedicated non-rigid rotation solver.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector3};

use crate::error::{CoreError, Result};
use crate::model::{assemble_rotation, RotationStack, TrackMatrix};

/// How a [`RotationSource`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationMode {
    /// Blocks supplied by the caller and projected to orthonormality.
    Provided,
    /// Blocks recovered by the rigid-factorization fallback.
    Estimated,
}

/// A validated rotation stack together with per-frame diagnostics.
#[derive(Debug, Clone)]
pub struct RotationSource {
    mode: RotationMode,
    stack: RotationStack,
    diagnostics: Vec<f64>,
}

impl RotationSource {
    /// Whether the blocks were provided or estimated.
    pub fn mode(&self) -> RotationMode {
        self.mode
    }

    /// The validated, row-orthonormal rotation stack.
    pub fn stack(&self) -> &RotationStack {
        &self.stack
    }

    /// Consumes the source, returning the rotation stack.
    pub fn into_stack(self) -> RotationStack {
        self.stack
    }

    /// Pre-projection orthonormality residual per frame: max_k |σ_k − 1|
    /// over the block's singular values.
    pub fn diagnostics(&self) -> &[f64] {
        &self.diagnostics
    }
}

/// Projects one block to the nearest row-orthonormal matrix (singular
/// values snapped to 1), returning it with the pre-projection residual.
fn project_block(block: &Matrix2x3<f64>, frame: usize) -> Result<(Matrix2x3<f64>, f64)> {
    let svd = block.svd(true, true);
    let sigma = svd.singular_values;
    if !(sigma[1] >= 1e-6) {
        return Err(CoreError::DegenerateRotation {
            frame,
            sigma: sigma[1],
        });
    }
    let u = svd.u.expect("SVD with compute_u");
    let v_t = svd.v_t.expect("SVD with compute_v");
    let projected = u * v_t;
    let residual = (sigma[0] - 1.0).abs().max((sigma[1] - 1.0).abs());
    Ok((projected, residual))
}

/// Validates caller-provided camera blocks.
///
/// Each block is projected to the nearest row-orthonormal 2×3 matrix; the
/// pre-projection residuals are kept as diagnostics. A block whose second
/// singular value is below 10⁻⁶ carries no usable viewing plane and is
/// rejected.
pub fn validate_rotations(blocks: Vec<Matrix2x3<f64>>) -> Result<RotationSource> {
    let mut projected = Vec::with_capacity(blocks.len());
    let mut diagnostics = Vec::with_capacity(blocks.len());
    for (frame, block) in blocks.iter().enumerate() {
        if block.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::RotationInvalid {
                frame,
                reason: "block contains non-finite entries".into(),
            });
        }
        let (proj, residual) = project_block(block, frame)?;
        projected.push(proj);
        diagnostics.push(residual);
    }
    Ok(RotationSource {
        mode: RotationMode::Provided,
        stack: assemble_rotation(projected)?,
        diagnostics,
    })
}

/// Estimates per-frame rotations under a rigid-scene assumption.
///
/// Factorizes centered tracks via their top-3 singular triplets, solves the
/// 6-parameter symmetric corrective Gram matrix from the per-frame
/// orthonormality constraints in least squares, applies its Cholesky-like
/// square root, and projects each frame block to orthonormality. The global
/// rotation ambiguity is fixed by mapping the first frame to [I₂|0].
pub fn estimate_rigid_rotations(w: &TrackMatrix) -> Result<RotationSource> {
    let f = w.frames();
    let p = w.points();
    if f < 3 || p < 4 {
        return Err(CoreError::DataValidation {
            reason: format!("rigid estimation needs F >= 3 and P >= 4, got F = {f}, P = {p}"),
        });
    }
    if !w.is_centered() {
        return Err(CoreError::DataValidation {
            reason: "tracks must be centered per frame (see center_tracks) before estimation".into(),
        });
    }

    let svd = w.data().clone().svd(true, true);
    let sv = &svd.singular_values;
    let tol = 1e-8 * sv[0];
    let rank = sv.iter().filter(|s| **s > tol).count();
    if rank < 3 {
        return Err(CoreError::DegenerateMotion { rank });
    }
    let u = svd.u.expect("SVD with compute_u");
    // Motion factor candidate M̂ = U₃ √Σ₃ (2F×3), known only up to a 3×3
    // invertible corrective transform.
    let mut m_hat = DMatrix::zeros(2 * f, 3);
    for k in 0..3 {
        let scale = sv[k].sqrt();
        for row in 0..2 * f {
            m_hat[(row, k)] = u[(row, k)] * scale;
        }
    }

    // Metric upgrade: find symmetric G with aᵢᵀG aᵢ = bᵢᵀG bᵢ = 1 and
    // aᵢᵀG bᵢ = 0 for every frame's row pair (aᵢ, bᵢ).
    let phi = |x: &Vector3<f64>, y: &Vector3<f64>| {
        [
            x[0] * y[0],
            x[0] * y[1] + x[1] * y[0],
            x[0] * y[2] + x[2] * y[0],
            x[1] * y[1],
            x[1] * y[2] + x[2] * y[1],
            x[2] * y[2],
        ]
    };
    let mut a = DMatrix::zeros(3 * f, 6);
    let mut rhs = DVector::zeros(3 * f);
    for i in 0..f {
        let ai = Vector3::new(m_hat[(2 * i, 0)], m_hat[(2 * i, 1)], m_hat[(2 * i, 2)]);
        let bi = Vector3::new(m_hat[(2 * i + 1, 0)], m_hat[(2 * i + 1, 1)], m_hat[(2 * i + 1, 2)]);
        for (row, (x, y, target)) in [(ai, ai, 1.0), (bi, bi, 1.0), (ai, bi, 0.0)]
            .iter()
            .enumerate()
        {
            let coeffs = phi(x, y);
            for (col, c) in coeffs.iter().enumerate() {
                a[(3 * i + row, col)] = *c;
            }
            rhs[3 * i + row] = *target;
        }
    }
    let g_params = a
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| CoreError::EstimationFailure {
            reason: format!("metric-upgrade least squares failed: {e}"),
        })?;
    let g = Matrix3::new(
        g_params[0], g_params[1], g_params[2],
        g_params[1], g_params[3], g_params[4],
        g_params[2], g_params[4], g_params[5],
    );

    let eig = g.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_eig > 1e-12 * max_eig.max(0.0)) {
        return Err(CoreError::EstimationFailure {
            reason: format!(
                "corrective Gram matrix is not positive definite (eigenvalues {:.3e}..{:.3e}); \
                 the motion is too non-rigid for the rigid fallback — provide rotations explicitly",
                min_eig, max_eig
            ),
        });
    }
    let sqrt_diag = Matrix3::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let corrective = eig.eigenvectors * sqrt_diag;
    let m = m_hat * corrective;

    let mut blocks = Vec::with_capacity(f);
    let mut diagnostics = Vec::with_capacity(f);
    for i in 0..f {
        let block = Matrix2x3::from_fn(|r, c| m[(2 * i + r, c)]);
        let (proj, residual) = project_block(&block, i)?;
        blocks.push(proj);
        diagnostics.push(residual);
    }

    // Canonicalize: right-multiply by the orthogonal matrix built from the
    // first frame's rows (and their cross product), sending it to [I₂|0].
    let r1 = Vector3::new(blocks[0][(0, 0)], blocks[0][(0, 1)], blocks[0][(0, 2)]);
    let r2 = Vector3::new(blocks[0][(1, 0)], blocks[0][(1, 1)], blocks[0][(1, 2)]);
    let r3 = r1.cross(&r2);
    let align = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]);
    for block in &mut blocks {
        *block *= align.transpose();
    }

    Ok(RotationSource {
        mode: RotationMode::Estimated,
        stack: assemble_rotation(blocks)?,
        diagnostics,
    })
}

//! First-order temporal smoothness operator H and the closed-form
//! temporal-only solver.
//!
//! H is the 3(F−1)×3F block difference operator with `H[i,i] = 1` and
//! `H[i,i+3] = −1`: applied to a shape stack it returns the frame
//! differences `S_i − S_{i+1}`. Its normal matrix HᵀH is block-tridiagonal,
//! so the temporal-only problem
//!
//! ```text
//! min_S ‖W − R S‖_F² + λ ‖H S‖_F²
//! ```
//!
//! is solved by one symmetric block-tridiagonal factorization of the 3F×3F
//! system `RᵀR + λ HᵀH`, reused across all P right-hand-side columns. A
//! single iterative-refinement pass keeps the solution accurate at extreme
//! λ, where the system is severely ill-conditioned.

use nalgebra::{Cholesky, Const, DMatrix, Matrix3};

use crate::error::{CoreError, Result};
use crate::model::{RotationStack, ShapeStack, TrackMatrix};

/// First-order temporal difference operator (matrix-free).
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalOperator {
    frames: usize,
    order: usize,
}

/// Builds the temporal smoothness operator of the given order.
///
/// Only first-order differences are defined; any other order is rejected
/// explicitly rather than silently approximated.
pub fn build_temporal_operator(frames: usize, order: usize) -> Result<TemporalOperator> {
    if frames == 0 {
        return Err(CoreError::InvalidParameter {
            name: "frames",
            reason: "must be at least 1".into(),
        });
    }
    if order != 1 {
        return Err(CoreError::UnsupportedOrder { order });
    }
    Ok(TemporalOperator { frames, order })
}

impl TemporalOperator {
    /// Number of frames F.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Smoothness order (always 1).
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of rows of H, i.e. 3(F−1).
    pub fn rows(&self) -> usize {
        3 * (self.frames - 1)
    }

    /// Applies H: block `i` of the result is `S_i − S_{i+1}`.
    pub fn apply(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let f = self.frames;
        let p = s.ncols();
        assert_eq!(s.nrows(), 3 * f, "shape stack rows must equal 3F");
        let mut out = DMatrix::zeros(self.rows(), p);
        for i in 0..f.saturating_sub(1) {
            for r in 0..3 {
                for c in 0..p {
                    out[(3 * i + r, c)] = s[(3 * i + r, c)] - s[(3 * (i + 1) + r, c)];
                }
            }
        }
        out
    }

    /// Applies Hᵀ to a 3(F−1)×P matrix.
    pub fn transpose_apply(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let f = self.frames;
        let p = y.ncols();
        assert_eq!(y.nrows(), self.rows(), "input rows must equal 3(F-1)");
        let mut out = DMatrix::zeros(3 * f, p);
        for i in 0..f {
            for r in 0..3 {
                for c in 0..p {
                    let mut v = 0.0;
                    if i < f - 1 {
                        v += y[(3 * i + r, c)];
                    }
                    if i > 0 {
                        v -= y[(3 * (i - 1) + r, c)];
                    }
                    out[(3 * i + r, c)] = v;
                }
            }
        }
        out
    }

    /// Applies HᵀH directly: block `i` is `t_i S_i − S_{i−1} − S_{i+1}`
    /// with `t_i` the number of difference pairs touching frame `i`.
    pub fn gram_apply(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let f = self.frames;
        let p = s.ncols();
        assert_eq!(s.nrows(), 3 * f, "shape stack rows must equal 3F");
        let mut out = DMatrix::zeros(3 * f, p);
        for i in 0..f {
            let t = usize::from(i > 0) + usize::from(i + 1 < f);
            for r in 0..3 {
                for c in 0..p {
                    let mut v = t as f64 * s[(3 * i + r, c)];
                    if i > 0 {
                        v -= s[(3 * (i - 1) + r, c)];
                    }
                    if i + 1 < f {
                        v -= s[(3 * (i + 1) + r, c)];
                    }
                    out[(3 * i + r, c)] = v;
                }
            }
        }
        out
    }
}

/// Cached symmetric block-tridiagonal factorization of `RᵀR + λ HᵀH`.
struct BlockTridiagFactor {
    lambda: f64,
    chols: Vec<Cholesky<f64, Const<3>>>,
}

impl BlockTridiagFactor {
    fn factorize(r: &RotationStack, lambda: f64) -> Result<Self> {
        let f = r.frames();
        let mut chols = Vec::with_capacity(f);
        let mut prev_inv: Option<Matrix3<f64>> = None;
        for i in 0..f {
            let t = (usize::from(i > 0) + usize::from(i + 1 < f)) as f64;
            let block = r.block(i);
            let mut c = block.transpose() * block + lambda * t * Matrix3::identity();
            if let Some(pi) = prev_inv {
                c -= lambda * lambda * pi;
            }
            let chol = Cholesky::new(c).ok_or_else(|| CoreError::RankDeficient {
                reason: format!(
                    "temporal system matrix lost positive definiteness at frame {i} (lambda = {lambda:.3e})"
                ),
            })?;
            prev_inv = Some(chol.inverse());
            chols.push(chol);
        }
        Ok(Self { lambda, chols })
    }

    /// Solves `(RᵀR + λ HᵀH) X = B` for all columns of B at once.
    fn sweep(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let f = self.chols.len();
        let p = b.ncols();
        let lam = self.lambda;
        // Forward elimination.
        let mut y = DMatrix::zeros(3 * f, p);
        y.view_mut((0, 0), (3, p)).copy_from(&b.view((0, 0), (3, p)));
        for i in 1..f {
            let prev = y.view((3 * (i - 1), 0), (3, p)).into_owned();
            let solved = self.chols[i - 1].solve(&prev);
            let block = b.view((3 * i, 0), (3, p)).into_owned() + lam * solved;
            y.view_mut((3 * i, 0), (3, p)).copy_from(&block);
        }
        // Back substitution.
        let mut x = DMatrix::zeros(3 * f, p);
        let last = self.chols[f - 1].solve(&y.view((3 * (f - 1), 0), (3, p)).into_owned());
        x.view_mut((3 * (f - 1), 0), (3, p)).copy_from(&last);
        for i in (0..f - 1).rev() {
            let rhs = y.view((3 * i, 0), (3, p)).into_owned()
                + lam * x.view((3 * (i + 1), 0), (3, p)).into_owned();
            let solved = self.chols[i].solve(&rhs);
            x.view_mut((3 * i, 0), (3, p)).copy_from(&solved);
        }
        x
    }
}

/// Applies the normal matrix `RᵀR + λ HᵀH` without assembling it.
fn apply_normal(r: &RotationStack, h: &TemporalOperator, lambda: f64, s: &DMatrix<f64>) -> DMatrix<f64> {
    r.transpose_apply_matrix(&r.apply_matrix(s)) + lambda * h.gram_apply(s)
}

/// Solves the temporal-only problem `min ‖W − RS‖² + λ‖HS‖²` in closed form.
///
/// The 3F×3F normal matrix is block-tridiagonal; one block-Cholesky
/// factorization is shared by all P right-hand-side columns, followed by a
/// single iterative-refinement pass. At λ = 0 the problem is rank deficient
/// and the minimum-norm pseudo-inverse solution is returned instead.
pub fn solve_temporal(w: &TrackMatrix, r: &RotationStack, lambda: f64) -> Result<ShapeStack> {
    if w.frames() != r.frames() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{} frames (rotation stack)", r.frames()),
            found: format!("{} frames (track matrix)", w.frames()),
        });
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(CoreError::InvalidParameter {
            name: "lambda",
            reason: format!("must be finite and nonnegative, got {lambda}"),
        });
    }
    if lambda == 0.0 {
        return solve_pseudo_inverse(w, r);
    }
    if w.frames() == 1 {
        // H is empty for a single frame: the regularizer vanishes and the
        // data term alone cannot determine depth.
        return Err(CoreError::RankDeficient {
            reason: "a single frame has no temporal coupling; the system is singular \
                     (use solve_pseudo_inverse for the minimum-norm planar solution)"
                .into(),
        });
    }
    let h = build_temporal_operator(w.frames(), 1)?;
    let factor = BlockTridiagFactor::factorize(r, lambda)?;
    let b = r.transpose_apply_matrix(w.data());
    let mut x = factor.sweep(&b);
    // One refinement pass: at extreme λ the condition number approaches the
    // working precision and the raw sweep loses several digits.
    let residual = &b - apply_normal(r, &h, lambda, &x);
    x += factor.sweep(&residual);
    ShapeStack::new(x)
}

/// Minimum-norm solution `S = R† W` via per-frame 3×2 pseudo-inverse blocks.
///
/// Every reconstructed frame lies in the camera plane (rank ≤ 2).
pub fn solve_pseudo_inverse(w: &TrackMatrix, r: &RotationStack) -> Result<ShapeStack> {
    if w.frames() != r.frames() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{} frames (rotation stack)", r.frames()),
            found: format!("{} frames (track matrix)", w.frames()),
        });
    }
    let f = r.frames();
    let p = w.points();
    let mut out = DMatrix::zeros(3 * f, p);
    for i in 0..f {
        let pinv = r
            .block(i)
            .pseudo_inverse(1e-12)
            .map_err(|e| CoreError::RankDeficient {
                reason: format!("pseudo-inverse of camera block {i} failed: {e}"),
            })?;
        let prod = pinv * w.data().view((2 * i, 0), (2, p));
        out.view_mut((3 * i, 0), (3, p)).copy_from(&prod);
    }
    ShapeStack::new(out)
}

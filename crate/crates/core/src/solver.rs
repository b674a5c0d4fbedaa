//! Robust spatial-temporal solver.
//!
//! Minimizes the joint objective
//!
//! ```text
//! min_S  Σ_ij √((W−RS)_ij² + δ²)  +  λ1 ‖H S‖_F²  +  λ2 ‖S·Lᵀ‖_F²
//! ```
//!
//! by iteratively reweighted least squares: each outer iteration freezes the
//! elementwise weights E_ij = (r_ij² + δ²)^(−1/4) and solves the convex
//! quadratic subproblem
//!
//! ```text
//! min_S  ‖E ⊙ (W − RS)‖_F² + 2λ1 ‖H S‖_F² + 2λ2 ‖S·Lᵀ‖_F²
//! ```
//!
//! matrix-free with block-Jacobi-preconditioned conjugate gradients on the
//! normal equations (plain gradient descent with exact line search is kept
//! as a selectable fallback). The factor 2 on the regularizers makes the
//! subproblem an
//! exact majorizer of the smoothed-L1 objective — the data majorizer at the
//! linearization point is ½‖E ⊙ (W−RS)‖² plus a constant — which guarantees
//! the outer objective trace is non-increasing regardless of how early the
//! inner solver is truncated (warm starts mean every inner iterate already
//! improves on the previous outer iterate).

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{GridTopology, RotationStack, ShapeStack, TrackMatrix};
use crate::spatial::{build_laplacian, SpatialOperator};
use crate::temporal::{build_temporal_operator, solve_temporal, TemporalOperator};

/// Inner solver used for the weighted quadratic subproblems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SubproblemMethod {
    /// Conjugate gradients on the normal equations (default).
    #[default]
    ConjugateGradient,
    /// Gradient descent with exact line search; slower, kept for fidelity
    /// comparisons against the simplest possible inner solver.
    GradientDescent,
}

/// Weights and stopping rules for [`irls_reconstruct`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Temporal smoothness weight λ1.
    pub lambda1: f64,
    /// Spatial smoothness weight λ2.
    pub lambda2: f64,
    /// IRLS smoothing width δ in measurement units. `None` resolves to
    /// 10⁻⁴·max|W| at solve time, scaling the smoothing with the data.
    pub delta: Option<f64>,
    /// Maximum outer (reweighting) iterations.
    pub irls_max_iters: usize,
    /// Maximum inner iterations per quadratic subproblem.
    pub cg_max_iters: usize,
    /// Inner relative-residual tolerance.
    pub cg_tol: f64,
    /// Outer stopping threshold on the relative objective decrease.
    pub objective_tol: f64,
    /// Inner solver selection.
    pub method: SubproblemMethod,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda1: 1e-3,
            lambda2: 1.0,
            delta: None,
            irls_max_iters: 30,
            cg_max_iters: 500,
            cg_tol: 1e-8,
            objective_tol: 1e-6,
            method: SubproblemMethod::ConjugateGradient,
        }
    }
}

impl SolverConfig {
    /// Checks the configuration invariants.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(CoreError::InvalidParameter {
                    name,
                    reason: format!("must be finite and positive, got {v}"),
                })
            }
        };
        let nonneg = |name: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(CoreError::InvalidParameter {
                    name,
                    reason: format!("must be finite and nonnegative, got {v}"),
                })
            }
        };
        nonneg("lambda1", self.lambda1)?;
        nonneg("lambda2", self.lambda2)?;
        if let Some(d) = self.delta {
            positive("delta", d)?;
        }
        positive("cg_tol", self.cg_tol)?;
        positive("objective_tol", self.objective_tol)?;
        if self.irls_max_iters == 0 {
            return Err(CoreError::InvalidParameter {
                name: "irls_max_iters",
                reason: "must be at least 1".into(),
            });
        }
        if self.cg_max_iters == 0 {
            return Err(CoreError::InvalidParameter {
                name: "cg_max_iters",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// The smoothing width δ actually used for the given tracks.
    pub fn resolved_delta(&self, w: &TrackMatrix) -> f64 {
        match self.delta {
            Some(d) => d,
            None => {
                let scale = w.max_abs();
                if scale > 0.0 {
                    1e-4 * scale
                } else {
                    // All-zero tracks carry no scale; any positive δ works.
                    1e-4
                }
            }
        }
    }
}

/// Elementwise IRLS weight field E, aligned with the 2F×P track matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct IrlsWeights {
    values: DMatrix<f64>,
}

impl IrlsWeights {
    /// Wraps an explicit 2F×P weight field. Every entry must be strictly
    /// positive and finite; the row count must be even.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() % 2 != 0 {
            return Err(CoreError::DataValidation {
                reason: format!(
                    "weight field must have an even number of rows (two per frame), got {}",
                    values.nrows()
                ),
            });
        }
        if !values.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(CoreError::DataValidation {
                reason: "weight entries must be finite and strictly positive".into(),
            });
        }
        Ok(Self { values })
    }

    /// Constant weight field, mainly for tests and limit checks.
    pub fn uniform(frames: usize, points: usize, value: f64) -> Self {
        assert!(value > 0.0 && value.is_finite(), "weights must be positive");
        Self {
            values: DMatrix::from_element(2 * frames, points, value),
        }
    }

    /// Number of frames F.
    pub fn frames(&self) -> usize {
        self.values.nrows() / 2
    }

    /// Number of points P.
    pub fn points(&self) -> usize {
        self.values.ncols()
    }

    /// The 2F×P weight entries (the diagonal of E in matrix form).
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Computes the IRLS weights E_ij = (r_ij² + δ²)^(−1/4) for a residual field.
///
/// With these weights, ‖E ⊙ r‖² has the same gradient in the residual as the
/// smoothed L1 term Σ √(r² + δ²) at the linearization point (up to the
/// majorization factor ½). All entries lie in (0, δ^(−1/2)].
pub fn update_weights(residual: &DMatrix<f64>, delta: f64) -> IrlsWeights {
    assert!(delta > 0.0 && delta.is_finite(), "delta must be positive");
    let d2 = delta * delta;
    let values = residual.map(|r| (r * r + d2).powf(-0.25));
    IrlsWeights { values }
}

/// The smoothed-L1 spatial-temporal objective.
///
/// Returns `Σ_ij √(r_ij² + δ²) + λ1‖HS‖_F² + λ2‖S·Lᵀ‖_F²` with `r = W − RS`
/// and δ resolved from the config and tracks.
pub fn robust_objective(
    w: &TrackMatrix,
    r: &RotationStack,
    s: &ShapeStack,
    op_h: &TemporalOperator,
    op_a: &SpatialOperator,
    cfg: &SolverConfig,
) -> f64 {
    let delta = cfg.resolved_delta(w);
    objective_inner(w, r, s.data(), op_h, op_a, cfg.lambda1, cfg.lambda2, delta)
}

#[allow(clippy::too_many_arguments)]
fn objective_inner(
    w: &TrackMatrix,
    r: &RotationStack,
    s: &DMatrix<f64>,
    op_h: &TemporalOperator,
    op_a: &SpatialOperator,
    lambda1: f64,
    lambda2: f64,
    delta: f64,
) -> f64 {
    let residual = w.data() - r.apply_matrix(s);
    let d2 = delta * delta;
    let data_term: f64 = residual.iter().map(|r| (r * r + d2).sqrt()).sum();
    let mut obj = data_term;
    if lambda1 > 0.0 {
        obj += lambda1 * op_h.apply(s).norm_squared();
    }
    if lambda2 > 0.0 {
        obj += lambda2 * op_a.apply_to_matrix(s).norm_squared();
    }
    obj
}

/// The normal-equation operator `Q(S) = Rᵀ(E²⊙RS) + λ1 HᵀH S + λ2 S LᵀL` and
/// its right-hand side `b = Rᵀ(E²⊙W)`, applied without assembling anything.
struct NormalOperator<'a> {
    r: &'a RotationStack,
    op_h: &'a TemporalOperator,
    op_a: &'a SpatialOperator,
    e2: DMatrix<f64>,
    lambda1: f64,
    lambda2: f64,
}

impl<'a> NormalOperator<'a> {
    fn new(
        r: &'a RotationStack,
        op_h: &'a TemporalOperator,
        op_a: &'a SpatialOperator,
        e: &IrlsWeights,
        lambda1: f64,
        lambda2: f64,
    ) -> Self {
        Self {
            r,
            op_h,
            op_a,
            e2: e.values().component_mul(e.values()),
            lambda1,
            lambda2,
        }
    }

    fn apply(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let weighted = self.r.apply_matrix(s).component_mul(&self.e2);
        let mut out = self.r.transpose_apply_matrix(&weighted);
        if self.lambda1 > 0.0 {
            out += self.lambda1 * self.op_h.gram_apply(s);
        }
        if self.lambda2 > 0.0 {
            out += self.lambda2 * self.op_a.gram_apply_to_matrix(s);
        }
        out
    }

    fn rhs(&self, w: &TrackMatrix) -> DMatrix<f64> {
        self.r.transpose_apply_matrix(&w.data().component_mul(&self.e2))
    }

    /// 3×3 block-Jacobi preconditioner: one block per (frame, point) pair,
    /// formed from the exact diagonal blocks of Q,
    /// `R_iᵀ diag(E²_{·,p}) R_i + (λ1 t_i + λ2 (deg_p² + deg_p)) I₃`,
    /// where t_i counts the temporal difference rows touching frame i and
    /// deg_p is the point's spatial degree. This captures the full spread of
    /// the IRLS weights, which otherwise dominates the condition number.
    fn block_jacobi(&self) -> BlockJacobi {
        let f = self.r.frames();
        let points = self.e2.ncols();
        let temporal_count = |i: usize| -> f64 {
            if f == 1 {
                0.0
            } else if i == 0 || i == f - 1 {
                1.0
            } else {
                2.0
            }
        };
        let mut inv = Vec::with_capacity(f * points);
        for p in 0..points {
            let deg = self.op_a.degree(p) as f64;
            let spatial_diag = self.lambda2 * (deg * deg + deg);
            for i in 0..f {
                let block = self.r.block(i);
                let mut m = block.row(0).transpose() * (block.row(0) * self.e2[(2 * i, p)])
                    + block.row(1).transpose() * (block.row(1) * self.e2[(2 * i + 1, p)]);
                let shift = self.lambda1 * temporal_count(i) + spatial_diag;
                for d in 0..3 {
                    m[(d, d)] += shift;
                }
                // A singular block (possible only when both λ vanish for an
                // isolated point) falls back to no preconditioning.
                inv.push(m.try_inverse().unwrap_or_else(Matrix3::identity));
            }
        }
        BlockJacobi { inv, frames: f }
    }
}

/// Inverted diagonal blocks of the normal operator, indexed point-major.
struct BlockJacobi {
    inv: Vec<Matrix3<f64>>,
    frames: usize,
}

impl BlockJacobi {
    fn apply(&self, residual: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(residual.nrows(), residual.ncols());
        for p in 0..residual.ncols() {
            for i in 0..self.frames {
                let z = &self.inv[p * self.frames + i]
                    * residual.fixed_view::<3, 1>(3 * i, p).into_owned();
                out.fixed_view_mut::<3, 1>(3 * i, p).copy_from(&z);
            }
        }
        out
    }
}

/// Gradient of the weighted quadratic subproblem at S:
/// `g = 2Rᵀ(E²⊙(RS−W)) + 2λ1 HᵀH S + 2λ2 S LᵀL`,
/// computed with operator applications only.
#[allow(clippy::too_many_arguments)]
pub fn gradient(
    s: &ShapeStack,
    w: &TrackMatrix,
    r: &RotationStack,
    e: &IrlsWeights,
    op_h: &TemporalOperator,
    op_a: &SpatialOperator,
    cfg: &SolverConfig,
) -> Result<ShapeStack> {
    check_dimensions(w, r, e, op_h, op_a, Some(s))?;
    let q = NormalOperator::new(r, op_h, op_a, e, cfg.lambda1, cfg.lambda2);
    ShapeStack::new(2.0 * (q.apply(s.data()) - q.rhs(w)))
}

/// Outcome of one quadratic subproblem solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemReport {
    /// Inner iterations actually performed.
    pub iterations: usize,
    /// Whether the relative-residual tolerance was reached.
    pub converged: bool,
    /// True relative residual ‖b − Q S‖/‖b‖ of the returned iterate.
    pub relative_residual: f64,
}

/// Outcome of a full IRLS run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Smoothed-L1 objective before the first and after every outer
    /// iteration; non-increasing up to roundoff.
    pub objective_trace: Vec<f64>,
    /// Inner iteration count per outer iteration.
    pub cg_iterations: Vec<usize>,
    /// Inner convergence flag per outer iteration.
    pub cg_converged: Vec<bool>,
    /// Whether the outer loop stopped on the objective tolerance (rather
    /// than exhausting `irls_max_iters`).
    pub converged: bool,
    /// Last entry of the objective trace.
    pub final_objective: f64,
}

fn check_dimensions(
    w: &TrackMatrix,
    r: &RotationStack,
    e: &IrlsWeights,
    op_h: &TemporalOperator,
    op_a: &SpatialOperator,
    s: Option<&ShapeStack>,
) -> Result<()> {
    if w.frames() != r.frames() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{} frames (rotation stack)", r.frames()),
            found: format!("{} frames (track matrix)", w.frames()),
        });
    }
    if e.frames() != w.frames() || e.points() != w.points() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{}x{} weight field", 2 * w.frames(), w.points()),
            found: format!("{}x{}", 2 * e.frames(), e.points()),
        });
    }
    if op_h.frames() != w.frames() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("temporal operator over {} frames", w.frames()),
            found: format!("{} frames", op_h.frames()),
        });
    }
    if op_a.points() != w.points() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("spatial operator over {} points", w.points()),
            found: format!("{} points", op_a.points()),
        });
    }
    if let Some(s) = s {
        if s.frames() != w.frames() || s.points() != w.points() {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{}x{} shape stack", 3 * w.frames(), w.points()),
                found: format!("{}x{}", 3 * s.frames(), s.points()),
            });
        }
    }
    Ok(())
}

/// Core inner solve on raw matrices; `cfg.lambda*` are used exactly as given.
fn subproblem_core(
    w: &TrackMatrix,
    q: &NormalOperator<'_>,
    cfg: &SolverConfig,
    x0: &DMatrix<f64>,
) -> (DMatrix<f64>, SubproblemReport) {
    let b = q.rhs(w);
    let bnorm = b.norm();
    let denom = if bnorm > 0.0 { bnorm } else { 1.0 };
    let threshold = cfg.cg_tol * denom;

    let mut x = x0.clone();
    let mut residual = &b - q.apply(&x);
    let mut rr = residual.dot(&residual);
    let mut best_x = x.clone();
    let mut best_rnorm = rr.sqrt();
    let mut iterations = 0usize;
    let mut converged = best_rnorm <= threshold;

    if !converged {
        match cfg.method {
            SubproblemMethod::ConjugateGradient => {
                // Jacobi-preconditioned CG; convergence is still judged on
                // the true (unpreconditioned) residual norm.
                let pre = q.block_jacobi();
                let mut z = pre.apply(&residual);
                let mut rz = residual.dot(&z);
                let mut p = z;
                for k in 0..cfg.cg_max_iters {
                    let qp = q.apply(&p);
                    let pqp = p.dot(&qp);
                    if !(pqp > 0.0) {
                        // Null-space direction of a semidefinite system or
                        // numerical breakdown; the residual can't improve.
                        break;
                    }
                    let alpha = rz / pqp;
                    x += alpha * &p;
                    residual -= alpha * &qp;
                    iterations = k + 1;
                    let rnorm = residual.norm();
                    if rnorm < best_rnorm {
                        best_rnorm = rnorm;
                        best_x.copy_from(&x);
                    }
                    if rnorm <= threshold {
                        converged = true;
                        break;
                    }
                    z = pre.apply(&residual);
                    let rz_new = residual.dot(&z);
                    if !(rz_new > 0.0) {
                        break;
                    }
                    let beta = rz_new / rz;
                    rz = rz_new;
                    p = &z + beta * p;
                }
            }
            SubproblemMethod::GradientDescent => {
                for k in 0..cfg.cg_max_iters {
                    let qr = q.apply(&residual);
                    let rqr = residual.dot(&qr);
                    if !(rqr > 0.0) {
                        break;
                    }
                    let alpha = rr / rqr;
                    x += alpha * &residual;
                    residual -= alpha * &qr;
                    rr = residual.dot(&residual);
                    iterations = k + 1;
                    let rnorm = rr.sqrt();
                    if rnorm < best_rnorm {
                        best_rnorm = rnorm;
                        best_x.copy_from(&x);
                    }
                    if rnorm <= threshold {
                        converged = true;
                        break;
                    }
                }
            }
        }
        if !converged {
            // Both inner methods decrease the quadratic monotonically, so
            // any iterate improves on the warm start; return the one with
            // the smallest residual seen.
            x = best_x;
        }
    }

    let relative_residual = (&b - q.apply(&x)).norm() / denom;
    (
        x,
        SubproblemReport {
            iterations,
            converged,
            relative_residual,
        },
    )
}

/// Solves one weighted quadratic subproblem from the given starting point.
///
/// The normal-equation system `Q S = b` with
/// `Q = Rᵀ E² R + λ1 HᵀH + λ2 LᵀL` (λ taken verbatim from `cfg`) is solved
/// matrix-free. If the iteration budget runs out the best iterate seen is
/// returned and flagged as non-converged in the report; this is not an
/// error.
#[allow(clippy::too_many_arguments)]
pub fn solve_quadratic_subproblem(
    w: &TrackMatrix,
    r: &RotationStack,
    e: &IrlsWeights,
    op_h: &TemporalOperator,
    op_a: &SpatialOperator,
    cfg: &SolverConfig,
    s_init: &ShapeStack,
) -> Result<(ShapeStack, SubproblemReport)> {
    cfg.validate()?;
    check_dimensions(w, r, e, op_h, op_a, Some(s_init))?;
    let q = NormalOperator::new(r, op_h, op_a, e, cfg.lambda1, cfg.lambda2);
    let (x, report) = subproblem_core(w, &q, cfg, s_init.data());
    Ok((ShapeStack::new(x)?, report))
}

/// Full robust reconstruction: IRLS over weighted quadratic subproblems.
///
/// When `s_init` is `None` the run starts from the temporal-only closed-form
/// solution `solve_temporal(W, R, λ1)`. Subproblem non-convergence is
/// recorded in the report and never aborts the run.
pub fn irls_reconstruct(
    w: &TrackMatrix,
    r: &RotationStack,
    topology: &GridTopology,
    cfg: &SolverConfig,
    s_init: Option<&ShapeStack>,
) -> Result<(ShapeStack, SolveReport)> {
    cfg.validate()?;
    if w.frames() != r.frames() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{} frames (rotation stack)", r.frames()),
            found: format!("{} frames (track matrix)", w.frames()),
        });
    }
    if topology.points() != w.points() {
        return Err(CoreError::ShapeMismatch {
            expected: format!("{} points (topology)", topology.points()),
            found: format!("{} points (track matrix)", w.points()),
        });
    }
    let op_h = build_temporal_operator(w.frames(), 1)?;
    let op_a = build_laplacian(topology.clone());
    let delta = cfg.resolved_delta(w);

    let mut s = match s_init {
        Some(s0) => {
            if s0.frames() != w.frames() || s0.points() != w.points() {
                return Err(CoreError::ShapeMismatch {
                    expected: format!("{}x{} initial shape stack", 3 * w.frames(), w.points()),
                    found: format!("{}x{}", 3 * s0.frames(), s0.points()),
                });
            }
            s0.data().clone()
        }
        None => solve_temporal(w, r, cfg.lambda1)?.data().clone(),
    };

    // Majorization: minimizing ‖E⊙(W−RS)‖² + 2λ1‖HS‖² + 2λ2‖S·Lᵀ‖² is the
    // exact MM step for the smoothed-L1 objective with weights λ1, λ2.
    let sub_cfg = SolverConfig {
        lambda1: 2.0 * cfg.lambda1,
        lambda2: 2.0 * cfg.lambda2,
        ..cfg.clone()
    };

    let mut trace = vec![objective_inner(
        w,
        r,
        &s,
        &op_h,
        &op_a,
        cfg.lambda1,
        cfg.lambda2,
        delta,
    )];
    let mut cg_iterations = Vec::new();
    let mut cg_converged = Vec::new();
    let mut converged = false;

    for _ in 0..cfg.irls_max_iters {
        let residual = w.data() - r.apply_matrix(&s);
        let e = update_weights(&residual, delta);
        let q = NormalOperator::new(r, &op_h, &op_a, &e, sub_cfg.lambda1, sub_cfg.lambda2);
        let (s_next, sub_report) = subproblem_core(w, &q, &sub_cfg, &s);
        s = s_next;
        let objective = objective_inner(
            w,
            r,
            &s,
            &op_h,
            &op_a,
            cfg.lambda1,
            cfg.lambda2,
            delta,
        );
        let previous = *trace.last().expect("trace is never empty");
        trace.push(objective);
        cg_iterations.push(sub_report.iterations);
        cg_converged.push(sub_report.converged);
        if previous - objective <= cfg.objective_tol * previous {
            converged = true;
            break;
        }
    }

    let final_objective = *trace.last().expect("trace is never empty");
    let report = SolveReport {
        objective_trace: trace,
        cg_iterations,
        cg_converged,
        converged,
        final_objective,
    };
    Ok((ShapeStack::new(s)?, report))
}

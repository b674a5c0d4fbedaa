//! Dense non-rigid structure-from-motion with robust spatial-temporal
//! regularization.
//!
//! Given 2D feature tracks `W` (2F×P, centered, orthographic) and per-frame
//! camera rotations `R`, this crate reconstructs the deforming 3D shape
//! sequence `S` (3F×P) by minimizing a robust (smoothed-L1) reprojection
//! term plus two quadratic smoothness penalties:
//!
//! ```text
//! min_S  ‖W − R S‖₁  +  λ1 ‖H S‖_F²  +  λ2 ‖A vec(S)‖²
//! ```
//!
//! where `H` takes first-order differences between consecutive frames and
//! `A` applies an 8-neighbor grid Laplacian to every coordinate row. The
//! objective is minimized by iteratively reweighted least squares; each
//! weighted subproblem is solved matrix-free with conjugate gradients.
//!
//! # Modules
//!
//! - [`model`]: track/rotation/shape containers and the grid topology.
//! - [`temporal`]: the difference operator `H` and the closed-form
//!   temporal-only solver (also the pseudo-inverse baseline).
//! - [`spatial`]: the sparse Laplacian `A` and its application.
//! - [`solver`]: the robust objective, IRLS loop, and CG subproblems.
//! - [`rotation`]: rotation validation and a rigid-factorization fallback.
//! - [`synth`]: synthetic scenes plus noise/outlier contamination.
//! - [`eval`]: the normalized RMS error metric and experiment sweeps.
//!
//! # Example
//!
//! ```
//! use nrsfm_core::prelude::*;
//!
//! let spec = SceneSpec {
//!     rows: 6,
//!     cols: 6,
//!     frames: 10,
//!     basis_rank: 2,
//!     deformation_amplitude: 0.5,
//!     rotation_path: RotationPath::swept([0.25, 1.0, 0.15], -0.5, 0.05, 10).unwrap(),
//!     seed: 7,
//! };
//! let scene = generate_scene(&spec).unwrap();
//! let noisy = inject_noise(&scene.tracks, 0.03, 1).unwrap();
//! let cfg = SolverConfig { lambda1: 1.0, lambda2: 1e-3, ..SolverConfig::default() };
//! let (shape, report) = irls_reconstruct(
//!     &noisy,
//!     &scene.rotations,
//!     &scene.topology,
//!     &cfg,
//!     None,
//! )
//! .unwrap();
//! let error = rms_error(&shape, &scene.ground_truth).unwrap();
//! assert!(error.mean_error < 0.5);
//! assert!(report.objective_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
//! ```

pub mod error;
pub mod eval;
pub mod model;
pub mod rotation;
pub mod solver;
pub mod spatial;
pub mod synth;
pub mod temporal;

pub use error::{CoreError, Result};

/// Convenience re-exports of the types and entry points most programs need.
pub mod prelude {
    pub use crate::error::{CoreError, Result};
    pub use crate::eval::{
        rms_error, run_sweep, run_sweep_on_scene, ErrorReport, MethodKind, Setting,
        SweepAggregate, SweepRow, SweepTable,
    };
    pub use crate::model::{
        assemble_rotation, center_tracks, reproject, GridTopology, RotationStack, ShapeStack,
        TrackMatrix,
    };
    pub use crate::rotation::{
        estimate_rigid_rotations, validate_rotations, RotationMode, RotationSource,
    };
    pub use crate::solver::{
        gradient, irls_reconstruct, robust_objective, solve_quadratic_subproblem, update_weights,
        IrlsWeights, SolveReport, SolverConfig, SubproblemMethod, SubproblemReport,
    };
    pub use crate::spatial::{apply_spatial, build_laplacian, SpatialOperator};
    pub use crate::synth::{
        generate_scene, inject_noise, inject_outliers, OutlierMask, RotationPath, Scene,
        SceneSpec,
    };
    pub use crate::temporal::{
        build_temporal_operator, solve_pseudo_inverse, solve_temporal, TemporalOperator,
    };
}

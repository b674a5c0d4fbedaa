//! Dense-oracle regression tests: every matrix-free code path is checked
//! against an independently assembled dense counterpart.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use nrsfm_core::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn random_shape(f: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    DMatrix::from_fn(3 * f, p, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn reprojection_matches_dense_block_diagonal_product() {
    for seed in 0..5 {
        let (w, r) = random_instance(4, 7, seed);
        let s = ShapeStack::new(random_shape(4, 7, seed + 100)).unwrap();
        let fast = reproject(&r, &s).unwrap();
        let dense = dense_rotation(&r) * s.data();
        let gap = (fast.data() - &dense).norm() / dense.norm();
        assert!(gap < 1e-13, "reprojection differs from dense product by {gap:.3e}");
        let _ = w;
    }
}

#[test]
fn temporal_apply_matches_dense_difference_matrix() {
    for f in [2usize, 3, 5, 8] {
        let op = build_temporal_operator(f, 1).unwrap();
        let hd = dense_temporal(f);
        let s = random_shape(f, 6, f as u64);
        let gap = (op.apply(&s) - &hd * &s).norm();
        assert!(gap < 1e-13, "H apply differs from dense at F={f} by {gap:.3e}");
        let y = DMatrix::from_fn(3 * (f - 1), 6, |r, c| ((r * 7 + c) as f64).sin());
        let gap_t = (op.transpose_apply(&y) - hd.transpose() * &y).norm();
        assert!(gap_t < 1e-13, "Hᵀ apply differs from dense at F={f} by {gap_t:.3e}");
        let gap_g = (op.gram_apply(&s) - hd.transpose() * &hd * &s).norm();
        assert!(gap_g < 1e-13, "HᵀH apply differs from dense at F={f} by {gap_g:.3e}");
    }
}

#[test]
fn temporal_solve_matches_dense_normal_equations_across_lambdas() {
    let (w, r) = random_instance(4, 8, 42);
    let rd = dense_rotation(&r);
    let hd = dense_temporal(4);
    for lambda in [1e-6, 1e-3, 1.0, 1e3] {
        let m = rd.transpose() * &rd + lambda * hd.transpose() * &hd;
        let rhs = rd.transpose() * w.data();
        let dense = m
            .cholesky()
            .expect("dense temporal normal matrix should be positive definite")
            .solve(&rhs);
        let fast = solve_temporal(&w, &r, lambda).unwrap();
        let gap = (fast.data() - &dense).norm() / dense.norm();
        assert!(
            gap < 1e-9,
            "block solve differs from dense solve at lambda={lambda:e} by {gap:.3e}"
        );
    }
}

#[test]
fn pseudo_inverse_solution_matches_dense_pseudo_inverse() {
    let (w, r) = random_instance(5, 6, 7);
    let rd = dense_rotation(&r);
    let dense = rd.pseudo_inverse(1e-12).unwrap() * w.data();
    let fast = solve_pseudo_inverse(&w, &r).unwrap();
    let gap = (fast.data() - &dense).norm() / dense.norm();
    assert!(gap < 1e-10, "per-frame pinv differs from dense pinv by {gap:.3e}");
}

#[test]
fn spatial_apply_matches_kronecker_action_on_masked_grid() {
    let mut mask = vec![true; 16];
    mask[5] = false;
    mask[10] = false;
    let topo = GridTopology::from_mask(4, 4, &mask).unwrap();
    let op = build_laplacian(topo.clone());
    let ld = dense_laplacian(&topo);
    let f = 3usize;
    let s = random_shape(f, topo.points(), 9);
    let fast = op.apply_to_matrix(&s);
    let i3f = DMatrix::identity(3 * f, 3 * f);
    let vec_out = kron(&ld, &i3f) * vec_cols(&s);
    let dense = unvec_cols(&vec_out, 3 * f, topo.points());
    let gap = (&fast - &dense).norm();
    assert!(gap < 1e-12, "S·Lᵀ differs from Kronecker oracle by {gap:.3e}");
}

#[test]
fn sparse_laplacian_equals_dense_enumeration_up_to_twenty_by_twenty() {
    for (rows, cols) in [(1usize, 1usize), (2, 3), (5, 4), (8, 8), (20, 20)] {
        let topo = GridTopology::full(rows, cols).unwrap();
        let ld = dense_laplacian(&topo);
        let op = build_laplacian(topo);
        assert_eq!(op.dense(), ld, "Laplacian mismatch on full {rows}x{cols} grid");
    }
    let mut rng = StdRng::seed_from_u64(3);
    for trial in 0..5 {
        let mask: Vec<bool> = (0..48).map(|_| rng.random_range(0.0..1.0) > 0.3).collect();
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let topo = GridTopology::from_mask(6, 8, &mask).unwrap();
        let ld = dense_laplacian(&topo);
        let op = build_laplacian(topo);
        assert_eq!(op.dense(), ld, "Laplacian mismatch on masked grid, trial {trial}");
    }
}

#[test]
fn subproblem_solution_matches_densely_assembled_normal_system() {
    let f = 3usize;
    let p = 6usize;
    let topo = GridTopology::full(2, 3).unwrap();
    for seed in 0..4 {
        let (w, r) = random_instance(f, p, seed);
        let e = IrlsWeights::new(random_weights(f, p, seed + 50)).unwrap();
        let (lambda1, lambda2) = (0.7, 0.3);
        let (a, b) = assemble_normal_system(&w, &r, e.values(), &topo, lambda1, lambda2);
        let dense = a
            .cholesky()
            .expect("assembled normal matrix should be positive definite")
            .solve(&DMatrix::from_column_slice(b.len(), 1, b.as_slice()));
        let dense = unvec_cols(&DVector::from_column_slice(dense.as_slice()), 3 * f, p);

        let op_h = build_temporal_operator(f, 1).unwrap();
        let op_a = build_laplacian(topo.clone());
        let cfg = SolverConfig {
            lambda1,
            lambda2,
            cg_tol: 1e-12,
            cg_max_iters: 2000,
            ..SolverConfig::default()
        };
        let s0 = ShapeStack::new(DMatrix::zeros(3 * f, p)).unwrap();
        let (s, report) =
            solve_quadratic_subproblem(&w, &r, &e, &op_h, &op_a, &cfg, &s0).unwrap();
        let gap = (s.data() - &dense).norm() / dense.norm();
        assert!(
            gap < 1e-6,
            "subproblem seed {seed} differs from dense solve by {gap:.3e} \
             (converged={}, iters={})",
            report.converged,
            report.iterations
        );
    }
}

#[test]
fn gradient_vanishes_at_the_dense_quadratic_minimizer() {
    let f = 3usize;
    let p = 6usize;
    let topo = GridTopology::full(2, 3).unwrap();
    let (w, r) = random_instance(f, p, 11);
    let e = IrlsWeights::new(random_weights(f, p, 61)).unwrap();
    let (lambda1, lambda2) = (0.5, 0.2);
    let (a, b) = assemble_normal_system(&w, &r, e.values(), &topo, lambda1, lambda2);
    let x = a
        .cholesky()
        .unwrap()
        .solve(&DMatrix::from_column_slice(b.len(), 1, b.as_slice()));
    let s = ShapeStack::new(unvec_cols(
        &DVector::from_column_slice(x.as_slice()),
        3 * f,
        p,
    ))
    .unwrap();

    let op_h = build_temporal_operator(f, 1).unwrap();
    let op_a = build_laplacian(topo);
    let cfg = SolverConfig { lambda1, lambda2, ..SolverConfig::default() };
    let g = gradient(&s, &w, &r, &e, &op_h, &op_a, &cfg).unwrap();
    let scale = 2.0 * (w.data().component_mul(&e.values().map(|v| v * v))).norm();
    assert!(
        g.data().norm() < 1e-8 * scale,
        "gradient at dense minimizer has norm {:.3e} vs scale {scale:.3e}",
        g.data().norm()
    );
}

#[test]
fn weighted_gradient_matches_central_finite_differences() {
    let f = 3usize;
    let p = 4usize;
    let topo = GridTopology::full(2, 2).unwrap();
    let op_h = build_temporal_operator(f, 1).unwrap();
    let op_a = build_laplacian(topo.clone());
    let cfg = SolverConfig { lambda1: 0.4, lambda2: 0.15, ..SolverConfig::default() };
    for seed in 0..3 {
        let (w, r) = random_instance(f, p, seed + 300);
        let e = IrlsWeights::new(random_weights(f, p, seed + 400)).unwrap();
        let s0 = random_shape(f, p, seed + 500);

        let value = |m: &DMatrix<f64>| {
            dense_quadratic_value(&w, &r, e.values(), &topo, cfg.lambda1, cfg.lambda2, m)
        };
        let fd = finite_diff_gradient(value, &s0, 1e-6);
        let s = ShapeStack::new(s0.clone()).unwrap();
        let g = gradient(&s, &w, &r, &e, &op_h, &op_a, &cfg).unwrap();
        let gap = (g.data() - &fd).norm() / fd.norm();
        assert!(
            gap < 1e-7,
            "analytic gradient differs from finite differences by {gap:.3e} (seed {seed})"
        );
    }
}

#[test]
fn irls_weights_linearize_the_smoothed_absolute_value() {
    // d/dr Σ_ij sqrt(r_ij² + δ²) = r ∘ (r² + δ²)^(−1/2) = r ∘ E², with E the
    // IRLS weight field: finite differences of the robust data term must
    // match the weighted-residual form used by the solver.
    let mut rng = StdRng::seed_from_u64(77);
    let r = DMatrix::from_fn(6, 5, |_, _| rng.random_range(-2.0..2.0));
    let delta = 0.05;
    let value = |m: &DMatrix<f64>| m.map(|v| (v * v + delta * delta).sqrt()).sum();
    let fd = finite_diff_gradient(value, &r, 1e-7);
    let e = update_weights(&r, delta);
    let analytic = r.component_mul(&e.values().map(|v| v * v));
    let gap = (&analytic - &fd).norm() / fd.norm();
    assert!(gap < 1e-7, "IRLS weights disagree with smoothed-L1 slope by {gap:.3e}");
}

#[test]
fn robust_objective_matches_scalar_reference_loop() {
    let f = 3usize;
    let p = 5usize;
    let topo = GridTopology::full(1, 5).unwrap();
    let (w, r) = random_instance(f, p, 21);
    let s = ShapeStack::new(random_shape(f, p, 22)).unwrap();
    let op_h = build_temporal_operator(f, 1).unwrap();
    let op_a = build_laplacian(topo.clone());
    let cfg = SolverConfig {
        lambda1: 0.9,
        lambda2: 0.4,
        delta: Some(0.02),
        ..SolverConfig::default()
    };
    let fast = robust_objective(&w, &r, &s, &op_h, &op_a, &cfg);

    let residual = w.data() - dense_rotation(&r) * s.data();
    let mut reference = 0.0;
    for v in residual.iter() {
        reference += (v * v + 0.02f64 * 0.02).sqrt();
    }
    reference += 0.9 * (dense_temporal(f) * s.data()).norm_squared();
    reference += 0.4 * (s.data() * dense_laplacian(&topo).transpose()).norm_squared();
    let gap = (fast - reference).abs() / reference.abs();
    assert!(gap < 1e-12, "objective differs from scalar reference by {gap:.3e}");
}

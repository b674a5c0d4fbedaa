//! Shared helpers for the integration suites: random instances and dense
//! oracles assembled independently of the library's operator code paths.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3};
use nrsfm_core::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Random row-orthonormal camera block via the Q factor of a random matrix.
pub fn random_block(rng: &mut StdRng) -> Matrix2x3<f64> {
    let m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let q = m.qr().q();
    Matrix2x3::from_fn(|r, c| q[(r, c)])
}

/// Random rotations and tracks for an F-frame, P-point instance.
pub fn random_instance(f: usize, p: usize, seed: u64) -> (TrackMatrix, RotationStack) {
    let mut rng = StdRng::seed_from_u64(seed);
    let blocks = (0..f).map(|_| random_block(&mut rng)).collect();
    let r = assemble_rotation(blocks).unwrap();
    let w =
        TrackMatrix::new(DMatrix::from_fn(2 * f, p, |_, _| rng.random_range(-1.0..1.0))).unwrap();
    (w, r)
}

/// Random strictly positive weight field.
pub fn random_weights(f: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    DMatrix::from_fn(2 * f, p, |_, _| rng.random_range(0.2..2.0))
}

/// Dense 2F×3F block-diagonal camera matrix.
pub fn dense_rotation(r: &RotationStack) -> DMatrix<f64> {
    let f = r.frames();
    let mut out = DMatrix::zeros(2 * f, 3 * f);
    for i in 0..f {
        let block = r.block(i);
        for row in 0..2 {
            for col in 0..3 {
                out[(2 * i + row, 3 * i + col)] = block[(row, col)];
            }
        }
    }
    out
}

/// Dense 3(F−1)×3F first-order temporal difference matrix, built directly
/// from its definition H[i, i] = 1, H[i, i+3] = −1.
pub fn dense_temporal(f: usize) -> DMatrix<f64> {
    let rows = 3 * (f - 1);
    let mut out = DMatrix::zeros(rows, 3 * f);
    for i in 0..rows {
        out[(i, i)] = 1.0;
        out[(i, i + 3)] = -1.0;
    }
    out
}

/// Dense P×P truncated-stencil Laplacian enumerated independently: two
/// present cells are neighbors iff their Chebyshev distance is exactly 1.
pub fn dense_laplacian(topo: &GridTopology) -> DMatrix<f64> {
    let cells: Vec<(isize, isize, usize)> = topo
        .present_cells()
        .map(|(r, c, idx)| (r as isize, c as isize, idx))
        .collect();
    let p = topo.points();
    let mut out = DMatrix::zeros(p, p);
    for &(r1, c1, i1) in &cells {
        for &(r2, c2, i2) in &cells {
            if i1 != i2 && (r1 - r2).abs().max((c1 - c2).abs()) == 1 {
                out[(i1, i2)] = 1.0;
                out[(i1, i1)] -= 1.0;
            }
        }
    }
    out
}

/// Kronecker product.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (am, an) = a.shape();
    let (bm, bn) = b.shape();
    let mut out = DMatrix::zeros(am * bm, an * bn);
    for i in 0..am {
        for j in 0..an {
            for k in 0..bm {
                for l in 0..bn {
                    out[(i * bm + k, j * bn + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Column-stacked vectorization (matches nalgebra's storage order).
pub fn vec_cols(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_cols`].
pub fn unvec_cols(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Densely assembled normal system of the weighted quadratic subproblem
/// over vec(S):
///
/// A = (I_P⊗R)ᵀ D_E² (I_P⊗R) + λ1 I_P⊗HᵀH + λ2 (LᵀL)⊗I_3F,
/// b = (I_P⊗R)ᵀ D_E² vec(W).
pub fn assemble_normal_system(
    w: &TrackMatrix,
    r: &RotationStack,
    e_values: &DMatrix<f64>,
    topo: &GridTopology,
    lambda1: f64,
    lambda2: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let f = w.frames();
    let p = w.points();
    let rd = dense_rotation(r);
    let hd = dense_temporal(f);
    let ld = dense_laplacian(topo);
    let ip = DMatrix::identity(p, p);
    let i3f = DMatrix::identity(3 * f, 3 * f);
    let big_r = kron(&ip, &rd);
    let e2 = DMatrix::from_diagonal(&vec_cols(&e_values.component_mul(e_values)));
    let mut a = big_r.transpose() * &e2 * &big_r;
    a += lambda1 * kron(&ip, &(hd.transpose() * &hd));
    a += lambda2 * kron(&(ld.transpose() * &ld), &i3f);
    let b = big_r.transpose() * (&e2 * vec_cols(w.data()));
    (a, b)
}

/// The weighted quadratic subproblem value ‖E⊙(W−RS)‖² + λ1‖HS‖² + λ2‖S·Lᵀ‖²
/// evaluated through the dense oracles.
pub fn dense_quadratic_value(
    w: &TrackMatrix,
    r: &RotationStack,
    e_values: &DMatrix<f64>,
    topo: &GridTopology,
    lambda1: f64,
    lambda2: f64,
    s: &DMatrix<f64>,
) -> f64 {
    let rd = dense_rotation(r);
    let hd = dense_temporal(w.frames());
    let ld = dense_laplacian(topo);
    let residual = (w.data() - &rd * s).component_mul(e_values);
    residual.norm_squared() + lambda1 * (&hd * s).norm_squared() + lambda2 * (s * ld.transpose()).norm_squared()
}

/// Central finite-difference gradient of a scalar function of a matrix.
pub fn finite_diff_gradient(
    f: impl Fn(&DMatrix<f64>) -> f64,
    at: &DMatrix<f64>,
    step: f64,
) -> DMatrix<f64> {
    let mut grad = DMatrix::zeros(at.nrows(), at.ncols());
    for row in 0..at.nrows() {
        for col in 0..at.ncols() {
            let mut plus = at.clone();
            plus[(row, col)] += step;
            let mut minus = at.clone();
            minus[(row, col)] -= step;
            grad[(row, col)] = (f(&plus) - f(&minus)) / (2.0 * step);
        }
    }
    grad
}

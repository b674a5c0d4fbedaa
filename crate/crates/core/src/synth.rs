//! Synthetic deforming-surface scenes with known ground truth, plus the
//! noise and outlier contamination protocols used by the experiments.
//!
//! A scene is a planar grid deformed by `basis_rank` smooth spatial modes
//! whose coefficients vary sinusoidally over time, observed by an
//! orthographic camera sweeping around a fixed axis. The first mode is a
//! low-frequency tilt with a dominant constant component; higher modes are
//! gentle sinusoidal bumps with small in-plane motion. Everything is smooth
//! in both space and time, so the reconstruction model's assumptions hold
//! by construction, and the rearranged shape matrix has low rank.
//!
//! All randomness flows from explicit seeds through a counter-based
//! generator, so identical specs reproduce identical scenes bitwise.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, Matrix2x3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{assemble_rotation, GridTopology, RotationStack, ShapeStack, TrackMatrix};

/// Spatial frequency pairs cycled through by the bump modes.
const BUMP_FREQUENCIES: [(f64, f64); 4] = [(1.0, 1.0), (1.0, 0.5), (0.5, 1.0), (1.5, 1.0)];

/// Smooth camera path: a fixed axis with per-frame angle increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationPath {
    axis: [f64; 3],
    increments: Vec<f64>,
}

impl RotationPath {
    /// Path from explicit per-frame angle increments (radians); the camera
    /// angle at frame i is the cumulative sum through increment i.
    pub fn new(axis: [f64; 3], increments: Vec<f64>) -> Result<Self> {
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(CoreError::InvalidParameter {
                name: "axis",
                reason: "must be a finite nonzero vector".into(),
            });
        }
        if increments.is_empty() {
            return Err(CoreError::InvalidParameter {
                name: "increments",
                reason: "need at least one frame".into(),
            });
        }
        if increments.iter().any(|a| !a.is_finite()) {
            return Err(CoreError::InvalidParameter {
                name: "increments",
                reason: "angles must be finite".into(),
            });
        }
        Ok(Self { axis, increments })
    }

    /// Uniform sweep: angle(i) = start + i·step for `frames` frames.
    pub fn swept(axis: [f64; 3], start: f64, step: f64, frames: usize) -> Result<Self> {
        if frames == 0 {
            return Err(CoreError::InvalidParameter {
                name: "frames",
                reason: "must be at least 1".into(),
            });
        }
        let mut increments = vec![step; frames];
        increments[0] = start;
        Self::new(axis, increments)
    }

    /// Number of frames on the path.
    pub fn frames(&self) -> usize {
        self.increments.len()
    }

    /// Rotation axis (not necessarily normalized).
    pub fn axis(&self) -> [f64; 3] {
        self.axis
    }

    /// Cumulative camera angles, one per frame.
    pub fn angles(&self) -> Vec<f64> {
        self.increments
            .iter()
            .scan(0.0, |acc, inc| {
                *acc += inc;
                Some(*acc)
            })
            .collect()
    }

    /// Orthographic camera blocks: the first two rows of the axis-angle
    /// rotation at each cumulative angle.
    pub fn camera_blocks(&self) -> Vec<Matrix2x3<f64>> {
        let axis = Unit::new_normalize(Vector3::new(self.axis[0], self.axis[1], self.axis[2]));
        self.angles()
            .iter()
            .map(|&theta| {
                let rot = Rotation3::from_axis_angle(&axis, theta);
                Matrix2x3::from_fn(|r, c| rot[(r, c)])
            })
            .collect()
    }
}

/// Full description of a synthetic scene; identical specs generate
/// identical scenes bitwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Grid rows.
    pub rows: usize,
    /// Grid columns.
    pub cols: usize,
    /// Number of frames F.
    pub frames: usize,
    /// Number of deformation modes K_gen (≥ 1).
    pub basis_rank: usize,
    /// Scales all mode coefficients; 0 gives a rigid sequence.
    pub deformation_amplitude: f64,
    /// Camera path.
    pub rotation_path: RotationPath,
    /// Seed for mode phases and directions.
    pub seed: u64,
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(CoreError::InvalidParameter {
                name: "grid",
                reason: format!("needs at least one cell, got {}x{}", self.rows, self.cols),
            });
        }
        if self.frames == 0 {
            return Err(CoreError::InvalidParameter {
                name: "frames",
                reason: "must be at least 1".into(),
            });
        }
        if self.basis_rank == 0 {
            return Err(CoreError::InvalidParameter {
                name: "basis_rank",
                reason: "must be at least 1".into(),
            });
        }
        if !self.deformation_amplitude.is_finite() || self.deformation_amplitude < 0.0 {
            return Err(CoreError::InvalidParameter {
                name: "deformation_amplitude",
                reason: format!("must be finite and nonnegative, got {}", self.deformation_amplitude),
            });
        }
        if self.rotation_path.frames() != self.frames {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{} rotation increments", self.frames),
                found: format!("{}", self.rotation_path.frames()),
            });
        }
        Ok(())
    }
}

/// A generated scene: exact tracks, true rotations, ground-truth shapes and
/// the grid topology, with `tracks = reproject(rotations, ground_truth)`
/// bitwise.
#[derive(Debug, Clone)]
pub struct Scene {
    pub tracks: TrackMatrix,
    pub rotations: RotationStack,
    pub ground_truth: ShapeStack,
    pub topology: GridTopology,
}

/// Mask of contaminated (frame, point) pairs returned by
/// [`inject_outliers`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlierMask {
    frames: usize,
    points: usize,
    pairs: Vec<(usize, usize)>,
}

impl OutlierMask {
    /// Number of frames of the contaminated track matrix.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Number of points of the contaminated track matrix.
    pub fn points(&self) -> usize {
        self.points
    }

    /// Contaminated (frame, point) pairs, sorted lexicographically.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Number of contaminated pairs.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    /// Whether no pair was contaminated.
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Whether a specific (frame, point) observation was replaced.
    pub fn contains(&self, frame: usize, point: usize) -> bool {
        self.pairs.binary_search(&(frame, point)).is_ok()
    }
}

/// Generates a deforming-grid scene from a spec.
///
/// The returned tracks satisfy W = R·S exactly, the ground truth is
/// centered per frame, and the F×3P rearranged shape matrix has rank at
/// most 3(K_gen+1) (asserted on output).
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let rows = spec.rows;
    let cols = spec.cols;
    let p = rows * cols;
    let f = spec.frames;
    let k = spec.basis_rank;
    let topology = GridTopology::full(rows, cols)?;

    // Base planar grid on centered coordinates spanning [-1, 1] along the
    // longer side.
    let step = 2.0 / ((rows.max(cols) - 1).max(1) as f64);
    let coord = |i: usize, n: usize| (i as f64 - (n as f64 - 1.0) / 2.0) * step;
    let mut base = DMatrix::zeros(3, p);
    for (r, c, idx) in topology.present_cells() {
        base[(0, idx)] = coord(c, cols);
        base[(1, idx)] = coord(r, rows);
    }
    let base_norm = base.norm();
    let mode_scale = if base_norm > 0.0 { base_norm } else { 1.0 };

    // Unit grid parameters for the bump fields.
    let unit = |i: usize, n: usize| {
        if n > 1 {
            i as f64 / (n as f64 - 1.0)
        } else {
            0.5
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut modes: Vec<DMatrix<f64>> = Vec::with_capacity(k);
    for mode_index in 0..k {
        let mut mode = DMatrix::zeros(3, p);
        if mode_index == 0 {
            // Dominant tilt mode: a linear out-of-plane field.
            let gamma: f64 = rng.random_range(0.0..TAU);
            for (_, _, idx) in topology.present_cells() {
                mode[(2, idx)] = gamma.cos() * base[(0, idx)] + gamma.sin() * base[(1, idx)];
            }
        } else {
            // Bump mode: separable sinusoid in z with a small in-plane swirl.
            let phi1: f64 = rng.random_range(0.0..TAU);
            let phi2: f64 = rng.random_range(0.0..TAU);
            let (fa, fb) = BUMP_FREQUENCIES[(mode_index - 1) % BUMP_FREQUENCIES.len()];
            for (r, c, idx) in topology.present_cells() {
                let u = PI * fa * unit(c, cols) + phi1;
                let v = PI * fb * unit(r, rows) + phi2;
                mode[(0, idx)] = 0.06 * u.cos() * v.sin();
                mode[(1, idx)] = 0.06 * u.sin() * v.cos();
                mode[(2, idx)] = u.sin() * v.sin();
            }
        }
        // Remove per-coordinate means and normalize to the base footprint.
        for row in 0..3 {
            let mean = mode.row(row).sum() / p as f64;
            for col in 0..p {
                mode[(row, col)] -= mean;
            }
        }
        let norm = mode.norm();
        if norm > 0.0 {
            mode *= mode_scale / norm;
        }
        modes.push(mode);
    }
    let phases: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..TAU)).collect();

    // Temporal coefficients: the tilt keeps a strong constant component so
    // the surface stays curved in every frame; bumps are purely oscillatory.
    let coefficient = |mode_index: usize, frame: usize| {
        let (dc, ac) = if mode_index == 0 {
            (0.8, 0.12)
        } else {
            (0.0, 0.08 / (k as f64 - 1.0))
        };
        let freq = (1 + mode_index) as f64;
        let phase = TAU * freq * frame as f64 / f as f64 + phases[mode_index];
        spec.deformation_amplitude * (dc + ac * phase.sin())
    };

    let mut s = DMatrix::zeros(3 * f, p);
    for i in 0..f {
        let mut frame = base.clone();
        for (j, mode) in modes.iter().enumerate() {
            frame += coefficient(j, i) * mode;
        }
        // Center the frame so the tracks come out centered too.
        for row in 0..3 {
            let mean = frame.row(row).sum() / p as f64;
            for col in 0..p {
                frame[(row, col)] -= mean;
            }
        }
        s.view_mut((3 * i, 0), (3, p)).copy_from(&frame);
    }

    let rotations = assemble_rotation(spec.rotation_path.camera_blocks())?;
    let ground_truth = ShapeStack::new(s)?;
    let tracks = TrackMatrix::new(rotations.apply_matrix(ground_truth.data()))?;

    // Rank certificate: frames rearranged as rows must span at most
    // 3(K_gen+1) directions.
    let mut rearranged = DMatrix::zeros(f, 3 * p);
    for i in 0..f {
        for row in 0..3 {
            for col in 0..p {
                rearranged[(i, row * p + col)] = ground_truth.data()[(3 * i + row, col)];
            }
        }
    }
    let sv = rearranged.svd(false, false).singular_values;
    let budget = 3 * (k + 1);
    if sv[0] > 0.0 {
        for (idx, sigma) in sv.iter().enumerate().skip(budget.min(sv.len())) {
            assert!(
                *sigma <= 1e-8 * sv[0],
                "rearranged shape rank exceeds 3(K_gen+1): sigma[{idx}] = {sigma:.3e}"
            );
        }
    }

    Ok(Scene {
        tracks,
        rotations,
        ground_truth,
        topology,
    })
}

/// Adds i.i.d. zero-mean Gaussian noise with σ = r·max|W| to every entry.
///
/// `r = 0` returns the input unchanged (bitwise). Deterministic per seed.
pub fn inject_noise(w: &TrackMatrix, r: f64, seed: u64) -> Result<TrackMatrix> {
    if !r.is_finite() || r < 0.0 {
        return Err(CoreError::InvalidParameter {
            name: "noise_ratio",
            reason: format!("must be finite and nonnegative, got {r}"),
        });
    }
    if r == 0.0 {
        return Ok(w.clone());
    }
    let sigma = r * w.max_abs();
    if sigma == 0.0 {
        return Ok(w.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = w.data().clone();
    for value in data.iter_mut() {
        *value += normal.sample(&mut rng);
    }
    TrackMatrix::new(data)
}

/// Replaces ⌊ratio·F·P⌋ distinct (frame, point) observations — both u and v
/// — with independent uniform draws over [min W, max W].
///
/// Untouched entries are bitwise unchanged; deterministic per seed.
pub fn inject_outliers(w: &TrackMatrix, ratio: f64, seed: u64) -> Result<(TrackMatrix, OutlierMask)> {
    if !ratio.is_finite() || !(0.0..=1.0).contains(&ratio) {
        return Err(CoreError::InvalidParameter {
            name: "outlier_ratio",
            reason: format!("must lie in [0, 1], got {ratio}"),
        });
    }
    let f = w.frames();
    let p = w.points();
    let total = f * p;
    // Tolerant floor so ratios like 0.3 of 10 don't lose a pair to roundoff.
    let count = ((ratio * total as f64) + 1e-9).floor() as usize;
    let count = count.min(total);

    let mut data = w.data().clone();
    let mut pairs = Vec::with_capacity(count);
    if count > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = rand::seq::index::sample(&mut rng, total, count).into_vec();
        chosen.sort_unstable();
        let lo = w.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = w.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for linear in chosen {
            let frame = linear / p;
            let point = linear % p;
            let mut draw = || {
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            };
            data[(2 * frame, point)] = draw();
            data[(2 * frame + 1, point)] = draw();
            pairs.push((frame, point));
        }
    }
    Ok((
        TrackMatrix::new(data)?,
        OutlierMask {
            frames: f,
            points: p,
            pairs,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reproject;
    use crate::temporal::build_temporal_operator;

    fn small_spec() -> SceneSpec {
        SceneSpec {
            rows: 5,
            cols: 6,
            frames: 8,
            basis_rank: 2,
            deformation_amplitude: 0.7,
            rotation_path: RotationPath::swept([0.25, 1.0, 0.15], -0.5, 0.05, 8).unwrap(),
            seed: 3,
        }
    }

    #[test]
    fn swept_path_accumulates_angles() {
        let path = RotationPath::swept([0.0, 1.0, 0.0], -0.5, 0.05, 4).unwrap();
        let angles = path.angles();
        let expected = [-0.5, -0.45, -0.4, -0.35];
        for (a, e) in angles.iter().zip(expected.iter()) {
            assert!((a - e).abs() < 1e-15, "angle {a} vs {e}");
        }
    }

    #[test]
    fn zero_axis_is_rejected() {
        assert!(RotationPath::swept([0.0, 0.0, 0.0], 0.0, 0.1, 3).is_err());
    }

    #[test]
    fn tracks_equal_reprojection_bitwise() {
        let scene = generate_scene(&small_spec()).unwrap();
        let reproj = reproject(&scene.rotations, &scene.ground_truth).unwrap();
        assert_eq!(scene.tracks.data(), reproj.data());
    }

    #[test]
    fn zero_amplitude_gives_a_rigid_sequence() {
        let mut spec = small_spec();
        spec.deformation_amplitude = 0.0;
        let scene = generate_scene(&spec).unwrap();
        let h = build_temporal_operator(spec.frames, 1).unwrap();
        assert_eq!(h.apply(scene.ground_truth.data()).norm(), 0.0);
        let first = scene.ground_truth.frame(0).into_owned();
        for i in 1..spec.frames {
            assert_eq!(scene.ground_truth.frame(i).into_owned(), first, "frame {i}");
        }
    }

    #[test]
    fn ground_truth_is_centered_per_frame() {
        let scene = generate_scene(&small_spec()).unwrap();
        for i in 0..8 {
            let frame = scene.ground_truth.frame(i);
            for row in 0..3 {
                let mean = frame.row(row).sum() / frame.ncols() as f64;
                assert!(mean.abs() < 1e-12, "frame {i} row {row} mean {mean}");
            }
        }
    }

    #[test]
    fn identical_seeds_reproduce_identical_scenes() {
        let a = generate_scene(&small_spec()).unwrap();
        let b = generate_scene(&small_spec()).unwrap();
        assert_eq!(a.tracks.data(), b.tracks.data());
        assert_eq!(a.ground_truth.data(), b.ground_truth.data());
        let mut other = small_spec();
        other.seed = 4;
        let c = generate_scene(&other).unwrap();
        assert_ne!(a.ground_truth.data(), c.ground_truth.data());
    }

    #[test]
    fn noise_is_deterministic_and_scaled() {
        let scene = generate_scene(&small_spec()).unwrap();
        let w = &scene.tracks;
        let a = inject_noise(w, 0.05, 7).unwrap();
        let b = inject_noise(w, 0.05, 7).unwrap();
        assert_eq!(a.data(), b.data());
        let c = inject_noise(w, 0.05, 8).unwrap();
        assert_ne!(a.data(), c.data());
        // Sample standard deviation of the perturbation within 5% of σ.
        let diff = a.data() - w.data();
        let n = diff.len() as f64;
        let mean = diff.iter().sum::<f64>() / n;
        let var = diff.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
        let sigma = 0.05 * w.max_abs();
        assert!(
            (var.sqrt() - sigma).abs() < 0.05 * sigma,
            "sample std {} vs target {}",
            var.sqrt(),
            sigma
        );
    }

    #[test]
    fn zero_noise_is_bitwise_identity() {
        let scene = generate_scene(&small_spec()).unwrap();
        let out = inject_noise(&scene.tracks, 0.0, 999).unwrap();
        assert_eq!(out.data(), scene.tracks.data());
    }

    #[test]
    fn outlier_count_and_bounds_are_exact() {
        let mut spec = small_spec();
        spec.rows = 10;
        spec.cols = 10;
        spec.frames = 20;
        spec.rotation_path = RotationPath::swept([0.25, 1.0, 0.15], -0.5, 0.05, 20).unwrap();
        let scene = generate_scene(&spec).unwrap();
        let (noisy, mask) = inject_outliers(&scene.tracks, 0.10, 11).unwrap();
        assert_eq!(mask.len(), 200, "10% of 20x100 observations");
        let lo = scene.tracks.data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = scene.tracks.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for &(frame, point) in mask.pairs() {
            for row in [2 * frame, 2 * frame + 1] {
                let v = noisy.data()[(row, point)];
                assert!((lo..=hi).contains(&v), "outlier value {v} outside [{lo}, {hi}]");
            }
        }
        // Untouched entries are bitwise unchanged.
        for frame in 0..20 {
            for point in 0..100 {
                if !mask.contains(frame, point) {
                    assert_eq!(
                        noisy.data()[(2 * frame, point)],
                        scene.tracks.data()[(2 * frame, point)]
                    );
                    assert_eq!(
                        noisy.data()[(2 * frame + 1, point)],
                        scene.tracks.data()[(2 * frame + 1, point)]
                    );
                }
            }
        }
    }

    #[test]
    fn zero_outlier_ratio_is_identity_with_empty_mask() {
        let scene = generate_scene(&small_spec()).unwrap();
        let (out, mask) = inject_outliers(&scene.tracks, 0.0, 5).unwrap();
        assert_eq!(out.data(), scene.tracks.data());
        assert!(mask.is_empty());
    }

    #[test]
    fn outliers_are_deterministic_per_seed() {
        let scene = generate_scene(&small_spec()).unwrap();
        let (a, mask_a) = inject_outliers(&scene.tracks, 0.08, 13).unwrap();
        let (b, mask_b) = inject_outliers(&scene.tracks, 0.08, 13).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(mask_a, mask_b);
    }

    #[test]
    fn invalid_contamination_parameters_are_rejected() {
        let scene = generate_scene(&small_spec()).unwrap();
        assert!(inject_noise(&scene.tracks, -0.01, 1).is_err());
        assert!(inject_outliers(&scene.tracks, 1.5, 1).is_err());
        assert!(inject_outliers(&scene.tracks, -0.1, 1).is_err());
    }

    #[test]
    fn rank_certificate_holds_for_the_acceptance_scene_shape() {
        let spec = SceneSpec {
            rows: 10,
            cols: 10,
            frames: 20,
            basis_rank: 2,
            deformation_amplitude: 1.0,
            rotation_path: RotationPath::swept([0.25, 1.0, 0.15], -0.5, 0.05, 20).unwrap(),
            seed: 1,
        };
        let scene = generate_scene(&spec).unwrap();
        let p = 100;
        let mut rearranged = DMatrix::zeros(20, 3 * p);
        for i in 0..20 {
            for row in 0..3 {
                for col in 0..p {
                    rearranged[(i, row * p + col)] = scene.ground_truth.data()[(3 * i + row, col)];
                }
            }
        }
        let sv = rearranged.svd(false, false).singular_values;
        for idx in 9..sv.len() {
            assert!(
                sv[idx] <= 1e-8 * sv[0],
                "sigma[{idx}] = {:.3e} exceeds rank budget for K_gen = 2",
                sv[idx]
            );
        }
    }
}

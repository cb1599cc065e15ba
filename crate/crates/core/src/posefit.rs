//! Projection-matrix estimation from 2D–3D landmark correspondences.
//!
//! The estimator is the normalized direct linear transform: both point sets
//! are centered and isotropically scaled (mean distance √2 in the image,
//! √3 in the model), the 12 entries of the camera are the right singular
//! vector of the stacked design matrix with the smallest singular value, and
//! the normalization is undone afterwards.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Vector4};
use thiserror::Error;

use crate::bundle::ReferenceBundle;
use crate::camera::{Camera, CameraError, Point3};
use crate::imagecore::Point2;
use crate::landmarks::LandmarkSet;

/// Reference landmarks farther than this from any valid pixel are dropped.
pub const SNAP_RADIUS: f64 = 3.0;
pub const MIN_CORRESPONDENCES: usize = 6;
/// `condition_ratio` below this marks a fit as near-degenerate.
pub const CONDITION_THRESHOLD: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum PoseError {
    #[error("query has {query} landmarks in schema '{query_schema}', reference has {reference} in '{reference_schema}'")]
    LandmarkMismatch {
        query: usize,
        reference: usize,
        query_schema: String,
        reference_schema: String,
    },
    #[error("only {0} usable correspondences, need at least 6")]
    TooFewCorrespondences(usize),
    #[error("correspondences are degenerate (collinear or coincident points)")]
    RankDeficient,
    #[error("non-finite coordinate in correspondence {0}")]
    NonFinite(usize),
}

impl From<CameraError> for PoseError {
    fn from(_: CameraError) -> Self {
        PoseError::RankDeficient
    }
}

/// Query image point `p` paired with model point `P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub p: Point2,
    pub model: Point3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionFlag {
    WellConditioned,
    NearDegenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseFitReport {
    pub camera: Camera,
    pub rms_reprojection: f64,
    pub max_reprojection: f64,
    pub num_points: usize,
    pub condition_flag: ConditionFlag,
    /// Ratio of the two smallest singular values of the normalized design
    /// matrix (second smallest over smallest).
    pub condition_ratio: f64,
    /// Smallest singular value of the normalized design matrix.
    pub algebraic_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Polish the linear estimate by minimizing reprojection error.
    pub refine: bool,
    pub refine_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            refine: false,
            refine_iterations: 10,
        }
    }
}

/// Pairs each query landmark with the 3D point behind the nearest valid
/// pixel to the matching reference landmark.
pub fn make_correspondences(
    query: &LandmarkSet,
    bundle: &ReferenceBundle,
) -> Result<Vec<Correspondence>, PoseError> {
    let reference = &bundle.landmarks;
    let names_match = query.schema == reference.schema
        && query.len() == reference.len()
        && query.points.iter().zip(&reference.points).all(|(a, b)| a.name == b.name);
    if !names_match {
        return Err(PoseError::LandmarkMismatch {
            query: query.len(),
            reference: reference.len(),
            query_schema: query.schema.clone(),
            reference_schema: reference.schema.clone(),
        });
    }
    let corrs: Vec<Correspondence> = query
        .points
        .iter()
        .zip(&reference.points)
        .filter_map(|(q, r)| {
            let i = bundle.nearest_valid(r.point(), SNAP_RADIUS)?;
            Some(Correspondence {
                p: q.point(),
                model: bundle.point(i),
            })
        })
        .collect();
    if corrs.len() < MIN_CORRESPONDENCES {
        return Err(PoseError::TooFewCorrespondences(corrs.len()));
    }
    Ok(corrs)
}

/// Dehomogenized projection, `p ∼ C·[P; 1]`.
pub fn project(camera: &Camera, p: &Point3) -> Result<Point2, CameraError> {
    camera.project(p)
}

pub fn estimate_projection(corrs: &[Correspondence]) -> Result<PoseFitReport, PoseError> {
    estimate_projection_with(corrs, &FitOptions::default())
}

pub fn estimate_projection_with(
    corrs: &[Correspondence],
    opts: &FitOptions,
) -> Result<PoseFitReport, PoseError> {
    if corrs.len() < MIN_CORRESPONDENCES {
        return Err(PoseError::TooFewCorrespondences(corrs.len()));
    }
    for (i, c) in corrs.iter().enumerate() {
        if !(c.p.is_finite() && c.model.iter().all(|v| v.is_finite())) {
            return Err(PoseError::NonFinite(i));
        }
    }
    let pts2: Vec<Point2> = corrs.iter().map(|c| c.p).collect();
    let pts3: Vec<Point3> = corrs.iter().map(|c| c.model).collect();
    if spread_rank(&pts3) < 2 {
        return Err(PoseError::RankDeficient);
    }
    let t2 = normalize2(&pts2).ok_or(PoseError::RankDeficient)?;
    let t3 = normalize3(&pts3).ok_or(PoseError::RankDeficient)?;

    let a = design_matrix(&pts2, &pts3, &t2, &t3);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let smallest = sv[order[0]];
    let second = sv[order[1]];
    let row: Vec<f64> = v_t.row(order[0]).iter().copied().collect();
    let c_norm = Matrix3x4::from_row_slice(&row);

    let t2_inv = t2.try_inverse().ok_or(PoseError::RankDeficient)?;
    let mut c = t2_inv * c_norm * t3;
    c /= c.norm();
    let centroid = pts3.iter().sum::<Point3>() / pts3.len() as f64;
    if (c * Vector4::new(centroid.x, centroid.y, centroid.z, 1.0)).z < 0.0 {
        c = -c;
    }
    if opts.refine {
        c = refine(c, corrs, opts.refine_iterations);
    }
    let camera = Camera::from_matrix(c)?;

    let condition_ratio = if smallest > 0.0 { second / smallest } else { f64::INFINITY };
    let degenerate_scale = sv.max() * 1e-12;
    let condition_flag = if condition_ratio < CONDITION_THRESHOLD || second <= degenerate_scale {
        ConditionFlag::NearDegenerate
    } else {
        ConditionFlag::WellConditioned
    };
    let (rms, max) = reprojection_stats(&camera, corrs);
    Ok(PoseFitReport {
        camera,
        rms_reprojection: rms,
        max_reprojection: max,
        num_points: corrs.len(),
        condition_flag,
        condition_ratio,
        algebraic_residual: smallest,
    })
}

/// RMS and maximum pixel distance between `p` and the projection of `P`.
/// Points at infinity count as infinitely far.
pub fn reprojection_stats(camera: &Camera, corrs: &[Correspondence]) -> (f64, f64) {
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for c in corrs {
        let d = camera
            .project(&c.model)
            .map(|q| q.distance(&c.p))
            .unwrap_or(f64::INFINITY);
        sum += d * d;
        max = max.max(d);
    }
    ((sum / corrs.len().max(1) as f64).sqrt(), max)
}

/// Number of significant directions spanned by the centered points.
fn spread_rank(pts: &[Point3]) -> usize {
    let mean = pts.iter().sum::<Point3>() / pts.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let ev = cov.symmetric_eigenvalues();
    let top = ev.max();
    if top <= 0.0 {
        return 0;
    }
    ev.iter().filter(|&&e| e > top * 1e-12).count()
}

/// Similarity taking the points to zero mean and mean distance √2.
pub fn normalize2(pts: &[Point2]) -> Option<Matrix3<f64>> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let mean = pts.iter().map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    if !(mean > 0.0) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

/// Similarity taking the points to zero mean and mean distance √3.
pub fn normalize3(pts: &[Point3]) -> Option<Matrix4<f64>> {
    let n = pts.len() as f64;
    let c = pts.iter().sum::<Point3>() / n;
    let mean = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    if !(mean > 0.0) {
        return None;
    }
    let s = 3f64.sqrt() / mean;
    let mut t = Matrix4::identity() * s;
    t[(3, 3)] = 1.0;
    t[(0, 3)] = -s * c.x;
    t[(1, 3)] = -s * c.y;
    t[(2, 3)] = -s * c.z;
    Some(t)
}

fn design_matrix(
    pts2: &[Point2],
    pts3: &[Point3],
    t2: &Matrix3<f64>,
    t3: &Matrix4<f64>,
) -> DMatrix<f64> {
    let n = pts2.len();
    // pad to at least 12 rows so the thin SVD exposes the full right basis
    let rows = (2 * n).max(12);
    let mut a = DMatrix::zeros(rows, 12);
    for (i, (p, q)) in pts2.iter().zip(pts3).enumerate() {
        let ph = t2 * nalgebra::Vector3::new(p.x, p.y, 1.0);
        let (x, y) = (ph.x / ph.z, ph.y / ph.z);
        let qh = t3 * Vector4::new(q.x, q.y, q.z, 1.0);
        for k in 0..4 {
            a[(2 * i, k)] = qh[k];
            a[(2 * i, 8 + k)] = -x * qh[k];
            a[(2 * i + 1, 4 + k)] = qh[k];
            a[(2 * i + 1, 8 + k)] = -y * qh[k];
        }
    }
    a
}

/// Levenberg–Marquardt on the 12 camera entries, renormalized every step.
fn refine(mut c: Matrix3x4<f64>, corrs: &[Correspondence], iterations: usize) -> Matrix3x4<f64> {
    let cost = |c: &Matrix3x4<f64>| -> f64 {
        corrs
            .iter()
            .map(|k| {
                let h = c * Vector4::new(k.model.x, k.model.y, k.model.z, 1.0);
                (h.x / h.z - k.p.x).powi(2) + (h.y / h.z - k.p.y).powi(2)
            })
            .sum()
    };
    let mut lambda = 1e-3;
    let mut current = cost(&c);
    for _ in 0..iterations {
        let mut jtj = DMatrix::<f64>::zeros(12, 12);
        let mut jtr = nalgebra::DVector::<f64>::zeros(12);
        for k in corrs {
            let x = Vector4::new(k.model.x, k.model.y, k.model.z, 1.0);
            let h = c * x;
            let (u, v) = (h.x / h.z, h.y / h.z);
            let mut ju = [0.0; 12];
            let mut jv = [0.0; 12];
            for m in 0..4 {
                ju[m] = x[m] / h.z;
                ju[8 + m] = -u * x[m] / h.z;
                jv[4 + m] = x[m] / h.z;
                jv[8 + m] = -v * x[m] / h.z;
            }
            let (ru, rv) = (u - k.p.x, v - k.p.y);
            for r in 0..12 {
                jtr[r] += ju[r] * ru + jv[r] * rv;
                for s in 0..12 {
                    jtj[(r, s)] += ju[r] * ju[s] + jv[r] * jv[s];
                }
            }
        }
        let mut improved = false;
        for _ in 0..8 {
            let mut damped = jtj.clone();
            for d in 0..12 {
                damped[(d, d)] += lambda * (jtj[(d, d)] + 1e-12);
            }
            let Some(step) = damped.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut next = c;
            for r in 0..3 {
                for s in 0..4 {
                    next[(r, s)] += step[r * 4 + s];
                }
            }
            next /= next.norm();
            let next_cost = cost(&next);
            if next_cost < current {
                c = next;
                current = next_cost;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_camera(rng: &mut ChaCha8Rng) -> Camera {
        let f = rng.random_range(500.0..1500.0);
        let mut a = Camera::default_intrinsic(250, 250, f);
        a[(0, 2)] += rng.random_range(-20.0..20.0);
        a[(1, 2)] += rng.random_range(-20.0..20.0);
        let r = Rotation3::from_euler_angles(
            rng.random_range(-0.4..0.4),
            rng.random_range(-0.9..0.9),
            rng.random_range(-0.3..0.3),
        );
        let t = Vector3::new(
            rng.random_range(-30.0..30.0),
            rng.random_range(-30.0..30.0),
            rng.random_range(600.0..1200.0),
        );
        Camera::from_parts(a, *r.matrix(), t).unwrap()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                )
            })
            .collect()
    }

    fn corrs_for(cam: &Camera, pts: &[Point3]) -> Vec<Correspondence> {
        pts.iter()
            .map(|p| Correspondence {
                p: cam.project(p).unwrap(),
                model: *p,
            })
            .collect()
    }

    fn relative_error(a: &Camera, b: &Camera, at: &Point3) -> f64 {
        let na = a.normalized(at);
        let nb = b.normalized(at);
        (na - nb).norm() / nb.norm()
    }

    #[test]
    fn noiseless_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cam = random_camera(&mut rng);
        let pts = random_points(&mut rng, 20);
        let rep = estimate_projection(&corrs_for(&cam, &pts)).unwrap();
        assert!(relative_error(&rep.camera, &cam, &pts[0]) < 1e-6);
        assert!(rep.rms_reprojection < 1e-6);
        assert!(rep.rms_reprojection <= rep.max_reprojection);
        assert_eq!(rep.condition_flag, ConditionFlag::WellConditioned);
        assert!((rep.camera.matrix().norm() - 1.0).abs() < 1e-12);
        for p in &pts {
            let q = project(&rep.camera, p).unwrap();
            assert!(q.distance(&cam.project(p).unwrap()) < 1e-6);
        }
    }

    #[test]
    fn noisy_fit_stays_within_two_pixels() {
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut rms: Vec<f64> = (0..100u64)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
                let cam = random_camera(&mut rng);
                let pts = random_points(&mut rng, 20);
                let mut corrs = corrs_for(&cam, &pts);
                for c in &mut corrs {
                    c.p.x += noise.sample(&mut rng);
                    c.p.y += noise.sample(&mut rng);
                }
                estimate_projection(&corrs).unwrap().rms_reprojection
            })
            .collect();
        rms.sort_by(f64::total_cmp);
        assert!(rms[98] <= 2.0, "99th percentile {}", rms[98]);
    }

    #[test]
    fn collinear_points_rejected() {
        let cam = random_camera(&mut ChaCha8Rng::seed_from_u64(3));
        let pts: Vec<Point3> = (0..6)
            .map(|i| Point3::new(1.0, 2.0, 3.0) + Vector3::new(1.0, -2.0, 0.5) * i as f64 * 7.0)
            .collect();
        assert_eq!(
            estimate_projection(&corrs_for(&cam, &pts)),
            Err(PoseError::RankDeficient)
        );
    }

    #[test]
    fn too_few_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cam = random_camera(&mut rng);
        let pts = random_points(&mut rng, 5);
        assert_eq!(
            estimate_projection(&corrs_for(&cam, &pts)),
            Err(PoseError::TooFewCorrespondences(5))
        );
    }

    #[test]
    fn planar_points_are_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cam = random_camera(&mut rng);
        // nearly planar: thickness 0.01 over a 200-unit patch
        let pts: Vec<Point3> = random_points(&mut rng, 12)
            .into_iter()
            .map(|p| Point3::new(p.x, p.y, 0.01 * p.z / 100.0))
            .collect();
        let mut corrs = corrs_for(&cam, &pts);
        for c in &mut corrs {
            c.p.x += rng.random_range(-0.3..0.3);
            c.p.y += rng.random_range(-0.3..0.3);
        }
        let rep = estimate_projection(&corrs).unwrap();
        assert_eq!(rep.condition_flag, ConditionFlag::NearDegenerate);
    }

    /// Independent oracle: normalized design matrix rebuilt from scratch,
    /// smallest singular value from the eigenvalues of `AᵀA`.
    fn oracle_residual(corrs: &[Correspondence]) -> f64 {
        let n = corrs.len() as f64;
        let (mut mx, mut my) = (0.0, 0.0);
        let mut m3 = Vector3::zeros();
        for c in corrs {
            mx += c.p.x / n;
            my += c.p.y / n;
            m3 += c.model / n;
        }
        let d2: f64 = corrs.iter().map(|c| ((c.p.x - mx).powi(2) + (c.p.y - my).powi(2)).sqrt()).sum::<f64>() / n;
        let d3: f64 = corrs.iter().map(|c| (c.model - m3).norm()).sum::<f64>() / n;
        let (s2, s3) = (2f64.sqrt() / d2, 3f64.sqrt() / d3);
        let mut ata = nalgebra::SMatrix::<f64, 12, 12>::zeros();
        for c in corrs {
            let (x, y) = ((c.p.x - mx) * s2, (c.p.y - my) * s2);
            let q = (c.model - m3) * s3;
            let q = [q.x, q.y, q.z, 1.0];
            let mut r1 = nalgebra::SVector::<f64, 12>::zeros();
            let mut r2 = nalgebra::SVector::<f64, 12>::zeros();
            for k in 0..4 {
                r1[k] = q[k];
                r1[8 + k] = -x * q[k];
                r2[4 + k] = q[k];
                r2[8 + k] = -y * q[k];
            }
            ata += r1 * r1.transpose() + r2 * r2.transpose();
        }
        ata.symmetric_eigenvalues().min().max(0.0).sqrt()
    }

    #[test]
    fn residual_matches_dense_oracle() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
            let n = rng.random_range(6..=8);
            let cam = random_camera(&mut rng);
            let pts = random_points(&mut rng, n);
            let mut corrs = corrs_for(&cam, &pts);
            for c in &mut corrs {
                c.p.x += rng.random_range(-3.0..3.0);
                c.p.y += rng.random_range(-3.0..3.0);
            }
            let rep = estimate_projection(&corrs).unwrap();
            let oracle = oracle_residual(&corrs);
            assert!((rep.algebraic_residual - oracle).abs() < 1e-9, "{} vs {oracle}", rep.algebraic_residual);
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cam = random_camera(&mut rng);
        let corrs = corrs_for(&cam, &random_points(&mut rng, 15));
        assert_eq!(estimate_projection(&corrs), estimate_projection(&corrs));
    }

    #[test]
    fn refinement_does_not_hurt() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cam = random_camera(&mut rng);
        let mut corrs = corrs_for(&cam, &random_points(&mut rng, 20));
        for c in &mut corrs {
            c.p.x += rng.random_range(-1.0..1.0);
        }
        let plain = estimate_projection(&corrs).unwrap();
        let opts = FitOptions {
            refine: true,
            ..FitOptions::default()
        };
        let refined = estimate_projection_with(&corrs, &opts).unwrap();
        assert!(refined.rms_reprojection <= plain.rms_reprojection + 1e-12);
    }

    #[test]
    fn reference_bundle_correspondences() {
        let model = crate::synth::reference_model();
        let view = crate::bundle::ViewConfig::default();
        let bundle = crate::bundle::build_reference_bundle(&model, &view, crate::landmarks::SDM48).unwrap();
        let corrs = make_correspondences(&bundle.landmarks, &bundle).unwrap();
        assert_eq!(corrs.len(), 48);
        for (c, r) in corrs.iter().zip(&bundle.landmarks.points) {
            assert_eq!(c.p, r.point());
        }
        // the fitted camera reproduces the reference camera on the landmarks
        let rep = estimate_projection(&corrs).unwrap();
        assert!(rep.max_reprojection < 0.01, "{}", rep.max_reprojection);

        let mut moved = bundle.clone();
        moved.landmarks = bundle.landmarks.map(|_| Point2::new(0.0, 0.0));
        assert_eq!(
            make_correspondences(&bundle.landmarks, &moved),
            Err(PoseError::TooFewCorrespondences(0))
        );
    }

    #[test]
    fn pose_camera_is_recovered() {
        let model = crate::synth::reference_model();
        let view = crate::bundle::ViewConfig::default();
        let pose = crate::synth::Pose::yaw(30.0);
        let cam = crate::synth::pose_camera(&view, &pose);
        let pts: Vec<Point3> = model.landmarks.iter().map(|l| l.point()).collect();
        let rep = estimate_projection(&corrs_for(&cam, &pts)).unwrap();
        assert!(relative_error(&rep.camera, &cam, &pts[0]) < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn similarity_of_inputs_carries_through(
            seed in 0u64..1000,
            s in 0.2f64..5.0,
            tx in -300.0f64..300.0,
            ty in -300.0f64..300.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cam = random_camera(&mut rng);
            let pts = random_points(&mut rng, 12);
            let mut corrs = corrs_for(&cam, &pts);
            for c in &mut corrs {
                c.p.x += rng.random_range(-2.0..2.0);
                c.p.y += rng.random_range(-2.0..2.0);
            }
            let base = estimate_projection(&corrs).unwrap();
            let moved: Vec<Correspondence> = corrs
                .iter()
                .map(|c| Correspondence { p: Point2::new(s * c.p.x + tx, s * c.p.y + ty), model: c.model })
                .collect();
            let other = estimate_projection(&moved).unwrap();
            for p in &pts {
                let a = base.camera.project(p).unwrap();
                let b = other.camera.project(p).unwrap();
                prop_assert!((s * a.x + tx - b.x).abs() < 1e-9 * (1.0 + b.x.abs()));
                prop_assert!((s * a.y + ty - b.y).abs() < 1e-9 * (1.0 + b.y.abs()));
            }
        }
    }
}

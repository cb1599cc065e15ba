mod common;

use common::bundle_96;
use frontal::bundle::{ReferenceBundle, ViewConfig};
use frontal::camera::{rotation_x, rotation_y, Camera, Point3};
use frontal::frontalizer::*;
use frontal::imagecore::Point2;
use frontal::posefit::*;
use frontal::synth::{reference_model, render_view, Backdrop, Pose};
use nalgebra::{Matrix3, Matrix3x4, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn camera(yaw: f64, pitch: f64, focal: f64, t: Vector3<f64>) -> Camera {
    let a = Camera::default_intrinsic(250, 250, focal);
    Camera::from_parts(a, rotation_y(yaw) * rotation_x(pitch), t).unwrap()
}

fn cloud(seed: u64, n: usize) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Point3::new(rng.random_range(-80.0..80.0), rng.random_range(-100.0..100.0), rng.random_range(-40.0..40.0)))
        .collect()
}

fn unit(m: &Matrix3x4<f64>) -> Matrix3x4<f64> {
    let n = m / m.norm();
    if n[(2, 3)] < 0.0 {
        -n
    } else {
        n
    }
}

fn view96() -> ViewConfig {
    ViewConfig {
        width: 96,
        height: 96,
        ..ViewConfig::default()
    }
}

fn synthesize(bundle: &ReferenceBundle, yaw: f64, pitch: f64) -> (frontal::imagecore::Image, SampleCountMap, OcclusionMap) {
    let view = render_view(
        &reference_model(),
        &view96(),
        &Pose {
            yaw,
            pitch,
            ..Pose::default()
        },
        Backdrop::Flat(0.3),
    );
    let fit = estimate_projection(&make_correspondences(&view.landmarks, bundle).unwrap()).unwrap();
    let (raw, counts) = synthesize_raw(&view.image, &fit.camera, bundle);
    let occ = occlusion_map(&counts);
    (raw, counts, occ)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dlt_recovers_noiseless_cameras(seed in any::<u64>(), yaw in -0.8f64..0.8, pitch in -0.3f64..0.3, focal in 300.0f64..900.0, n in 6usize..40) {
        let cam = camera(yaw, pitch, focal, Vector3::new(5.0, -3.0, 700.0));
        let corrs: Vec<Correspondence> = cloud(seed, n)
            .into_iter()
            .map(|m| Correspondence { p: cam.project(&m).unwrap(), model: m })
            .collect();
        let fit = estimate_projection(&corrs).unwrap();
        prop_assert!((unit(fit.camera.matrix()) - unit(cam.matrix())).norm() < 1e-6);
        prop_assert!(fit.rms_reprojection < 1e-6);
        prop_assert_eq!(fit.condition_flag, ConditionFlag::WellConditioned);
    }

    #[test]
    fn dlt_commutes_with_image_similarities(seed in any::<u64>(), angle in -3.0f64..3.0, scale in 0.2f64..5.0, tx in -200.0f64..200.0, ty in -200.0f64..200.0) {
        let cam = camera(0.3, 0.1, 600.0, Vector3::new(0.0, 0.0, 800.0));
        let t = Matrix3::new(
            scale * angle.cos(), -scale * angle.sin(), tx,
            scale * angle.sin(), scale * angle.cos(), ty,
            0.0, 0.0, 1.0,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corrs: Vec<Correspondence> = cloud(seed, 30)
            .into_iter()
            .map(|m| {
                let p = cam.project(&m).unwrap();
                Correspondence { p: Point2::new(p.x + rng.random_range(-0.5..0.5), p.y + rng.random_range(-0.5..0.5)), model: m }
            })
            .collect();
        let moved: Vec<Correspondence> = corrs
            .iter()
            .map(|c| {
                let q = t * Vector3::new(c.p.x, c.p.y, 1.0);
                Correspondence { p: Point2::new(q.x, q.y), model: c.model }
            })
            .collect();
        let a = estimate_projection(&corrs).unwrap();
        let b = estimate_projection(&moved).unwrap();
        // normalization makes the estimate covariant with similarities
        prop_assert!((unit(b.camera.matrix()) - unit(&(t * a.camera.matrix()))).norm() < 1e-8);
        prop_assert!((b.rms_reprojection - scale * a.rms_reprojection).abs() < 1e-6 * (1.0 + b.rms_reprojection));
    }

    #[test]
    fn counts_are_conserved(yaw in -45.0f64..45.0, pitch in -10.0f64..10.0) {
        let bundle = bundle_96();
        let (_, counts, _) = synthesize(bundle, yaw, pitch);
        let hits = counts.query_hits();
        prop_assert_eq!(hits.values().sum::<u32>() as usize, counts.in_bounds_count());
        for i in 0..counts.counts.len() {
            match counts.target[i] {
                Some(t) => prop_assert_eq!(counts.counts[i], hits[&t]),
                None => prop_assert_eq!(counts.counts[i], 0),
            }
            if !bundle.valid[i] {
                prop_assert!(counts.target[i].is_none() && !counts.out_of_bounds[i]);
            }
        }
    }

    #[test]
    fn soft_symmetry_is_a_convex_blend(yaw in -45.0f64..45.0) {
        let bundle = bundle_96();
        let (raw, _, occ) = synthesize(bundle, yaw, 0.0);
        let sym = apply_soft_symmetry(&raw, &occ, bundle);
        for i in 0..bundle.valid.len() {
            let (x, y) = bundle.pixel(i);
            let j = bundle.symmetry[i] as usize;
            let (mx, my) = bundle.pixel(j);
            let alpha = BlendRule::Visibility.alpha(occ.scores[i], occ.scores[j]);
            prop_assert!((0.0..=1.0).contains(&alpha));
            if occ.scores[i] <= occ.scores[j] {
                prop_assert_eq!(alpha, 0.0);
            }
            let fixed = !bundle.valid[i] || bundle.eye_mask[i] || j == i;
            for c in 0..3 {
                let (a, b, s) = (raw.get(x, y, c), raw.get(mx, my, c), sym.get(x, y, c));
                if fixed {
                    prop_assert_eq!(s, a);
                } else {
                    prop_assert!(s >= a.min(b) - 1e-12 && s <= a.max(b) + 1e-12);
                }
            }
        }
        let off = apply_soft_symmetry_with(&raw, &occ, bundle, BlendRule::Off);
        prop_assert_eq!(off, raw);
    }
}

#[test]
fn symmetry_map_is_an_involution_on_valid_pairs() {
    let b = bundle_96();
    for i in 0..b.valid.len() {
        let j = b.symmetry[i] as usize;
        if j != i {
            assert!(b.valid[i] && b.valid[j]);
            assert_eq!(b.symmetry[j] as usize, i);
        }
    }
}

#[test]
fn collinear_model_points_are_rejected() {
    let corrs: Vec<Correspondence> = (0..10)
        .map(|k| Correspondence {
            p: Point2::new(k as f64, 2.0 * k as f64),
            model: Point3::new(k as f64, 0.0, 0.0),
        })
        .collect();
    assert_eq!(estimate_projection(&corrs), Err(PoseError::RankDeficient));
}

#[test]
fn planar_model_points_are_flagged_not_rejected() {
    let cam = camera(0.2, 0.1, 600.0, Vector3::new(0.0, 0.0, 800.0));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let corrs: Vec<Correspondence> = (0..20)
        .map(|_| {
            let m = Point3::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), 0.0);
            Correspondence {
                p: cam.project(&m).unwrap(),
                model: m,
            }
        })
        .collect();
    let fit = estimate_projection(&corrs).unwrap();
    assert_eq!(fit.condition_flag, ConditionFlag::NearDegenerate);
}

#[test]
fn five_correspondences_are_too_few() {
    let corrs: Vec<Correspondence> = cloud(1, 5)
        .into_iter()
        .map(|m| Correspondence {
            p: Point2::new(m.x, m.y),
            model: m,
        })
        .collect();
    assert_eq!(estimate_projection(&corrs), Err(PoseError::TooFewCorrespondences(5)));
}

#[test]
fn non_finite_landmarks_are_reported() {
    let mut corrs: Vec<Correspondence> = cloud(2, 8)
        .into_iter()
        .map(|m| Correspondence {
            p: Point2::new(m.x, m.y),
            model: m,
        })
        .collect();
    corrs[3].p.x = f64::NAN;
    assert_eq!(estimate_projection(&corrs), Err(PoseError::NonFinite(3)));
}

#[test]
fn refinement_does_not_increase_reprojection_error() {
    let cam = camera(0.4, -0.1, 500.0, Vector3::new(10.0, 0.0, 750.0));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let corrs: Vec<Correspondence> = cloud(8, 48)
        .into_iter()
        .map(|m| {
            let p = cam.project(&m).unwrap();
            Correspondence {
                p: Point2::new(p.x + rng.random_range(-1.0..1.0), p.y + rng.random_range(-1.0..1.0)),
                model: m,
            }
        })
        .collect();
    let plain = estimate_projection(&corrs).unwrap();
    let refined = estimate_projection_with(
        &corrs,
        &FitOptions {
            refine: true,
            ..FitOptions::default()
        },
    )
    .unwrap();
    assert!(refined.rms_reprojection <= plain.rms_reprojection + 1e-12);
}

#[test]
fn bundle_file_round_trip() {
    let b = bundle_96();
    let mut buf = Vec::new();
    b.write_to(&mut buf).unwrap();
    let back = ReferenceBundle::read_from(&mut buf.as_slice()).unwrap();
    assert_eq!(&back, b);
    let mut bad = buf.clone();
    bad.truncate(bad.len() / 2);
    assert!(ReferenceBundle::read_from(&mut bad.as_slice()).is_err());
}

mod common;

use common::*;
use frontal::descriptors::*;
use frontal::imagecore::{Image, Point2};
use proptest::prelude::*;

fn gray_image() -> impl Strategy<Value = Image> {
    (12usize..40, 12usize..40, any::<u64>()).prop_map(|(w, h, s)| random_gray(s, w, h))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lbp_matches_brute_force(img in gray_image()) {
        let fast = lbp_image(&img, &LbpParams::default()).unwrap();
        prop_assert_eq!(fast.codes, lbp_codes_brute(&img));
    }

    #[test]
    fn raw_lbp_codes_match(img in gray_image()) {
        for y in 0..img.height() {
            for x in 0..img.width() {
                prop_assert_eq!(lbp_code_at(&img, x, y, &LbpParams::default()), lbp_brute(&img, x, y));
            }
        }
    }

    #[test]
    fn tplbp_matches_brute_force(img in gray_image(), step in 1usize..4, radius in 1.5f64..3.0, tau in 0.0f64..0.2) {
        let p = TplbpParams { step, radius, tau, ..TplbpParams::default() };
        let fast = tplbp_image(&img, &p).unwrap();
        prop_assert_eq!(fast.codes, tplbp_brute(&img, &p));
    }

    #[test]
    fn fplbp_matches_brute_force(img in gray_image(), step in 0usize..3, tau in 0.0f64..0.2) {
        let p = FplbpParams { step, tau, ..FplbpParams::default() };
        let fast = fplbp_image(&img, &p).unwrap();
        prop_assert_eq!(fast.codes, fplbp_brute(&img, &p));
    }

    #[test]
    fn histograms_match_brute_force(img in gray_image(), bx in 1usize..6, by in 1usize..6) {
        let codes = tplbp_image(&img, &TplbpParams::default()).unwrap();
        let fast = block_histogram(&codes, bx, by, Variant::Tplbp).unwrap();
        let slow = histogram_brute(&codes.codes, codes.width, codes.height, bx, by, codes.bins);
        for (a, b) in fast.values.iter().zip(&slow) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        // each block with any defined code sums to one
        for j in 0..by {
            for i in 0..bx {
                let s: f64 = fast.block(i, j).iter().sum();
                prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lbp_ignores_monotone_remaps(img in gray_image(), gain in 0.1f64..1.0, gamma in 0.3f64..3.0) {
        let mapped = Image::from_vec(
            img.width(),
            img.height(),
            1,
            img.data().iter().map(|v| 0.05 + 0.9 * gain * v.powf(gamma)).collect(),
        )
        .unwrap();
        let a = lbp_image(&img, &LbpParams::default()).unwrap();
        let b = lbp_image(&mapped, &LbpParams::default()).unwrap();
        prop_assert_eq!(a.codes, b.codes);
    }

    #[test]
    fn descriptor_bytes_round_trip(img in gray_image(), sqrt in any::<bool>()) {
        let cfg = DescriptorConfig { blocks_x: 3, blocks_y: 2, ..DescriptorConfig::default() };
        let mut d = describe(&img, Variant::Lbp, &cfg).unwrap();
        if sqrt {
            d = hellinger(&d).unwrap();
        }
        let back = Descriptor::from_bytes(&d.to_bytes()).unwrap();
        prop_assert_eq!(back, d.quantized());
    }

    #[test]
    fn hellinger_distance_identity(a in gray_image(), seed in any::<u64>()) {
        // ‖√p − √q‖² = 2 − 2 Σ √(p q) per normalized block
        let cfg = DescriptorConfig { blocks_x: 1, blocks_y: 1, ..DescriptorConfig::default() };
        let b = random_gray(seed, a.width(), a.height());
        let (p, q) = (describe(&a, Variant::Lbp, &cfg).unwrap(), describe(&b, Variant::Lbp, &cfg).unwrap());
        let (sp, sq) = (hellinger(&p).unwrap(), hellinger(&q).unwrap());
        let l2: f64 = sp.values.iter().zip(&sq.values).map(|(x, y)| (x - y).powi(2)).sum();
        let bc: f64 = p.values.iter().zip(&q.values).map(|(x, y)| (x * y).sqrt()).sum();
        prop_assert!((l2 - (2.0 - 2.0 * bc)).abs() < 1e-9);
    }
}

#[test]
fn uniform_table_has_58_uniform_codes() {
    let uniform = (0..=255u8).filter(|&c| uniform_bin(c) != OTHER_BIN).count();
    assert_eq!(uniform, 58);
    for c in 0..=255u8 {
        assert_eq!(UNIFORM[c as usize] as u16, uniform_bin(c));
    }
}

#[test]
fn single_bright_pixel_codes() {
    // flat patch: every comparison ties and ties set the bit
    let flat = Image::filled(3, 3, 1, 0.5);
    assert_eq!(lbp_code_at(&flat, 1, 1, &LbpParams::default()), Some(0xFF));
    // bright center: nothing reaches it
    let mut img = Image::filled(3, 3, 1, 0.2);
    img.set(1, 1, 0, 0.9);
    assert_eq!(lbp_code_at(&img, 1, 1, &LbpParams::default()), Some(0));
    // one bright neighbor on +x sets bit 0 only
    let mut img = Image::filled(3, 3, 1, 0.2);
    img.set(1, 1, 0, 0.5);
    img.set(2, 1, 0, 0.9);
    assert_eq!(lbp_code_at(&img, 1, 1, &LbpParams::default()), Some(1));
}

#[test]
fn patch_descriptor_at_mouth_corner_matches_oracle() {
    let b = bundle_250();
    let center = b.landmarks.get("mouth_outer_0").unwrap();
    let spec = PatchSpec::new(center, PATCH_SIDE);
    let d = extract_patch_descriptor(&b.render, &spec, &LbpParams::default()).unwrap();
    let gray = b.render.to_grayscale();
    let (x0, y0, shifted) = spec.placement(gray.width(), gray.height());
    assert!(!shifted);
    let all = lbp_codes_brute(&gray);
    let mut patch = Vec::new();
    for y in y0..y0 + PATCH_SIDE {
        for x in x0..x0 + PATCH_SIDE {
            patch.push(all[y * gray.width() + x]);
        }
    }
    let expected = histogram_brute(&patch, PATCH_SIDE, PATCH_SIDE, 1, 1, UNIFORM_BINS);
    assert_eq!(d.values.len(), UNIFORM_BINS);
    for (a, e) in d.values.iter().zip(&expected) {
        assert!((a - e).abs() < 1e-12);
    }
    assert!((d.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn patches_near_the_border_are_shifted_inside() {
    let spec = PatchSpec::new(Point2::new(2.0, 240.0), PATCH_SIDE);
    let (x0, y0, shifted) = spec.placement(250, 250);
    assert!(shifted);
    assert_eq!((x0, y0), (0, 250 - PATCH_SIDE));
}

#[test]
fn descriptor_rejects_color_input() {
    let img = Image::filled(20, 20, 3, 0.5);
    assert!(matches!(lbp_image(&img, &LbpParams::default()), Err(DescriptorError::NotGray(3))));
}

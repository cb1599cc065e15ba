//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::OnceLock;

use frontal::bundle::{build_reference_bundle, ReferenceBundle, ViewConfig};
use frontal::descriptors::{FplbpParams, TplbpParams, EXCLUDED, OTHER_BIN};
use frontal::imagecore::Image;
use frontal::landmarks::SDM48;
use frontal::synth::{reference_model, SyntheticView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bundle_250() -> &'static ReferenceBundle {
    static B: OnceLock<ReferenceBundle> = OnceLock::new();
    B.get_or_init(|| build_reference_bundle(&reference_model(), &ViewConfig::default(), SDM48).unwrap())
}

pub fn bundle_96() -> &'static ReferenceBundle {
    static B: OnceLock<ReferenceBundle> = OnceLock::new();
    B.get_or_init(|| {
        let view = ViewConfig {
            width: 96,
            height: 96,
            ..ViewConfig::default()
        };
        build_reference_bundle(&reference_model(), &view, SDM48).unwrap()
    })
}

pub fn random_gray(seed: u64, w: usize, h: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // quantized levels make exact ties common
    Image::from_fn(w, h, 1, |_, _, _| (rng.random_range(0..16) as f64) / 15.0)
}

/// Number of 0/1 transitions around the 8-bit circle, counted bit by bit.
fn transitions(code: u8) -> u32 {
    (0..8).filter(|&k| ((code >> k) & 1) != ((code >> ((k + 1) % 8)) & 1)).count() as u32
}

/// Uniform-59 bin of a code by direct enumeration.
pub fn uniform_bin(code: u8) -> u16 {
    if transitions(code) > 2 {
        return OTHER_BIN;
    }
    (0..code).filter(|&c| transitions(c) <= 2).count() as u16
}

/// Radius-1 LBP code from the eight integer neighbors, bit `k` at angle
/// `2πk/8` counter-clockwise from +x with image y pointing down.
pub fn lbp_brute(img: &Image, x: usize, y: usize) -> Option<u8> {
    if x == 0 || y == 0 || x + 1 >= img.width() || y + 1 >= img.height() {
        return None;
    }
    let c = img.get(x, y, 0);
    let mut code = 0u8;
    for k in 0..8 {
        let a = std::f64::consts::TAU * k as f64 / 8.0;
        let dx = a.cos().round() as i64;
        let dy = -(a.sin().round() as i64);
        let v = img.get((x as i64 + dx) as usize, (y as i64 + dy) as usize, 0);
        if v >= c {
            code |= 1 << k;
        }
    }
    Some(code)
}

pub fn lbp_codes_brute(img: &Image) -> Vec<u16> {
    let mut out = Vec::with_capacity(img.width() * img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            out.push(lbp_brute(img, x, y).map_or(OTHER_BIN, uniform_bin));
        }
    }
    out
}

fn ring(n: usize, r: f64) -> Vec<(i64, i64)> {
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            ((r * a.cos()).round() as i64, (-r * a.sin()).round() as i64)
        })
        .collect()
}

/// L2 distance between the `k × k` patches centered at `a` and `b`, rows
/// outer and columns inner.
fn patch_dist(img: &Image, a: (i64, i64), b: (i64, i64), k: usize) -> f64 {
    let h = (k / 2) as i64;
    let mut s = 0.0;
    for v in -h..=h {
        for u in -h..=h {
            let d = img.get((a.0 + u) as usize, (a.1 + v) as usize, 0) - img.get((b.0 + u) as usize, (b.1 + v) as usize, 0);
            s += d * d;
        }
    }
    s.sqrt()
}

fn inside(img: &Image, x: i64, y: i64, reach: i64) -> bool {
    x - reach >= 0 && y - reach >= 0 && x + reach < img.width() as i64 && y + reach < img.height() as i64
}

pub fn tplbp_brute(img: &Image, p: &TplbpParams) -> Vec<u16> {
    let centers = ring(p.patches, p.radius);
    let reach = centers.iter().map(|c| c.0.abs().max(c.1.abs())).max().unwrap() + (p.patch_size / 2) as i64;
    let mut out = Vec::new();
    for y in 0..img.height() as i64 {
        for x in 0..img.width() as i64 {
            if !inside(img, x, y, reach) {
                out.push(EXCLUDED);
                continue;
            }
            let d: Vec<f64> = centers
                .iter()
                .map(|c| patch_dist(img, (x, y), (x + c.0, y + c.1), p.patch_size))
                .collect();
            let mut code = 0u16;
            for i in 0..p.patches {
                if d[i] - d[(i + p.step) % p.patches] >= p.tau {
                    code |= 1 << i;
                }
            }
            out.push(code);
        }
    }
    out
}

pub fn fplbp_brute(img: &Image, p: &FplbpParams) -> Vec<u16> {
    let inner = ring(p.patches, p.inner_radius);
    let outer = ring(p.patches, p.outer_radius);
    let reach = inner
        .iter()
        .chain(&outer)
        .map(|c| c.0.abs().max(c.1.abs()))
        .max()
        .unwrap()
        + (p.patch_size / 2) as i64;
    let half = p.patches / 2;
    let mut out = Vec::new();
    for y in 0..img.height() as i64 {
        for x in 0..img.width() as i64 {
            if !inside(img, x, y, reach) {
                out.push(EXCLUDED);
                continue;
            }
            let pair = |i: usize| {
                let a = inner[i];
                let b = outer[(i + p.step) % p.patches];
                patch_dist(img, (x + a.0, y + a.1), (x + b.0, y + b.1), p.patch_size)
            };
            let mut code = 0u16;
            for i in 0..half {
                if pair(i) - pair(i + half) >= p.tau {
                    code |= 1 << i;
                }
            }
            out.push(code);
        }
    }
    out
}

/// Block histogram by scanning every pixel and testing membership in the
/// block span `[b·n/B, (b+1)·n/B)`.
pub fn histogram_brute(codes: &[u16], w: usize, h: usize, bx: usize, by: usize, bins: usize) -> Vec<f64> {
    let mut out = vec![0.0; bx * by * bins];
    for j in 0..by {
        for i in 0..bx {
            let mut hist = vec![0.0; bins];
            let mut n = 0.0;
            for y in 0..h {
                for x in 0..w {
                    let in_block = (i * w / bx..(i + 1) * w / bx).contains(&x) && (j * h / by..(j + 1) * h / by).contains(&y);
                    let c = codes[y * w + x];
                    if in_block && c != EXCLUDED {
                        hist[c as usize] += 1.0;
                        n += 1.0;
                    }
                }
            }
            for (k, v) in hist.iter().enumerate() {
                out[(j * bx + i) * bins + k] = if n > 0.0 { v / n } else { 0.0 };
            }
        }
    }
    out
}

/// Pastes a 40×40 dark textured square centered at `(cx, cy)`.
pub fn paste_occluder(img: &mut Image, cx: f64, cy: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = (cx - 20.0).round() as i64;
    let y0 = (cy - 20.0).round() as i64;
    for y in y0..y0 + 40 {
        for x in x0..x0 + 40 {
            if x < 0 || y < 0 || x >= img.width() as i64 || y >= img.height() as i64 {
                continue;
            }
            let v = if rng.random_bool(0.5) { 0.05 } else { 0.3 };
            img.set_pixel(x as usize, y as usize, &[0.9 * v, 0.8 * v, 0.7 * v]);
        }
    }
}

/// Center of the visible cheek of a yawed view: between the mouth corner
/// and nose side that face the camera.
pub fn near_cheek(view: &SyntheticView, yaw: f64) -> (f64, f64) {
    let (mouth, nose) = if yaw < 0.0 {
        ("mouth_outer_0", "nose_base_0")
    } else {
        ("mouth_outer_6", "nose_base_4")
    };
    let a = view.landmarks.get(mouth).unwrap();
    let b = view.landmarks.get(nose).unwrap();
    (0.5 * (a.x + b.x), 0.5 * (a.y + b.y))
}

/// Prints one acceptance line and returns whether it passed.
pub fn report(id: usize, name: &str, pass: bool, detail: &str) -> bool {
    println!("criterion {id:>2} [{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

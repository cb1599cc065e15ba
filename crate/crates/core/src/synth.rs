//! Procedural reference head and synthetic query renders.
//!
//! The head is a bilaterally symmetric height field `Z = depth(X, Y)` over an
//! elliptical face region, textured with a painted face (skin, brows, eyes,
//! nose, lips) plus per-identity marks. Identities vary the feature layout,
//! the surface and the texture; every identity shares the same landmark
//! schema, so renders come with exact ground-truth landmarks and cameras.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bundle::ViewConfig;
use crate::camera::{rotation_x, rotation_y, Camera, Point3};
use crate::imagecore::{Image, Point2};
use crate::landmarks::{sdm48_names, LandmarkSet, SDM48};
use crate::mesh::{Mesh3D, NamedPoint3, ReferenceModel};
use crate::raster::rasterize;

/// Vertical extent of the face region in model units.
pub const FACE_HEIGHT: f64 = 195.0;

/// Vertical semi-axis of the face ellipse.
const SEMI_Y: f64 = 105.0;
/// Squared elliptical radius of the face boundary.
const RIM: f64 = 0.86;
/// Horizontal half-range covered by the texture; wider than any face.
const TEX_HALF_X: f64 = 88.0;
const GRID_STEP: f64 = 2.0;
const TEXTURE_SIZE: usize = 256;

/// Point the head turns about; it lies inside the head, behind the face.
pub const ROTATION_CENTER: [f64; 3] = [0.0, 0.0, 30.0];

/// Positions of the painted facial features in model units.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub eye_x: f64,
    pub eye_y: f64,
    pub eye_half_width: f64,
    pub brow_y: f64,
    pub nose_tip_y: f64,
    pub nose_base_y: f64,
    pub nose_half_width: f64,
    pub mouth_y: f64,
    pub mouth_half_width: f64,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            eye_x: 32.0,
            eye_y: 20.0,
            eye_half_width: 15.0,
            brow_y: 38.0,
            nose_tip_y: -16.0,
            nose_base_y: -24.0,
            nose_half_width: 14.0,
            mouth_y: -50.0,
            mouth_half_width: 25.0,
        }
    }
}

/// Surface parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub semi_x: f64,
    pub depth: f64,
    pub nose: f64,
    pub socket: f64,
    pub lips: f64,
    pub cheeks: f64,
}

impl Default for Shape {
    fn default() -> Self {
        Self {
            semi_x: 80.0,
            depth: 75.0,
            nose: 24.0,
            socket: 8.0,
            lips: 5.0,
            cheeks: 4.0,
        }
    }
}

/// A dark or colored disc painted on the skin.
#[derive(Debug, Clone, PartialEq)]
pub struct Mark {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    /// Multiplicative change of the skin color at the center.
    pub tint: [f64; 3],
}

/// Texture parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Appearance {
    pub skin: [f64; 3],
    pub brow: [f64; 3],
    pub brow_thickness: f64,
    pub iris: [f64; 3],
    pub lip: [f64; 3],
    pub hair: [f64; 3],
    pub hairline: f64,
    /// Amplitude of fine skin noise.
    pub grain: f64,
    /// Darkening of the lower face by fine stubble noise (0 = none).
    pub stubble: f64,
    pub marks: Vec<Mark>,
    pub noise_seed: u64,
}

impl Default for Appearance {
    fn default() -> Self {
        Self {
            skin: [0.80, 0.62, 0.52],
            brow: [0.25, 0.17, 0.12],
            brow_thickness: 4.5,
            iris: [0.30, 0.42, 0.55],
            lip: [0.70, 0.36, 0.36],
            hair: [0.22, 0.15, 0.10],
            hairline: 74.0,
            grain: 0.02,
            stubble: 0.0,
            marks: Vec::new(),
            noise_seed: 7,
        }
    }
}

/// One synthetic person.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Identity {
    pub layout: Layout,
    pub shape: Shape,
    pub look: Appearance,
}

impl Identity {
    /// The reference person: default layout, shape and texture.
    pub fn reference() -> Self {
        Self::default()
    }

    /// Random jitter of the reference person, fully determined by `seed`.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1d);
        let j = |rng: &mut ChaCha8Rng, v: f64, spread: f64| v + rng.random_range(-spread..=spread);
        let d = Layout::default();
        let layout = Layout {
            eye_x: j(&mut rng, d.eye_x, 2.5),
            eye_y: j(&mut rng, d.eye_y, 2.0),
            eye_half_width: j(&mut rng, d.eye_half_width, 1.5),
            brow_y: j(&mut rng, d.brow_y, 2.5),
            nose_tip_y: j(&mut rng, d.nose_tip_y, 2.5),
            nose_base_y: j(&mut rng, d.nose_base_y, 1.5),
            nose_half_width: j(&mut rng, d.nose_half_width, 2.0),
            mouth_y: j(&mut rng, d.mouth_y, 3.0),
            mouth_half_width: j(&mut rng, d.mouth_half_width, 3.0),
        };
        let s = Shape::default();
        let shape = Shape {
            semi_x: j(&mut rng, s.semi_x, 4.0),
            depth: j(&mut rng, s.depth, 8.0),
            nose: j(&mut rng, s.nose, 5.0),
            socket: j(&mut rng, s.socket, 2.5),
            lips: j(&mut rng, s.lips, 1.5),
            cheeks: j(&mut rng, s.cheeks, 2.0),
        };
        let a = Appearance::default();
        let shade = rng.random_range(0.75..1.1);
        let tint = |rng: &mut ChaCha8Rng, c: [f64; 3], spread: f64| {
            c.map(|v| (v + rng.random_range(-spread..=spread)).clamp(0.02, 0.98))
        };
        let skin = tint(&mut rng, a.skin.map(|v| v * shade), 0.05);
        let brow = tint(&mut rng, a.brow, 0.08);
        let iris = tint(&mut rng, a.iris, 0.15);
        let lip = tint(&mut rng, a.lip, 0.08);
        let hair = tint(&mut rng, a.hair, 0.1);
        let n_marks = rng.random_range(6..14);
        let marks = (0..n_marks)
            .map(|_| {
                let big = rng.random_bool(0.3);
                let k = if big {
                    rng.random_range(0.75..1.25)
                } else {
                    rng.random_range(0.35..0.75)
                };
                Mark {
                    x: rng.random_range(-62.0..62.0),
                    y: rng.random_range(-80.0..60.0),
                    radius: if big {
                        rng.random_range(6.0..14.0)
                    } else {
                        rng.random_range(1.5..4.0)
                    },
                    tint: [k, k * rng.random_range(0.9..1.05), k * rng.random_range(0.9..1.05)],
                }
            })
            .collect();
        let look = Appearance {
            skin,
            brow,
            brow_thickness: j(&mut rng, a.brow_thickness, 1.8),
            iris,
            lip,
            hair,
            hairline: j(&mut rng, a.hairline, 8.0),
            grain: rng.random_range(0.01..0.04),
            stubble: 0.0,
            marks,
            noise_seed: rng.random(),
        };
        Self { layout, shape, look }
    }

    /// Surface depth at `(X, Y)`; more negative is closer to the camera.
    pub fn depth(&self, x: f64, y: f64) -> f64 {
        let s = &self.shape;
        let l = &self.layout;
        let r2 = (x / s.semi_x).powi(2) + (y / SEMI_Y).powi(2);
        let mut z = -s.depth * (1.0 - r2).max(0.0).sqrt();

        // nose ridge from between the eyes to the tip, then a quick falloff
        let top = l.eye_y + 6.0;
        let t = ((top - y) / (top - l.nose_tip_y)).clamp(0.0, 1.0);
        let profile = if y > top {
            0.25 * gauss1((y - top) / 6.0)
        } else if y >= l.nose_tip_y {
            0.25 + 0.75 * t.powf(1.5)
        } else {
            gauss1((l.nose_tip_y - y) / 4.5)
        };
        let sigma = 4.0 + 6.0 * t;
        z -= s.nose * profile * gauss1(x / sigma);
        for sx in [-1.0, 1.0] {
            let ax = sx * 0.6 * l.nose_half_width;
            z -= 0.25 * s.nose * gauss2(x - ax, y - (l.nose_base_y + 3.0), 4.0, 4.0);
            // sockets and eyeballs
            let ex = sx * l.eye_x;
            z += s.socket * gauss2(x - ex, y - l.eye_y, 13.0, 9.0);
            z -= 3.0 * gauss2(x - ex, y - l.eye_y, l.eye_half_width * 0.6, 4.5);
            z -= 3.0 * gauss2(x - ex, y - l.brow_y, 18.0, 5.0);
            z -= s.cheeks * gauss2(x - sx * 45.0, y + 8.0, 14.0, 14.0);
            z += 1.5 * gauss2(x - sx * l.mouth_half_width, y - l.mouth_y, 3.0, 3.0);
        }
        z -= s.lips * gauss2(x, y - l.mouth_y, 0.8 * l.mouth_half_width, 7.0);
        z -= 6.0 * gauss2(x, y - (l.mouth_y - 35.0), 16.0, 10.0);
        z
    }

    fn inside(&self, x: f64, y: f64) -> bool {
        (x / self.shape.semi_x).powi(2) + (y / SEMI_Y).powi(2) <= RIM
    }

    /// Model-space `(X, Y)` of every `sdm48` landmark, in schema order.
    pub fn landmark_xy(&self) -> Vec<(f64, f64)> {
        let l = &self.layout;
        let (ex, ey, hw) = (l.eye_x, l.eye_y, l.eye_half_width);
        let hh = hw / 3.0;
        let mut pts = Vec::with_capacity(48);
        let brow = |i: usize| {
            let t = i as f64 / 4.0;
            let x = -ex + hw * (-1.3 + 2.48 * t);
            let y = l.brow_y + 2.5 * (1.0 - ((t - 0.45) / 0.55).powi(2));
            (x, y)
        };
        for i in 0..5 {
            pts.push(brow(i));
        }
        for i in 0..5 {
            let (x, y) = brow(4 - i);
            pts.push((-x, y));
        }
        let top = ey + 4.0;
        let bottom = l.nose_tip_y + 6.0;
        for j in 0..3 {
            pts.push((0.0, top + (bottom - top) * j as f64 / 2.0));
        }
        let nw = l.nose_half_width;
        for (k, dy) in [0.0, -2.0, -3.0, -2.0, 0.0].into_iter().enumerate() {
            pts.push((nw * (-1.0 + 0.5 * k as f64), l.nose_base_y + dy));
        }
        let eye = [
            (-hw, 0.0),
            (-0.4 * hw, hh),
            (0.4 * hw, hh),
            (hw, 0.0),
            (0.4 * hw, -0.9 * hh),
            (-0.4 * hw, -0.9 * hh),
        ];
        for (dx, dy) in eye {
            pts.push((-ex + dx, ey + dy));
        }
        for (dx, dy) in eye {
            pts.push((ex + dx, ey + dy));
        }
        let (mw, my) = (l.mouth_half_width, l.mouth_y);
        pts.push((-mw, my));
        for (fx, dy) in [(-0.64, 5.0), (-0.28, 7.0), (0.0, 6.0), (0.28, 7.0), (0.64, 5.0)] {
            pts.push((fx * mw, my + dy));
        }
        pts.push((mw, my));
        for (fx, dy) in [(0.64, 6.0), (0.28, 9.0), (0.0, 9.5), (-0.28, 9.0), (-0.64, 6.0)] {
            pts.push((fx * mw, my - dy));
        }
        for (fx, dy) in [(-0.76, 0.0), (-0.28, 1.5), (0.28, 1.5), (0.76, 0.0), (0.28, -2.0), (-0.28, -2.0)] {
            pts.push((fx * mw, my + dy));
        }
        pts
    }

    /// Landmarks on the analytic surface.
    pub fn landmarks3d(&self) -> Vec<NamedPoint3> {
        self.landmark_xy()
            .into_iter()
            .zip(sdm48_names())
            .map(|((x, y), name)| NamedPoint3 {
                name: name.to_string(),
                x,
                y,
                z: self.depth(x, y),
            })
            .collect()
    }

    /// Triangulated, textured surface.
    pub fn mesh(&self) -> Mesh3D {
        let half_cols = (self.shape.semi_x / GRID_STEP).ceil() as i64;
        let half_rows = (SEMI_Y / GRID_STEP).ceil() as i64;
        let cols = (2 * half_cols + 1) as usize;
        let rows = (2 * half_rows + 1) as usize;
        let mut index = vec![usize::MAX; cols * rows];
        let mut vertices = Vec::new();
        let mut uv = Vec::new();
        for r in 0..rows {
            // row 0 is the top of the face
            let y = (half_rows - r as i64) as f64 * GRID_STEP;
            for c in 0..cols {
                let x = (c as i64 - half_cols) as f64 * GRID_STEP;
                if !self.inside(x, y) {
                    continue;
                }
                index[r * cols + c] = vertices.len();
                vertices.push(Point3::new(x, y, self.depth(x, y)));
                uv.push(model_to_uv(x, y));
            }
        }
        let mut triangles = Vec::new();
        for r in 0..rows - 1 {
            for c in 0..cols - 1 {
                let a = index[r * cols + c];
                let b = index[r * cols + c + 1];
                let d = index[(r + 1) * cols + c];
                let e = index[(r + 1) * cols + c + 1];
                if [a, b, d, e].contains(&usize::MAX) {
                    continue;
                }
                // mirror the diagonal across X = 0 so the mesh is symmetric
                if (c as i64) < half_cols {
                    triangles.push([a, d, e]);
                    triangles.push([a, e, b]);
                } else {
                    triangles.push([a, d, b]);
                    triangles.push([b, d, e]);
                }
            }
        }
        Mesh3D {
            vertices,
            triangles,
            uv,
            texture: Some(self.texture(TEXTURE_SIZE)),
        }
    }

    /// Model with analytic landmarks.
    pub fn model(&self) -> ReferenceModel {
        ReferenceModel {
            mesh: self.mesh(),
            landmarks: self.landmarks3d(),
        }
    }

    /// Painted texture, `size × size`, indexed by [`model_to_uv`].
    pub fn texture(&self, size: usize) -> Image {
        let painter = Painter::new(self);
        Image::from_fn(size, size, 3, |i, j, c| {
            let u = (i as f64 + 0.5) / size as f64;
            let v = (j as f64 + 0.5) / size as f64;
            let (x, y) = uv_to_model(u, v);
            painter.color(x, y)[c]
        })
    }
}

/// Texture coordinates of a model point; `v = 0` is the top of the texture.
pub fn model_to_uv(x: f64, y: f64) -> [f64; 2] {
    [
        ((x + TEX_HALF_X) / (2.0 * TEX_HALF_X)).clamp(0.0, 1.0),
        ((SEMI_Y - y) / (2.0 * SEMI_Y)).clamp(0.0, 1.0),
    ]
}

fn uv_to_model(u: f64, v: f64) -> (f64, f64) {
    (u * 2.0 * TEX_HALF_X - TEX_HALF_X, SEMI_Y - v * 2.0 * SEMI_Y)
}

#[inline]
fn gauss1(t: f64) -> f64 {
    (-0.5 * t * t).exp()
}

#[inline]
fn gauss2(dx: f64, dy: f64, sx: f64, sy: f64) -> f64 {
    gauss1(dx / sx) * gauss1(dy / sy)
}

/// 1 inside, 0 outside, linear ramp of width `soft` across the boundary
/// `d = 0` (negative `d` is inside).
#[inline]
fn coverage(d: f64, soft: f64) -> f64 {
    (0.5 - d / soft).clamp(0.0, 1.0)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x1f1f_1f1f) ^ (iy as u64).rotate_left(32)));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Smooth value noise in `[-1, 1]` with features of size `scale`.
pub fn value_noise(seed: u64, x: f64, y: f64, scale: f64) -> f64 {
    let (fx, fy) = (x / scale, y / scale);
    let (ix, iy) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - ix, fy - iy);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (s(tx), s(ty));
    let (ix, iy) = (ix as i64, iy as i64);
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

struct Painter<'a> {
    id: &'a Identity,
    landmarks: Vec<(f64, f64)>,
}

impl<'a> Painter<'a> {
    fn new(id: &'a Identity) -> Self {
        Self {
            id,
            landmarks: id.landmark_xy(),
        }
    }

    fn lm(&self, i: usize) -> (f64, f64) {
        self.landmarks[i]
    }

    fn color(&self, x: f64, y: f64) -> [f64; 3] {
        let id = self.id;
        let l = &id.layout;
        let a = &id.look;
        let seed = a.noise_seed;

        // skin with low-frequency mottling and fine grain
        let mottle = 0.05 * value_noise(seed, x, y, 22.0);
        let grain = a.grain * value_noise(seed ^ 1, x, y, 1.3);
        let mut col = a.skin.map(|v| v * (1.0 + mottle + grain));

        for m in &a.marks {
            let d = ((x - m.x).powi(2) + (y - m.y).powi(2)).sqrt();
            let w = coverage(d - m.radius, 1.5) * (1.0 - 0.3 * (d / m.radius).min(1.0));
            for (c, t) in col.iter_mut().zip(m.tint) {
                *c *= 1.0 + (t - 1.0) * w;
            }
        }

        if a.stubble > 0.0 {
            let below_nose = coverage(y - (l.nose_base_y - 4.0), 4.0);
            let on_lips = self.lip_weight(x, y);
            let jaw = coverage((x / (0.9 * id.shape.semi_x)).abs() - 1.0, 0.1);
            let hf = 0.5 + 0.5 * value_noise(seed ^ 2, x, y, 0.9);
            let dark = a.stubble * below_nose * (1.0 - on_lips) * jaw * (0.4 + 0.6 * hf);
            col = col.map(|v| v * (1.0 - dark));
        }

        // hair above a curved hairline
        let hairline = a.hairline + 10.0 * (x / 60.0).powi(2);
        let hair_w = coverage(hairline - y, 2.0);
        if hair_w > 0.0 {
            let strand = 0.5 + 0.5 * value_noise(seed ^ 3, x * 4.0, y * 0.5, 1.0);
            col = mix(col, a.hair.map(|v| v * (0.7 + 0.6 * strand)), hair_w);
        }

        // brows: thick polylines through the brow landmarks
        for side in 0..2 {
            let pts: Vec<_> = (0..5).map(|i| self.lm(side * 5 + i)).collect();
            let d = polyline_distance(&pts, x, y);
            let t = coverage(d - a.brow_thickness / 2.0, 1.5);
            if t > 0.0 {
                let hf = 0.8 + 0.4 * value_noise(seed ^ 4, x, y, 1.2);
                col = mix(col, a.brow.map(|v| v * hf), t);
            }
        }

        // nostrils
        for sx in [-1.0, 1.0] {
            let cx = sx * 0.45 * l.nose_half_width;
            let cy = l.nose_base_y + 1.0;
            let d = (((x - cx) / 3.0).powi(2) + ((y - cy) / 1.8).powi(2)).sqrt();
            let t = coverage((d - 1.0) * 2.0, 1.0);
            col = mix(col, [0.25, 0.12, 0.1], 0.85 * t);
        }

        // lips and mouth line
        let lip = self.lip_weight(x, y);
        if lip > 0.0 {
            col = mix(col, a.lip, lip);
        }
        let mw = l.mouth_half_width;
        if x.abs() < 0.8 * mw {
            let t = coverage((y - l.mouth_y).abs() - 0.7, 1.0) * coverage(x.abs() - 0.76 * mw, 3.0);
            col = mix(col, [0.3, 0.1, 0.1], t);
        }

        // eyes
        for sx in [-1.0, 1.0] {
            let cx = sx * l.eye_x;
            let cy = l.eye_y;
            let ax = l.eye_half_width;
            let ay = ax / 3.0;
            let r = (((x - cx) / ax).powi(2) + ((y - cy) / ay).powi(2)).sqrt();
            // lash line just outside the opening
            let lash = coverage((r - 1.12).abs() * ay - 0.6, 1.0) * coverage(cy - 0.5 - y, 1.0).max(0.4);
            col = mix(col, [0.12, 0.08, 0.07], 0.8 * lash);
            let open = coverage((r - 1.0) * ay, 1.0);
            if open > 0.0 {
                let di = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                let iris_r = 0.33 * ax;
                let mut eye = [0.92, 0.9, 0.87];
                eye = mix(eye, a.iris, coverage(di - iris_r, 1.0));
                eye = mix(eye, [0.05, 0.04, 0.04], coverage(di - 0.4 * iris_r, 0.8));
                col = mix(col, eye, open);
            }
        }

        let shade = self.shading(x, y);
        col.map(|v| (v * shade).clamp(0.0, 1.0))
    }

    fn lip_weight(&self, x: f64, y: f64) -> f64 {
        let l = &self.id.layout;
        let mw = l.mouth_half_width;
        let t = 1.0 - (x / mw).powi(2);
        if t <= 0.0 {
            return 0.0;
        }
        let upper = l.mouth_y + 6.5 * t.powf(0.7);
        let lower = l.mouth_y - 9.5 * t.powf(0.8);
        coverage(y - upper, 1.2) * coverage(lower - y, 1.2)
    }

    /// Baked diffuse lighting from the surface slope.
    fn shading(&self, x: f64, y: f64) -> f64 {
        let h = 0.5;
        let id = self.id;
        let dzdx = (id.depth(x + h, y) - id.depth(x - h, y)) / (2.0 * h);
        let dzdy = (id.depth(x, y + h) - id.depth(x, y - h)) / (2.0 * h);
        let n = Vector3::new(dzdx, dzdy, -1.0).normalize();
        let light = Vector3::new(0.2, 0.3, -1.0).normalize();
        0.55 + 0.45 * n.dot(&light).max(0.0)
    }
}

fn polyline_distance(pts: &[(f64, f64)], x: f64, y: f64) -> f64 {
    pts.windows(2)
        .map(|w| {
            let (ax, ay) = w[0];
            let (bx, by) = w[1];
            let (dx, dy) = (bx - ax, by - ay);
            let t = (((x - ax) * dx + (y - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
            ((x - ax - t * dx).powi(2) + (y - ay - t * dy).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// The reference model. Its 3D landmarks are the surface points seen
/// through the pixel centers nearest to the analytic landmarks in the
/// default frontal view, so they project exactly onto pixel centers there.
pub fn reference_model() -> ReferenceModel {
    let id = Identity::reference();
    let mut model = id.model();
    let view = ViewConfig::default();
    let camera = view.camera();
    let r = rasterize(&model.mesh, &camera, view.width, view.height, 0.0);
    for lm in &mut model.landmarks {
        let q = camera.project(&lm.point()).expect("landmark in front of camera");
        let (px, py) = (q.x.round() as usize, q.y.round() as usize);
        let i = py * view.width + px;
        assert!(r.valid[i], "reference landmark {} is off the surface", lm.name);
        let p = r.coord[i];
        // match the 32-bit storage of bundle coordinates
        lm.x = p.x as f32 as f64;
        lm.y = p.y as f32 as f64;
        lm.z = p.z as f32 as f64;
    }
    model
}

/// Head pose and framing of a synthetic photo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// Rotation about the vertical axis in degrees; positive turns the face
    /// toward the image's left side.
    pub yaw: f64,
    pub pitch: f64,
    /// Multiplies the reference focal length.
    pub scale: f64,
    /// Principal point offset in pixels.
    pub shift: (f64, f64),
}

impl Pose {
    pub fn yaw(deg: f64) -> Self {
        Self {
            yaw: deg,
            ..Self::default()
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self {
            yaw: 0.0,
            pitch: 0.0,
            scale: 1.0,
            shift: (0.0, 0.0),
        }
    }
}

/// Camera seeing the model at `pose` from the reference distance.
pub fn pose_camera(view: &ViewConfig, pose: &Pose) -> Camera {
    let mut a = Camera::default_intrinsic(view.width, view.height, view.focal() * pose.scale);
    a[(0, 2)] += pose.shift.0;
    a[(1, 2)] += pose.shift.1;
    let rot = rotation_y(pose.yaw.to_radians()) * rotation_x(pose.pitch.to_radians());
    let c = Vector3::from(ROTATION_CENTER);
    let t = c - rot * c + Vector3::new(0.0, 0.0, view.distance);
    Camera::from_parts(a, rot, t).expect("pose camera is full rank")
}

/// A rendered synthetic photo with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticView {
    pub image: Image,
    pub camera: Camera,
    /// Projections of the model's 3D landmarks.
    pub landmarks: LandmarkSet,
    /// Pixels covered by the face.
    pub face: Vec<bool>,
}

/// Background fill for uncovered pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backdrop {
    Flat(f64),
    /// Smooth random clutter.
    Noise(u64),
}

/// Renders `model` at `pose` in the geometry of `view`.
pub fn render_view(model: &ReferenceModel, view: &ViewConfig, pose: &Pose, backdrop: Backdrop) -> SyntheticView {
    let camera = pose_camera(view, pose);
    let r = rasterize(&model.mesh, &camera, view.width, view.height, 0.5);
    let mut image = r.image;
    if let Backdrop::Noise(seed) = backdrop {
        let tone = [
            0.35 + 0.3 * lattice(seed, 0, 1).abs(),
            0.35 + 0.3 * lattice(seed, 0, 2).abs(),
            0.35 + 0.3 * lattice(seed, 0, 3).abs(),
        ];
        for y in 0..view.height {
            for x in 0..view.width {
                if r.valid[y * view.width + x] {
                    continue;
                }
                let (fx, fy) = (x as f64, y as f64);
                let big = value_noise(seed, fx, fy, 40.0);
                let fine = value_noise(seed ^ 9, fx, fy, 3.0);
                let px: Vec<f64> = (0..3)
                    .map(|c| (tone[c] + 0.2 * big + 0.05 * fine).clamp(0.0, 1.0))
                    .collect();
                image.set_pixel(x, y, &px);
            }
        }
    } else if let Backdrop::Flat(v) = backdrop {
        for (i, &valid) in r.valid.iter().enumerate() {
            if !valid {
                image.set_pixel(i % view.width, i / view.width, &[v; 3]);
            }
        }
    }
    let pts: Vec<Point2> = model
        .landmarks
        .iter()
        .map(|l| camera.project(&l.point()).expect("landmarks in front of camera"))
        .collect();
    let landmarks = LandmarkSet::from_points(SDM48, &pts).expect("schema-sized landmark list");
    SyntheticView {
        image,
        camera,
        landmarks,
        face: r.valid,
    }
}

//! Z-buffered triangle rasterization.
//!
//! Coverage uses edge functions evaluated at pixel centers with the top-left
//! fill rule. Attributes (3D position, texture coordinates) are interpolated
//! with perspective-correct barycentric weights, so a stored position is the
//! exact intersection of the pixel-center ray with the triangle plane.

use crate::camera::{Camera, Point3};
use crate::imagecore::{Image, Point2};
use crate::mesh::Mesh3D;

/// Everything the rasterizer knows about one rendered view.
#[derive(Debug, Clone)]
pub struct Rendering {
    pub width: usize,
    pub height: usize,
    /// RGB color; uncovered pixels hold the background value.
    pub image: Image,
    /// Surface point per pixel, meaningful only where `valid` is set.
    pub coord: Vec<Point3>,
    pub valid: Vec<bool>,
    /// Camera-space depth of the stored surface point (`+inf` if uncovered).
    pub depth: Vec<f64>,
    /// Index of the frontmost triangle, `usize::MAX` if uncovered.
    pub triangle: Vec<usize>,
}

impl Rendering {
    pub fn coverage(&self) -> f64 {
        self.valid.iter().filter(|&&v| v).count() as f64 / self.valid.len().max(1) as f64
    }
}

struct ScreenVertex {
    p: Point2,
    w: f64,
}

#[inline]
fn edge(a: Point2, b: Point2, p: Point2) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Top or left edge for triangles with positive signed area (y-down).
#[inline]
fn is_top_left(a: Point2, b: Point2) -> bool {
    (a.y == b.y && b.x > a.x) || b.y < a.y
}

#[inline]
fn covers(e: f64, top_left: bool) -> bool {
    e > 0.0 || (e == 0.0 && top_left)
}

/// Renders `mesh` through `camera` into a `width × height` view.
///
/// Triangles with any vertex at non-positive depth are skipped. Depth ties
/// keep the earlier triangle, so output is deterministic.
pub fn rasterize(mesh: &Mesh3D, camera: &Camera, width: usize, height: usize, background: f64) -> Rendering {
    let n = width * height;
    let mut out = Rendering {
        width,
        height,
        image: Image::filled(width, height, 3, background),
        coord: vec![Point3::zeros(); n],
        valid: vec![false; n],
        depth: vec![f64::INFINITY; n],
        triangle: vec![usize::MAX; n],
    };
    let mut uv = vec![[0.0f64; 2]; n];

    let projected: Vec<Option<ScreenVertex>> = mesh
        .vertices
        .iter()
        .map(|v| {
            let w = camera.depth(v);
            if w <= 0.0 {
                return None;
            }
            camera.project(v).ok().map(|p| ScreenVertex { p, w })
        })
        .collect();

    for (t, tri) in mesh.triangles.iter().enumerate() {
        let (Some(a), Some(b), Some(c)) = (
            projected[tri[0]].as_ref(),
            projected[tri[1]].as_ref(),
            projected[tri[2]].as_ref(),
        ) else {
            continue;
        };
        let area = edge(a.p, b.p, c.p);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        // orient so the signed area is positive
        let (ids, verts) = if area > 0.0 {
            ([tri[0], tri[1], tri[2]], [a, b, c])
        } else {
            ([tri[0], tri[2], tri[1]], [a, c, b])
        };
        let area = area.abs();
        let [v0, v1, v2] = verts;
        let tl = [
            is_top_left(v1.p, v2.p),
            is_top_left(v2.p, v0.p),
            is_top_left(v0.p, v1.p),
        ];

        let min_x = v0.p.x.min(v1.p.x).min(v2.p.x).ceil().max(0.0);
        let max_x = v0.p.x.max(v1.p.x).max(v2.p.x).floor().min(width as f64 - 1.0);
        let min_y = v0.p.y.min(v1.p.y).min(v2.p.y).ceil().max(0.0);
        let max_y = v0.p.y.max(v1.p.y).max(v2.p.y).floor().min(height as f64 - 1.0);
        if min_x > max_x || min_y > max_y {
            continue;
        }

        let inv_w = [1.0 / v0.w, 1.0 / v1.w, 1.0 / v2.w];
        for y in min_y as usize..=max_y as usize {
            for x in min_x as usize..=max_x as usize {
                let p = Point2::new(x as f64, y as f64);
                let e0 = edge(v1.p, v2.p, p);
                let e1 = edge(v2.p, v0.p, p);
                let e2 = edge(v0.p, v1.p, p);
                if !(covers(e0, tl[0]) && covers(e1, tl[1]) && covers(e2, tl[2])) {
                    continue;
                }
                let l = [e0 / area, e1 / area, e2 / area];
                let denom = l[0] * inv_w[0] + l[1] * inv_w[1] + l[2] * inv_w[2];
                let depth = 1.0 / denom;
                let i = y * width + x;
                if depth >= out.depth[i] {
                    continue;
                }
                let mu = [
                    l[0] * inv_w[0] * depth,
                    l[1] * inv_w[1] * depth,
                    l[2] * inv_w[2] * depth,
                ];
                let pa = &mesh.vertices[ids[0]];
                let pb = &mesh.vertices[ids[1]];
                let pc = &mesh.vertices[ids[2]];
                out.coord[i] = pa * mu[0] + pb * mu[1] + pc * mu[2];
                let (ua, ub, uc) = (mesh.uv[ids[0]], mesh.uv[ids[1]], mesh.uv[ids[2]]);
                uv[i] = [
                    ua[0] * mu[0] + ub[0] * mu[1] + uc[0] * mu[2],
                    ua[1] * mu[0] + ub[1] * mu[1] + uc[1] * mu[2],
                ];
                out.depth[i] = depth;
                out.valid[i] = true;
                out.triangle[i] = t;
            }
        }
    }

    shade(mesh, &mut out, &uv);
    out
}

fn shade(mesh: &Mesh3D, out: &mut Rendering, uv: &[[f64; 2]]) {
    let normals = mesh.texture.is_none().then(|| vertex_normals(mesh));
    for y in 0..out.height {
        for x in 0..out.width {
            let i = y * out.width + x;
            if !out.valid[i] {
                continue;
            }
            match (&mesh.texture, &normals) {
                (Some(tex), _) => {
                    let p = Point2::new(
                        (uv[i][0] * tex.width() as f64 - 0.5).clamp(0.0, tex.width() as f64 - 1.0),
                        (uv[i][1] * tex.height() as f64 - 0.5).clamp(0.0, tex.height() as f64 - 1.0),
                    );
                    let s = tex.sample_bilinear(p).expect("clamped into texture");
                    if tex.channels() == 3 {
                        out.image.set_pixel(x, y, s.as_slice());
                    } else {
                        out.image.set_pixel(x, y, &[s.value(); 3]);
                    }
                }
                (None, Some(normals)) => {
                    let tri = mesh.triangles[out.triangle[i]];
                    let nz = tri.iter().map(|&v| normals[v].z.abs()).sum::<f64>() / 3.0;
                    let g = 0.25 + 0.65 * nz;
                    out.image.set_pixel(x, y, &[g, g, g]);
                }
                (None, None) => unreachable!(),
            }
        }
    }
}

fn vertex_normals(mesh: &Mesh3D) -> Vec<Point3> {
    let mut acc = vec![Point3::zeros(); mesh.vertices.len()];
    for tri in &mesh.triangles {
        let [a, b, c] = tri.map(|i| mesh.vertices[i]);
        let n = (b - a).cross(&(c - a));
        for &i in tri {
            acc[i] += n;
        }
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                n
            }
        })
        .collect()
}

//! Textured triangle meshes and the on-disk model formats.
//!
//! Geometry is read from a small OBJ subset (`v`, `vt`, `f` with
//! `position/uv` indices), textures from PNG, and the named 3D landmarks
//! from a JSON array of `{name, x, y, z}` objects.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Point3;
use crate::imagecore::{Image, ImageError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("triangle {triangle} references vertex {index} but only {count} exist")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        count: usize,
    },
    #[error("mesh has no triangles")]
    Empty,
    #[error("uv coordinate {0} is not finite or outside [0, 1]")]
    BadUv(usize),
    #[error("texture could not be loaded: {0}")]
    Texture(#[source] ImageError),
    #[error("landmark file has {got} entries, schema expects {expected}")]
    LandmarkCount { expected: usize, got: usize },
    #[error("landmark '{got}' at position {index} does not match schema name '{expected}'")]
    LandmarkName {
        index: usize,
        expected: String,
        got: String,
    },
    #[error("landmark file is malformed: {0}")]
    LandmarkJson(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A triangle mesh with per-vertex texture coordinates.
#[derive(Debug, Clone)]
pub struct Mesh3D {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[usize; 3]>,
    /// Per-vertex `(u, v)` with `v = 0` at the top row of the texture.
    pub uv: Vec<[f64; 2]>,
    /// `None` falls back to flat gray shading when rendering.
    pub texture: Option<Image>,
}

impl Mesh3D {
    /// Checks index ranges, the non-empty rule, and uv bounds.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.triangles.is_empty() {
            return Err(ModelError::Empty);
        }
        let count = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i >= count) {
                return Err(ModelError::IndexOutOfRange {
                    triangle: t,
                    index,
                    count,
                });
            }
        }
        if self.uv.len() != count {
            return Err(ModelError::Parse {
                path: "<mesh>".into(),
                line: 0,
                reason: format!("{} uv entries for {} vertices", self.uv.len(), count),
            });
        }
        if let Some(i) = self
            .uv
            .iter()
            .position(|uv| uv.iter().any(|c| !c.is_finite() || *c < 0.0 || *c > 1.0))
        {
            return Err(ModelError::BadUv(i));
        }
        Ok(())
    }

    /// Serializes geometry to the OBJ subset understood by [`Mesh3D::from_obj_str`].
    pub fn to_obj_string(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.9} {:.9} {:.9}", v.x, v.y, v.z);
        }
        for uv in &self.uv {
            // OBJ stores v with the origin at the bottom of the texture
            let _ = writeln!(s, "vt {:.9} {:.9}", uv[0], 1.0 - uv[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(
                s,
                "f {}/{} {}/{} {}/{}",
                t[0] + 1,
                t[0] + 1,
                t[1] + 1,
                t[1] + 1,
                t[2] + 1,
                t[2] + 1
            );
        }
        s
    }

    /// Parses OBJ text. Faces with more than three corners are fanned.
    /// When a corner's uv index differs from its position index, the vertex
    /// is duplicated so uvs stay per-vertex.
    pub fn from_obj_str(text: &str, origin: &str) -> Result<Mesh3D, ModelError> {
        let mut positions: Vec<Point3> = Vec::new();
        let mut tex: Vec<[f64; 2]> = Vec::new();
        let mut corners: Vec<Vec<(usize, Option<usize>)>> = Vec::new();
        let mut face_lines = Vec::new();
        let err = |line: usize, reason: String| ModelError::Parse {
            path: origin.to_string(),
            line,
            reason,
        };
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            let mut parts = line.split_whitespace();
            let Some(tag) = parts.next() else { continue };
            match tag {
                "v" => {
                    let xyz: Vec<f64> = parts
                        .take(3)
                        .map(|p| p.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| err(line_no, e.to_string()))?;
                    if xyz.len() != 3 || xyz.iter().any(|v| !v.is_finite()) {
                        return Err(err(line_no, "vertex needs three finite numbers".into()));
                    }
                    positions.push(Point3::new(xyz[0], xyz[1], xyz[2]));
                }
                "vt" => {
                    let uv: Vec<f64> = parts
                        .take(2)
                        .map(|p| p.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| err(line_no, e.to_string()))?;
                    if uv.len() != 2 {
                        return Err(err(line_no, "texture coordinate needs two numbers".into()));
                    }
                    tex.push([uv[0], 1.0 - uv[1]]);
                }
                "f" => {
                    let mut face = Vec::new();
                    for corner in parts {
                        let mut idx = corner.split('/');
                        let p = parse_index(idx.next(), positions.len())
                            .map_err(|r| err(line_no, r))?
                            .ok_or_else(|| err(line_no, "face corner without position".into()))?;
                        let t = parse_index(idx.next(), tex.len()).map_err(|r| err(line_no, r))?;
                        face.push((p, t));
                    }
                    if face.len() < 3 {
                        return Err(err(line_no, "face needs at least three corners".into()));
                    }
                    corners.push(face);
                    face_lines.push(line_no);
                }
                _ => {}
            }
        }

        let mut mesh = Mesh3D {
            vertices: Vec::new(),
            triangles: Vec::new(),
            uv: Vec::new(),
            texture: None,
        };
        let mut remap: HashMap<(usize, Option<usize>), usize> = HashMap::new();
        for face in &corners {
            let mut ids = Vec::with_capacity(face.len());
            for &(p, t) in face {
                let key = (p, t);
                let id = match remap.get(&key) {
                    Some(&id) => id,
                    None => {
                        let id = mesh.vertices.len();
                        // out-of-range positions are kept as a sentinel so
                        // validation reports the offending triangle
                        mesh.vertices
                            .push(positions.get(p).copied().unwrap_or(Point3::new(f64::NAN, 0.0, 0.0)));
                        let uv = match t {
                            Some(t) => tex.get(t).copied().unwrap_or([f64::NAN, f64::NAN]),
                            None => [0.0, 0.0],
                        };
                        mesh.uv.push(uv);
                        remap.insert(key, id);
                        id
                    }
                };
                ids.push((id, p));
            }
            for k in 1..ids.len() - 1 {
                let tri = [ids[0], ids[k], ids[k + 1]];
                if let Some(&(_, p)) = tri.iter().find(|(_, p)| *p >= positions.len()) {
                    return Err(ModelError::IndexOutOfRange {
                        triangle: mesh.triangles.len(),
                        index: p,
                        count: positions.len(),
                    });
                }
                mesh.triangles.push([tri[0].0, tri[1].0, tri[2].0]);
            }
        }
        mesh.validate()?;
        Ok(mesh)
    }
}

/// OBJ indices are 1-based; negative values count back from the end.
fn parse_index(token: Option<&str>, len: usize) -> Result<Option<usize>, String> {
    let Some(tok) = token.filter(|t| !t.is_empty()) else {
        return Ok(None);
    };
    let v: i64 = tok.parse().map_err(|_| format!("bad index '{tok}'"))?;
    if v > 0 {
        Ok(Some(v as usize - 1))
    } else if v < 0 && (-v) as usize <= len {
        Ok(Some((len as i64 + v) as usize))
    } else {
        Err(format!("index {v} is invalid"))
    }
}

/// A named point on (or near) the model surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPoint3 {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl NamedPoint3 {
    pub fn point(&self) -> Point3 {
        Point3::new(self.x, self.y, self.z)
    }
}

/// A loaded reference model: mesh plus its landmarks in schema order.
#[derive(Debug, Clone)]
pub struct ReferenceModel {
    pub mesh: Mesh3D,
    pub landmarks: Vec<NamedPoint3>,
}

fn read_text(path: &Path) -> Result<String, ModelError> {
    fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads geometry, texture and 3D landmarks. A missing texture file is an
/// error; pass `None` to render with flat shading instead.
pub fn load_model(
    geometry_path: impl AsRef<Path>,
    texture_path: Option<&Path>,
    landmarks3d_path: impl AsRef<Path>,
    schema_names: &[&str],
) -> Result<ReferenceModel, ModelError> {
    let geometry_path = geometry_path.as_ref();
    let text = read_text(geometry_path)?;
    let mut mesh = Mesh3D::from_obj_str(&text, &geometry_path.display().to_string())?;
    if let Some(tp) = texture_path {
        mesh.texture = Some(Image::load(tp).map_err(ModelError::Texture)?);
    }
    let landmarks = parse_landmarks3d(&read_text(landmarks3d_path.as_ref())?, schema_names)?;
    Ok(ReferenceModel { mesh, landmarks })
}

/// Parses and validates the 3D landmark JSON against an ordered name list.
pub fn parse_landmarks3d(text: &str, schema_names: &[&str]) -> Result<Vec<NamedPoint3>, ModelError> {
    let points: Vec<NamedPoint3> =
        serde_json::from_str(text).map_err(|e| ModelError::LandmarkJson(e.to_string()))?;
    if points.len() != schema_names.len() {
        return Err(ModelError::LandmarkCount {
            expected: schema_names.len(),
            got: points.len(),
        });
    }
    for (i, (p, expected)) in points.iter().zip(schema_names).enumerate() {
        if p.name != *expected {
            return Err(ModelError::LandmarkName {
                index: i,
                expected: expected.to_string(),
                got: p.name.clone(),
            });
        }
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(ModelError::LandmarkJson(format!("landmark '{}' is not finite", p.name)));
        }
    }
    Ok(points)
}

/// Writes mesh geometry, texture and landmarks next to each other.
pub fn save_model(
    model: &ReferenceModel,
    geometry_path: impl AsRef<Path>,
    texture_path: impl AsRef<Path>,
    landmarks3d_path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    let io = |path: &Path| {
        let shown = path.display().to_string();
        move |source| ModelError::Io { path: shown, source }
    };
    let g = geometry_path.as_ref();
    fs::write(g, model.mesh.to_obj_string()).map_err(io(g))?;
    if let Some(tex) = &model.mesh.texture {
        tex.save(texture_path.as_ref()).map_err(ModelError::Texture)?;
    }
    let l = landmarks3d_path.as_ref();
    let json = serde_json::to_string_pretty(&model.landmarks)
        .map_err(|e| ModelError::LandmarkJson(e.to_string()))?;
    fs::write(l, json).map_err(io(l))?;
    Ok(())
}

//! The reference bundle: a frontal render of the 3D model together with
//! the surface point behind every pixel, the symmetry map, the eye mask and
//! the reference landmarks.
//!
//! Building a bundle is a three-step affair:
//!
//! 1. [`rasterize_reference`] renders the mesh through the frontal camera
//!    and keeps, for each covered pixel `q'`, the 3D point `P` with
//!    `q' ∼ C_M·P`.
//! 2. [`build_symmetry_map`] mirrors pixels across the vertical line that
//!    the model's symmetry plane projects to.
//! 3. [`build_eye_mask`] marks two ellipses around the eye centers which
//!    soft symmetry must leave alone.
//!
//! [`build_reference_bundle`] runs all of them and snaps the projected model
//! landmarks to pixel centers.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Matrix3x4;
use thiserror::Error;

use crate::camera::{Camera, CameraError, Point3};
use crate::imagecore::{Image, Point2};
use crate::landmarks::{eye_corner_names, eye_names, LandmarkError, LandmarkSet, NamedPoint2};
use crate::mesh::{Mesh3D, ReferenceModel};
use crate::raster::rasterize;

pub const BUNDLE_MAGIC: &[u8; 4] = b"FFB1";
pub const BUNDLE_VERSION: u32 = 1;

/// Gray level used for pixels the model does not cover.
pub const BACKGROUND: f64 = 0.5;

/// Eye ellipse semi-axes as fractions of half the corner-to-corner distance.
pub const EYE_SEMI_AXES: (f64, f64) = (0.60, 0.40);

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bundle dimensions must be positive")]
    EmptyView,
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("bundle file has the wrong magic or version: {0}")]
    VersionMismatch(String),
    #[error("bundle file is truncated")]
    Truncated,
    #[error("bundle file is inconsistent: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Landmarks(#[from] LandmarkError),
    #[error("landmark '{0}' projects outside the reference view")]
    LandmarkOutside(String),
    #[error("i/o error: {0}")]
    Io(io::Error),
}

impl From<io::Error> for BundleError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            BundleError::Truncated
        } else {
            BundleError::Io(e)
        }
    }
}

/// Settings of the frontal reference view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewConfig {
    pub width: usize,
    pub height: usize,
    /// Distance from the camera center to the model origin, in model units.
    pub distance: f64,
    /// Vertical extent of the face in model units.
    pub face_height: f64,
    /// Fraction of the image height the face should span.
    pub fill: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            width: 250,
            height: 250,
            distance: 800.0,
            face_height: crate::synth::FACE_HEIGHT,
            fill: 0.8,
        }
    }
}

impl ViewConfig {
    pub fn focal(&self) -> f64 {
        self.fill * self.height as f64 * self.distance / self.face_height
    }

    /// Frontal camera `C_M = A·[I | (0, 0, distance)]`.
    pub fn camera(&self) -> Camera {
        Camera::frontal(self.width, self.height, self.focal(), self.distance)
    }
}

/// Frontal reference view and everything stored per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBundle {
    pub width: usize,
    pub height: usize,
    /// Frontal render `I_R` (RGB).
    pub render: Image,
    /// Surface point per pixel, stored at 32-bit precision.
    pub coord: Vec<[f32; 3]>,
    pub valid: Vec<bool>,
    pub camera: Camera,
    /// Reference landmarks `p'_i`, snapped to pixel centers.
    pub landmarks: LandmarkSet,
    /// Flat index of the mirror pixel; identity where the mirror is not valid.
    pub symmetry: Vec<u32>,
    /// Twice the column of the symmetry axis, so mirrors are `axis2 - x`.
    pub axis2: i64,
    pub eye_mask: Vec<bool>,
}

impl ReferenceBundle {
    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn point(&self, i: usize) -> Point3 {
        let c = self.coord[i];
        Point3::new(c[0] as f64, c[1] as f64, c[2] as f64)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Pixel coordinates of a flat index.
    #[inline]
    pub fn pixel(&self, i: usize) -> (usize, usize) {
        (i % self.width, i / self.width)
    }

    /// Nearest valid pixel to `p` within `radius` pixels, scanning outward.
    pub fn nearest_valid(&self, p: Point2, radius: f64) -> Option<usize> {
        let cx = p.x.round();
        let cy = p.y.round();
        let r = radius.ceil() as i64;
        let mut best: Option<(f64, usize)> = None;
        for dy in -r..=r {
            for dx in -r..=r {
                let x = cx as i64 + dx;
                let y = cy as i64 + dy;
                if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
                    continue;
                }
                let i = self.index(x as usize, y as usize);
                if !self.valid[i] {
                    continue;
                }
                let d = (x as f64 - p.x).hypot(y as f64 - p.y);
                if d > radius {
                    continue;
                }
                if best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                    best = Some((d, i));
                }
            }
        }
        best.map(|(_, i)| i)
    }

    /// Writes the versioned binary form (magic `FFB1`, little-endian).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BundleError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ReferenceBundle, BundleError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), BundleError> {
        w.write_all(BUNDLE_MAGIC)?;
        w.write_u32::<LittleEndian>(BUNDLE_VERSION)?;
        w.write_u32::<LittleEndian>(self.width as u32)?;
        w.write_u32::<LittleEndian>(self.height as u32)?;
        w.write_u32::<LittleEndian>(self.render.channels() as u32)?;
        w.write_i64::<LittleEndian>(self.axis2)?;
        // row-major 3x4
        let m = self.camera.matrix();
        for r in 0..3 {
            for c in 0..4 {
                w.write_f64::<LittleEndian>(m[(r, c)])?;
            }
        }
        for &v in self.render.data() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        for c in &self.coord {
            for &v in c {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        write_bitmap(w, &self.valid)?;
        write_bitmap(w, &self.eye_mask)?;
        for &s in &self.symmetry {
            let (x, y) = self.pixel(s as usize);
            w.write_u16::<LittleEndian>(x as u16)?;
            w.write_u16::<LittleEndian>(y as u16)?;
        }
        write_str(w, &self.landmarks.schema)?;
        w.write_u32::<LittleEndian>(self.landmarks.points.len() as u32)?;
        for p in &self.landmarks.points {
            write_str(w, &p.name)?;
            w.write_f64::<LittleEndian>(p.x)?;
            w.write_f64::<LittleEndian>(p.y)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<ReferenceBundle, BundleError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BUNDLE_MAGIC {
            return Err(BundleError::VersionMismatch(format!("magic {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != BUNDLE_VERSION {
            return Err(BundleError::VersionMismatch(format!("version {version}")));
        }
        let width = r.read_u32::<LittleEndian>()? as usize;
        let height = r.read_u32::<LittleEndian>()? as usize;
        let channels = r.read_u32::<LittleEndian>()? as usize;
        if width == 0 || height == 0 || width > u16::MAX as usize || height > u16::MAX as usize {
            return Err(BundleError::Corrupt(format!("dimensions {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(BundleError::Corrupt(format!("{channels} channels")));
        }
        let axis2 = r.read_i64::<LittleEndian>()?;
        let mut m = Matrix3x4::zeros();
        for row in 0..3 {
            for col in 0..4 {
                m[(row, col)] = r.read_f64::<LittleEndian>()?;
            }
        }
        let camera = Camera::from_matrix(m)?;
        let n = width * height;
        let mut data = vec![0.0f64; n * channels];
        for v in data.iter_mut() {
            *v = r.read_f32::<LittleEndian>()? as f64;
        }
        let render = Image::from_vec(width, height, channels, data)
            .map_err(|e| BundleError::Corrupt(e.to_string()))?;
        let mut coord = vec![[0f32; 3]; n];
        for c in coord.iter_mut() {
            for v in c.iter_mut() {
                *v = r.read_f32::<LittleEndian>()?;
            }
        }
        let valid = read_bitmap(r, n)?;
        let eye_mask = read_bitmap(r, n)?;
        let mut symmetry = Vec::with_capacity(n);
        for _ in 0..n {
            let x = r.read_u16::<LittleEndian>()? as usize;
            let y = r.read_u16::<LittleEndian>()? as usize;
            if x >= width || y >= height {
                return Err(BundleError::Corrupt("symmetry target outside view".into()));
            }
            symmetry.push((y * width + x) as u32);
        }
        let schema = read_str(r)?;
        let count = r.read_u32::<LittleEndian>()? as usize;
        if count > 10_000 {
            return Err(BundleError::Corrupt(format!("{count} landmarks")));
        }
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let name = read_str(r)?;
            let x = r.read_f64::<LittleEndian>()?;
            let y = r.read_f64::<LittleEndian>()?;
            points.push(NamedPoint2 { name, x, y });
        }
        let landmarks = LandmarkSet { schema, points };
        landmarks.validate()?;
        Ok(ReferenceBundle {
            width,
            height,
            render,
            coord,
            valid,
            camera,
            landmarks,
            symmetry,
            axis2,
            eye_mask,
        })
    }
}

fn write_bitmap<W: Write>(w: &mut W, bits: &[bool]) -> io::Result<()> {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    w.write_all(&bytes)
}

fn read_bitmap<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<bool>> {
    let mut bytes = vec![0u8; n.div_ceil(8)];
    r.read_exact(&mut bytes)?;
    Ok((0..n).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> Result<String, BundleError> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > 4096 {
        return Err(BundleError::Corrupt(format!("string of length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| BundleError::Corrupt(e.to_string()))
}

/// Renders the frontal reference view and records the surface point behind
/// every covered pixel. Symmetry is the identity map, the eye mask is empty
/// and no landmarks are attached yet.
pub fn rasterize_reference(
    mesh: &Mesh3D,
    camera: &Camera,
    width: usize,
    height: usize,
) -> Result<ReferenceBundle, BundleError> {
    if width == 0 || height == 0 {
        return Err(BundleError::EmptyView);
    }
    let camera = camera.clone();
    let r = rasterize(mesh, &camera, width, height, BACKGROUND);
    let coord = r
        .coord
        .iter()
        .zip(&r.valid)
        .map(|(p, &v)| if v { [p.x as f32, p.y as f32, p.z as f32] } else { [0.0; 3] })
        .collect();
    // keep the render at the precision it is stored with on disk
    let render = Image::from_fn(width, height, 3, |x, y, c| r.image.get(x, y, c) as f32 as f64);
    let origin = camera.project(&Point3::zeros())?;
    Ok(ReferenceBundle {
        width,
        height,
        render,
        coord,
        valid: r.valid,
        symmetry: (0..(width * height) as u32).collect(),
        axis2: (2.0 * origin.x).round() as i64,
        eye_mask: vec![false; width * height],
        camera,
        landmarks: LandmarkSet {
            schema: String::new(),
            points: Vec::new(),
        },
    })
}

/// Fills the symmetry map: each valid pixel maps to the pixel mirrored
/// across column `axis2 / 2` when that pixel is valid, otherwise to itself.
pub fn build_symmetry_map(mut bundle: ReferenceBundle) -> ReferenceBundle {
    let (w, h) = (bundle.width, bundle.height);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mx = bundle.axis2 - x as i64;
            bundle.symmetry[i] = if bundle.valid[i] && mx >= 0 && mx < w as i64 {
                let j = y * w + mx as usize;
                if bundle.valid[j] {
                    j as u32
                } else {
                    i as u32
                }
            } else {
                i as u32
            };
        }
    }
    bundle
}

/// Projects the model landmarks and snaps each to its nearest pixel center.
pub fn attach_landmarks(
    mut bundle: ReferenceBundle,
    schema: &str,
    points: &[Point3],
) -> Result<ReferenceBundle, BundleError> {
    let names = crate::landmarks::schema_names(schema)?;
    let mut projected = Vec::with_capacity(points.len());
    for (p, name) in points.iter().zip(names) {
        let q = bundle.camera.project(p)?;
        let snapped = Point2::new(q.x.round(), q.y.round());
        if snapped.x < 0.0
            || snapped.y < 0.0
            || snapped.x >= bundle.width as f64
            || snapped.y >= bundle.height as f64
        {
            return Err(BundleError::LandmarkOutside(name.to_string()));
        }
        projected.push(snapped);
    }
    bundle.landmarks = LandmarkSet::from_points(schema, &projected)?;
    Ok(bundle)
}

/// Ellipse `(center, semi_x, semi_y)` around one eye of a landmark set.
pub fn eye_ellipse(landmarks: &LandmarkSet, left: bool) -> Option<(Point2, f64, f64)> {
    let center = landmarks.mean_of(&eye_names(left))?;
    let (outer, inner) = eye_corner_names(left);
    let half = landmarks.get(outer)?.distance(&landmarks.get(inner)?) / 2.0;
    Some((center, EYE_SEMI_AXES.0 * half, EYE_SEMI_AXES.1 * half))
}

fn inside_ellipse(p: Point2, (c, ax, ay): (Point2, f64, f64)) -> bool {
    let dx = (p.x - c.x) / ax;
    let dy = (p.y - c.y) / ay;
    dx * dx + dy * dy <= 1.0
}

/// Marks valid pixels inside either eye ellipse, closed under the symmetry
/// map so the mask is left-right symmetric.
pub fn build_eye_mask(mut bundle: ReferenceBundle) -> ReferenceBundle {
    let ellipses: Vec<_> = [true, false]
        .into_iter()
        .filter_map(|left| eye_ellipse(&bundle.landmarks, left))
        .filter(|(_, ax, ay)| *ax > 0.0 && *ay > 0.0)
        .collect();
    let inside = |i: usize, b: &ReferenceBundle| {
        let (x, y) = b.pixel(i);
        let p = Point2::new(x as f64, y as f64);
        ellipses.iter().any(|e| inside_ellipse(p, *e))
    };
    let n = bundle.width * bundle.height;
    let mut mask = vec![false; n];
    for (i, m) in mask.iter_mut().enumerate() {
        if !bundle.valid[i] {
            continue;
        }
        let j = bundle.symmetry[i] as usize;
        *m = inside(i, &bundle) || (j != i && inside(j, &bundle));
    }
    bundle.eye_mask = mask;
    bundle
}

/// Full bundle construction from a loaded reference model.
pub fn build_reference_bundle(
    model: &ReferenceModel,
    view: &ViewConfig,
    schema: &str,
) -> Result<ReferenceBundle, BundleError> {
    let camera = view.camera();
    let bundle = rasterize_reference(&model.mesh, &camera, view.width, view.height)?;
    let bundle = build_symmetry_map(bundle);
    let points: Vec<Point3> = model.landmarks.iter().map(|l| l.point()).collect();
    let bundle = attach_landmarks(bundle, schema, &points)?;
    Ok(build_eye_mask(bundle))
}

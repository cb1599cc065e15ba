//! Pinhole projection matrices.
//!
//! Model coordinates follow the reference-head convention: +X right, +Y up,
//! and the face looks toward −Z. Image coordinates have +y pointing down, so
//! the default intrinsic matrix carries a negative vertical focal length and
//! the frontal rotation is the identity.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use thiserror::Error;

use crate::imagecore::Point2;

pub type Point3 = Vector3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("point projects to infinity (homogeneous depth {0:e})")]
    PointAtInfinity(f64),
    #[error("projection matrix has rank < 3")]
    Degenerate,
}

/// Intrinsic/extrinsic factors of a projection matrix, `C ∝ A·[R | t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Upper-triangular intrinsics normalized so `A[2][2] == 1`, with a
    /// positive horizontal focal length.
    pub intrinsic: Matrix3<f64>,
    /// Proper rotation (det +1).
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// 3×4 projection matrix with an optional cached decomposition.
///
/// Equality compares the matrices only; the cached factors are derived data.
#[derive(Debug, Clone)]
pub struct Camera {
    matrix: Matrix3x4<f64>,
    decomposition: Option<Decomposition>,
}

impl PartialEq for Camera {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

/// Relative tolerance for the rank test on the left 3×3 block.
const RANK_TOL: f64 = 1e-12;

impl Camera {
    /// Wraps a raw projection matrix after checking it has rank 3.
    pub fn from_matrix(matrix: Matrix3x4<f64>) -> Result<Self, CameraError> {
        if !matrix.iter().all(|v| v.is_finite()) {
            return Err(CameraError::Degenerate);
        }
        let sv = matrix.svd(false, false).singular_values;
        let max = sv.max();
        if max <= 0.0 || sv.min() <= RANK_TOL * max {
            return Err(CameraError::Degenerate);
        }
        Ok(Self {
            matrix,
            decomposition: None,
        })
    }

    /// `C = A·[R | t]`. The decomposition is stored alongside the product.
    pub fn from_parts(
        intrinsic: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, CameraError> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        rt.set_column(3, &translation);
        let mut cam = Self::from_matrix(intrinsic * rt)?;
        cam.decomposition = Some(Decomposition {
            intrinsic: intrinsic / intrinsic[(2, 2)],
            rotation,
            translation,
        });
        Ok(cam)
    }

    /// Frontal reference camera looking down +Z at a model placed `distance`
    /// units in front of it, principal point at the image center.
    pub fn frontal(width: usize, height: usize, focal: f64, distance: f64) -> Self {
        let a = Self::default_intrinsic(width, height, focal);
        Self::from_parts(a, Matrix3::identity(), Vector3::new(0.0, 0.0, distance))
            .expect("frontal camera is full rank")
    }

    /// `[[f, 0, cx], [0, -f, cy], [0, 0, 1]]` with `(cx, cy)` the image center
    /// in pixel-center coordinates.
    pub fn default_intrinsic(width: usize, height: usize, focal: f64) -> Matrix3<f64> {
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        Matrix3::new(focal, 0.0, cx, 0.0, -focal, cy, 0.0, 0.0, 1.0)
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.matrix
    }

    pub fn decomposition(&self) -> Option<&Decomposition> {
        self.decomposition.as_ref()
    }

    /// Homogeneous depth of `p`, the third row of `C·[p; 1]`.
    #[inline]
    pub fn depth(&self, p: &Point3) -> f64 {
        let h = self.matrix * Vector4::new(p.x, p.y, p.z, 1.0);
        h.z
    }

    /// Dehomogenized image point `p ∼ C·[P; 1]`.
    #[inline]
    pub fn project(&self, p: &Point3) -> Result<Point2, CameraError> {
        let h = self.matrix * Vector4::new(p.x, p.y, p.z, 1.0);
        let scale = self.matrix.abs().max() * (1.0 + p.abs().max());
        if h.z.abs() <= f64::EPSILON * scale {
            return Err(CameraError::PointAtInfinity(h.z));
        }
        Ok(Point2::new(h.x / h.z, h.y / h.z))
    }

    /// Same matrix scaled to unit Frobenius norm with the sign chosen so
    /// `reference` has positive depth. Useful to compare cameras up to scale.
    pub fn normalized(&self, reference: &Point3) -> Matrix3x4<f64> {
        let mut m = self.matrix / self.matrix.norm();
        let h = m * Vector4::new(reference.x, reference.y, reference.z, 1.0);
        if h.z < 0.0 {
            m = -m;
        }
        m
    }

    /// RQ decomposition of the left 3×3 block into intrinsics and rotation.
    ///
    /// The intrinsic matrix gets a positive `A[0][0]` and `A[2][2] == 1`; if
    /// the block has negative determinant the sign is absorbed by `A[1][1]`
    /// so the rotation stays proper (this is the case for the default
    /// y-down intrinsics).
    pub fn decompose(&self) -> Decomposition {
        if let Some(d) = &self.decomposition {
            return d.clone();
        }
        let m: Matrix3<f64> = self.matrix.fixed_view::<3, 3>(0, 0).into_owned();
        let (mut k, mut r) = rq3(&m);
        // make the diagonal of K positive
        for i in 0..3 {
            if k[(i, i)] < 0.0 {
                k.set_column(i, &(-k.column(i)));
                r.set_row(i, &(-r.row(i)));
            }
        }
        if r.determinant() < 0.0 {
            k.set_column(1, &(-k.column(1)));
            r.set_row(1, &(-r.row(1)));
        }
        let scale = k[(2, 2)];
        let c4 = self.matrix.column(3).into_owned();
        let t = k.try_inverse().expect("rank checked at construction") * c4;
        Decomposition {
            intrinsic: k / scale,
            rotation: r,
            translation: t,
        }
    }
}

/// `M = K·Q` with `K` upper triangular and `Q` orthogonal.
fn rq3(m: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let flip = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
    let qr = (flip * m).transpose().qr();
    let q = qr.q();
    let r = qr.r();
    let k = flip * r.transpose() * flip;
    let rot = flip * q.transpose();
    (k, rot)
}

/// Rotation about the +Y axis by `angle` radians.
pub fn rotation_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about the +X axis by `angle` radians.
pub fn rotation_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

use serde::{Deserialize, Serialize};

use super::{SceneError, IMAGE_HEIGHT, IMAGE_WIDTH};
use crate::geometry::ImagePoint;
use crate::linalg::{mat3_det, mat3_identity, mat3_mul, mat3_mul_vec, Mat3};
use crate::scalar::Real;

/// Smallest camera-frame depth (meters) that still projects.
pub const MIN_DEPTH: f64 = 1e-6;

/// Pinhole camera. The pose maps world points into the camera frame:
/// `X_cam = rotation · X_world + translation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct CameraModel<T> {
    pub f: T,
    pub cu: T,
    pub cv: T,
    pub rotation: Mat3<T>,
    pub translation: [T; 3],
}

impl<T: Real> CameraModel<T> {
    /// Camera at the world origin looking down +z.
    pub fn new(f: T, cu: T, cv: T) -> Result<Self, SceneError> {
        Self::with_pose(f, cu, cv, mat3_identity(), [T::zero(); 3])
    }

    pub fn with_pose(f: T, cu: T, cv: T, rotation: Mat3<T>, translation: [T; 3]) -> Result<Self, SceneError> {
        if !(f > T::zero()) {
            return Err(SceneError::InvalidCamera(format!("focal length must be positive, got {f}")));
        }
        let tol = T::lit(1e-9);
        let rtr = mat3_mul(&transpose(&rotation), &rotation);
        let orthonormal = (0..3).all(|i| {
            (0..3).all(|j| {
                let e = if i == j { T::one() } else { T::zero() };
                (rtr[i][j] - e).abs() <= tol
            })
        });
        if !orthonormal || (mat3_det(&rotation) - T::one()).abs() > tol {
            return Err(SceneError::InvalidCamera("rotation is not a proper rotation matrix".into()));
        }
        Ok(Self { f, cu, cv, rotation, translation })
    }

    pub fn to_camera(&self, x: &[T; 3]) -> [T; 3] {
        let r = mat3_mul_vec(&self.rotation, x);
        [r[0] + self.translation[0], r[1] + self.translation[1], r[2] + self.translation[2]]
    }

    pub fn depth(&self, x: &[T; 3]) -> T {
        self.to_camera(x)[2]
    }

    /// Pinhole projection of a world point.
    pub fn project(&self, x: &[T; 3]) -> Result<ImagePoint<T>, SceneError> {
        let [xc, yc, zc] = self.to_camera(x);
        if !(zc > T::lit(MIN_DEPTH)) {
            return Err(SceneError::BehindCamera(zc.to_f64_lossy()));
        }
        Ok(ImagePoint::new(self.f * xc / zc + self.cu, self.f * yc / zc + self.cv))
    }

    /// Normalized image coordinates `((u - cu) / f, (v - cv) / f)`.
    pub fn normalized(&self, p: &ImagePoint<T>) -> (T, T) {
        ((p.u - self.cu) / self.f, (p.v - self.cv) / self.f)
    }

    /// World point at depth `z` (camera frame) seen at pixel `p`.
    pub fn back_project(&self, p: &ImagePoint<T>, z: T) -> [T; 3] {
        let (x, y) = self.normalized(p);
        let xc = [x * z - self.translation[0], y * z - self.translation[1], z - self.translation[2]];
        mat3_mul_vec(&transpose(&self.rotation), &xc)
    }

    /// Applies a rigid motion to the camera: the new camera frame is the old one
    /// rotated by `delta_r` and shifted by `delta_t`.
    pub fn moved(&self, delta_r: &Mat3<T>, delta_t: [T; 3]) -> Result<Self, SceneError> {
        let rotation = mat3_mul(delta_r, &self.rotation);
        let t = mat3_mul_vec(delta_r, &self.translation);
        Self::with_pose(self.f, self.cu, self.cv, rotation, [t[0] + delta_t[0], t[1] + delta_t[1], t[2] + delta_t[2]])
    }
}

pub fn in_image<T: Real>(p: &ImagePoint<T>) -> bool {
    p.u >= T::zero() && p.u < T::lit(IMAGE_WIDTH) && p.v >= T::zero() && p.v < T::lit(IMAGE_HEIGHT)
}

pub(crate) fn transpose<T: Real>(m: &Mat3<T>) -> Mat3<T> {
    [[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]]
}

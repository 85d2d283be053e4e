//! Similarity transforms, pinhole cameras and small rotation helpers.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ROTATION_TOLERANCE: f64 = 1e-6;

/// Returns true when `r` is orthonormal with determinant +1 within `tol`.
pub fn is_rotation(r: &Mat3, tol: f64) -> bool {
    let err = (r.transpose() * r - Mat3::identity()).abs().max();
    err <= tol && (r.determinant() - 1.0).abs() <= tol
}

/// Rotation by `angle` radians about `axis` (need not be normalized).
pub fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
    Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
}

/// Uniformly distributed random rotation (Shoemake's quaternion method).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random::<f64>() * core::f64::consts::TAU;
    let u3: f64 = rng.random::<f64>() * core::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = nalgebra::Quaternion::new(b * u3.cos(), a * u2.sin(), a * u2.cos(), b * u3.sin());
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// Projects a nearly orthonormal matrix onto SO(3).
pub fn orthonormalize(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Similarity transform `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Sim3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Sim3 {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Validated constructor; rejects non-positive scale and non-rotations.
    pub fn new(scale: f64, rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(crate::error::invalid("scale", "must be positive and finite"));
        }
        if !is_rotation(&rotation, ROTATION_TOLERANCE) {
            return Err(Error::NotARotation);
        }
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(crate::error::invalid("translation", "must be finite"));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn from_scale(scale: f64) -> Self {
        Self {
            scale,
            ..Self::identity()
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            translation,
            ..Self::identity()
        }
    }

    pub fn from_rotation(rotation: Mat3) -> Self {
        Self {
            rotation,
            ..Self::identity()
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Sim3) -> Sim3 {
        Sim3 {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation * self.scale + self.translation,
        }
    }

    pub fn inverse(&self) -> Sim3 {
        let rt = self.rotation.transpose();
        let inv_s = 1.0 / self.scale;
        Sim3 {
            scale: inv_s,
            rotation: rt,
            translation: -(rt * self.translation) * inv_s,
        }
    }

    /// Largest absolute component difference across scale, rotation and translation.
    pub fn max_abs_diff(&self, other: &Sim3) -> f64 {
        let ds = (self.scale - other.scale).abs();
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        ds.max(dr).max(dt)
    }
}

/// Pinhole camera. `rotation` maps camera axes to world axes (x right, y down,
/// z forward) and `translation` is the camera center in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraPose {
    pub fn validate(&self) -> Result<()> {
        if !is_rotation(&self.rotation, ROTATION_TOLERANCE) {
            return Err(Error::NotARotation);
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(crate::error::invalid("fx/fy", "focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(crate::error::invalid("resolution", "must be non-zero"));
        }
        Ok(())
    }

    /// Camera looking along `forward` from `center`, with `up_hint` fixing roll.
    pub fn look_along(
        center: Vec3,
        forward: Vec3,
        up_hint: Vec3,
        focal: f64,
        width: u32,
        height: u32,
    ) -> Self {
        let z = forward.normalize();
        let mut x = z.cross(&up_hint);
        if x.norm() < 1e-9 {
            x = z.cross(&Vec3::new(1.0, 0.0, 0.0));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Self {
            rotation: Mat3::from_columns(&[x, y, z]),
            translation: center,
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) * 0.5,
            cy: (height as f64 - 1.0) * 0.5,
            width,
            height,
        }
    }

    #[inline]
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// Optical axis in world coordinates.
    #[inline]
    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    /// Same pose with intrinsics rescaled to a `width`×`height` raster.
    pub fn with_resolution(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
            ..*self
        }
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.tr_mul(&(p - self.translation))
    }

    /// Pinhole projection; `None` when the point is at or behind the camera plane.
    #[inline]
    pub fn project(&self, p: &Vec3) -> Option<(Vector2<f64>, f64)> {
        let c = self.world_to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        Some((
            Vector2::new(self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy),
            c.z,
        ))
    }

    /// Viewing ray in camera coordinates with unit z component.
    #[inline]
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// World point seen at pixel `(u, v)` with camera-frame depth `depth`.
    #[inline]
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        self.rotation * (self.pixel_ray(u, v) * depth) + self.translation
    }

    /// Moves the camera with the scene: center `c -> s R c + T`, orientation `R · R_cam`.
    pub fn transformed(&self, x: &Sim3) -> Self {
        Self {
            rotation: x.rotation * self.rotation,
            translation: x.apply(&self.translation),
            ..*self
        }
    }
}

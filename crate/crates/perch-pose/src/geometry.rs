//! Rotation, translation, and angle primitives shared by all modules.
//!
//! Conventions: right-handed frames, rotations as 3x3 matrices, ZYX
//! (yaw-pitch-roll) Euler order with yaw about the z-axis. Units are
//! meters and radians everywhere inside the library.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rigid transform: rotation followed by translation.
///
/// Used throughout as the pose of a marker/target frame expressed in the
/// camera frame (`p_cam = rotation * p_target + translation`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation about the z-axis by `yaw`, with the given translation.
    pub fn from_yaw_translation(yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rot_z(yaw),
            translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Max deviation of `R^T R` from identity plus determinant drift.
    pub fn orthonormality_defect(&self) -> f64 {
        let e = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let det_err = (self.rotation.determinant() - 1.0).abs();
        e.amax().max(det_err)
    }
}

/// 4-DOF pose (x, y, z translation in meters, yaw in radians) used by the
/// filter and fusion stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose4 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Pose4 {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self { x, y, z, yaw }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.yaw.is_finite()
    }

    /// Normalize yaw into (-pi, pi].
    pub fn normalized(mut self) -> Self {
        self.yaw = wrap_angle(self.yaw).expect("finite yaw");
        self
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "wrap_angle: non-finite input {theta}"
        )));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = theta % two_pi;
    if a <= -std::f64::consts::PI {
        a += two_pi;
    } else if a > std::f64::consts::PI {
        a -= two_pi;
    }
    Ok(a)
}

/// Extract the yaw (rotation about z) of `r` under the ZYX Euler convention.
///
/// For a pure z-rotation this is the rotation angle. Near gimbal lock
/// (|r31| -> 1) yaw is not separable from roll.
pub fn yaw_from_rotation(r: &Matrix3<f64>) -> Result<f64> {
    let defect = (r.transpose() * r - Matrix3::identity()).amax();
    if defect > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "yaw_from_rotation: matrix not orthonormal (defect {defect:.3e})"
        )));
    }
    if r[(2, 0)].abs() > 1.0 - 1e-9 {
        return Err(Error::DegenerateOrientation(
            "gimbal lock: pitch at +/- 90 degrees".into(),
        ));
    }
    Ok(r[(1, 0)].atan2(r[(0, 0)]))
}

/// Composition: apply `b` first, then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    let rt = t.rotation.transpose();
    RigidTransform {
        rotation: rt,
        translation: -(rt * t.translation),
    }
}

/// Nearest orthonormal matrix (Frobenius sense) with det +1, via SVD.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd vt");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        // flip the weakest singular direction
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

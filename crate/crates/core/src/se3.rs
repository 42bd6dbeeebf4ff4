//! Rigid-transform algebra over SO(3) and SE(3).
//!
//! Rotations are stored as unit quaternions and exported as row-major 3×3
//! matrices on demand. Poses carry a `(source, target)` frame tag that is
//! checked at runtime whenever two poses are chained, so mixing up an
//! object→camera pose with a camera→world pose fails loudly instead of
//! silently producing garbage.
//!
//! The tracking code uses the object→camera convention throughout: a pose
//! tagged `(blue, camera)` maps points expressed in the blue block's frame
//! into the camera frame.

use nalgebra::{Matrix3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Largest deviation from orthonormality (or unit norm) that is silently
/// repaired on import. Anything worse is rejected.
pub const REPAIR_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Se3Error {
    #[error("frame mismatch: expected `{expected}`, found `{found}`")]
    FrameMismatch { expected: String, found: String },
    #[error("rotation matrix is not orthonormal (max deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },
    #[error("rotation matrix has determinant {det:.6}, expected +1")]
    Reflection { det: f64 },
    #[error("quaternion norm {norm:.9} is not 1")]
    NotUnit { norm: f64 },
    #[error("non-finite value in transform")]
    NonFinite,
}

/// An element of SO(3).
#[derive(Clone, Copy, Debug)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    /// Rotation by `angle` radians about `axis`. A zero axis yields identity.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        match Unit::try_new(*axis, 1e-15) {
            Some(axis) => Self(UnitQuaternion::from_axis_angle(&axis, angle)),
            None => Self::identity(),
        }
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    /// Builds a rotation from a `(w, x, y, z)` quaternion. Norms within
    /// [`REPAIR_TOLERANCE`] of one are renormalized.
    pub fn from_quaternion(wxyz: [f64; 4]) -> Result<Self, Se3Error> {
        if wxyz.iter().any(|v| !v.is_finite()) {
            return Err(Se3Error::NonFinite);
        }
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if (norm - 1.0).abs() > REPAIR_TOLERANCE {
            return Err(Se3Error::NotUnit { norm });
        }
        // Values that are already unit to rounding are kept bit-for-bit.
        if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self(UnitQuaternion::new_unchecked(q)));
        }
        Ok(Self(UnitQuaternion::from_quaternion(q)))
    }

    /// Builds a rotation from a row-major 3×3 matrix.
    pub fn from_matrix(rows: [[f64; 3]; 3]) -> Result<Self, Se3Error> {
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Se3Error::NonFinite);
        }
        let m = Matrix3::from_fn(|r, c| rows[r][c]);
        let deviation = (m.transpose() * m - Matrix3::identity()).abs().max();
        if deviation > REPAIR_TOLERANCE {
            return Err(Se3Error::NotOrthonormal { deviation });
        }
        let det = m.determinant();
        if det < 0.0 {
            return Err(Se3Error::Reflection { det });
        }
        let rot = Rotation3::from_matrix_eps(&m, 1e-15, 64, Rotation3::identity());
        Ok(Self(UnitQuaternion::from_rotation_matrix(&rot)))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self(q)
    }

    pub fn unit_quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    /// `(w, x, y, z)` with a non-negative scalar part.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    /// Row-major matrix export.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let m = self.matrix();
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.transform_vector(v)
    }

    /// Geodesic distance to `other` in radians, in `[0, π]`.
    ///
    /// Equal to `arccos((trace(AᵀB) − 1) / 2)` but evaluated through the
    /// quaternions, as four times the half-angle between them on the unit
    /// 3-sphere, so it stays well conditioned near 0 and π and is exactly 0
    /// for identical inputs.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        let a = self.0.quaternion().coords;
        let mut b = other.0.quaternion().coords;
        if a.dot(&b) < 0.0 {
            b = -b;
        }
        (4.0 * (a - b).norm().atan2((a + b).norm())).clamp(0.0, std::f64::consts::PI)
    }

    /// Re-projects onto the unit sphere after long composition chains.
    pub fn renormalized(&self) -> Self {
        Self(UnitQuaternion::new_normalize(*self.0.quaternion()))
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// `q` and `-q` are the same rotation.
impl PartialEq for Rotation {
    fn eq(&self, other: &Self) -> bool {
        let a = self.0.quaternion();
        let b = other.0.quaternion();
        a == b || *a == -*b
    }
}

pub fn rotation_angle_between(a: &Rotation, b: &Rotation) -> f64 {
    a.angle_to(b)
}

/// A rigid transform from frame `src` into frame `dst`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub src: String,
    pub dst: String,
}

impl Pose {
    pub fn new(
        rotation: Rotation,
        translation: Vector3<f64>,
        src: impl Into<String>,
        dst: impl Into<String>,
    ) -> Self {
        Self {
            rotation,
            translation,
            src: src.into(),
            dst: dst.into(),
        }
    }

    pub fn identity(src: impl Into<String>, dst: impl Into<String>) -> Self {
        Self::new(Rotation::identity(), Vector3::zeros(), src, dst)
    }

    /// Same transform, different frame tags.
    pub fn retagged(&self, src: impl Into<String>, dst: impl Into<String>) -> Self {
        Self::new(self.rotation, self.translation, src, dst)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rinv = self.rotation.inverse();
        Pose {
            rotation: rinv,
            translation: -rinv.rotate(&self.translation),
            src: self.dst.clone(),
            dst: self.src.clone(),
        }
    }

    /// `self ∘ rhs`: apply `rhs` first, then `self`.
    pub fn compose(&self, rhs: &Pose) -> Result<Pose, Se3Error> {
        if self.src != rhs.dst {
            return Err(Se3Error::FrameMismatch {
                expected: self.src.clone(),
                found: rhs.dst.clone(),
            });
        }
        Ok(Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation.rotate(&rhs.translation) + self.translation,
            src: rhs.src.clone(),
            dst: self.dst.clone(),
        })
    }

    /// 4×4 homogeneous matrix, row-major.
    pub fn to_homogeneous(&self) -> [[f64; 4]; 4] {
        let r = self.rotation.to_matrix();
        let t = self.translation;
        [
            [r[0][0], r[0][1], r[0][2], t.x],
            [r[1][0], r[1][1], r[1][2], t.y],
            [r[2][0], r[2][1], r[2][2], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.to_quaternion().iter().all(|v| v.is_finite())
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.rotation.to_quaternion();
        let t = self.translation;
        write!(
            f,
            "{}→{} q=[{:.5}, {:.5}, {:.5}, {:.5}] t=[{:.5}, {:.5}, {:.5}]",
            self.src, self.dst, q[0], q[1], q[2], q[3], t.x, t.y, t.z
        )
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Result<Pose, Se3Error> {
    a.compose(b)
}

pub fn inverse(p: &Pose) -> Pose {
    p.inverse()
}

/// Infers where a static target sits at frame `i` from a static anchor that
/// is visible at both frame 0 and frame `i`.
///
/// Computes `anchor_at_i ∘ anchor_at_0⁻¹ ∘ target_at_0`. Its rotation part is
/// `R_i^A · (R_0^A)ᵀ · R_0^B`; the translation follows from the same rigid
/// chain. Exact whenever anchor and target do not move relative to each
/// other and only the camera moves.
pub fn anchor_transfer(
    anchor_at_0: &Pose,
    anchor_at_i: &Pose,
    target_at_0: &Pose,
) -> Result<Pose, Se3Error> {
    if anchor_at_0.src != anchor_at_i.src {
        return Err(Se3Error::FrameMismatch {
            expected: anchor_at_0.src.clone(),
            found: anchor_at_i.src.clone(),
        });
    }
    let target_in_anchor = anchor_at_0.inverse().compose(target_at_0)?;
    anchor_at_i.compose(&target_in_anchor)
}

#[derive(Serialize, Deserialize)]
struct PoseWire {
    q: [f64; 4],
    t: [f64; 3],
    src: String,
    dst: String,
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PoseWire {
            q: self.rotation.to_quaternion(),
            t: [self.translation.x, self.translation.y, self.translation.z],
            src: self.src.clone(),
            dst: self.dst.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = PoseWire::deserialize(deserializer)?;
        let rotation = Rotation::from_quaternion(wire.q).map_err(serde::de::Error::custom)?;
        if wire.t.iter().any(|v| !v.is_finite()) {
            return Err(serde::de::Error::custom(Se3Error::NonFinite));
        }
        Ok(Pose::new(rotation, Vector3::from(wire.t), wire.src, wire.dst))
    }
}

//! Pinhole projection, sphere silhouettes and depth-from-box recovery.
//!
//! An object normalized into a sphere of known diameter has a perspective
//! silhouette whose size depends only on its distance, so a detector box
//! is enough to put the object center back in 3D.

use crate::se3::{Pose, Rotation};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Points closer than this to the image plane are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("sphere of radius {radius} at depth {depth} intersects the image plane")]
    SphereIntersectsImagePlane { depth: f64, radius: f64 },
    #[error("bounding box is empty")]
    EmptyBox,
    #[error("sphere diameter must be positive, got {0}")]
    InvalidDiameter(f64),
    #[error(transparent)]
    Frame(#[from] crate::se3::Se3Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, CameraError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let bad = |msg: &str| Err(CameraError::InvalidIntrinsics(msg.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return bad("cx must lie inside the image");
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return bad("cy must lie inside the image");
        }
        Ok(())
    }

    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path)?;
        let k: Self = serde_json::from_str(&text)?;
        k.validate()?;
        Ok(k)
    }

    /// Projects a point already expressed in the camera frame.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
        if !(p.z > MIN_DEPTH) {
            return Err(CameraError::BehindCamera { z: p.z });
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Ray through pixel `(u, v)` with unit z component.
    pub fn back_project(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BoundingBox {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self, CameraError> {
        let b = Self { min_x, min_y, max_x, max_y };
        if b.is_empty() {
            return Err(CameraError::EmptyBox);
        }
        Ok(b)
    }

    pub fn is_empty(&self) -> bool {
        !(self.min_x < self.max_x && self.min_y < self.max_y)
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(0.5 * (self.min_x + self.max_x), 0.5 * (self.min_y + self.max_y))
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }
}

/// How a box is turned back into a distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthRule {
    /// `f̄ · d / max(w, h)`. Cheap, but biased short by `1 − sqrt(1 − (r/D)²)`
    /// on axis and worse off axis.
    SmallAngle,
    /// Inverts the perspective silhouette exactly: each pair of box edges
    /// defines two tangent planes through the camera center, whose opening
    /// angle fixes the distance to the sphere center.
    #[default]
    Silhouette,
}

/// Projects a world point through a world→camera extrinsic.
pub fn project_point(
    p_world: &Vector3<f64>,
    extrinsic: &Pose,
    k: &CameraIntrinsics,
) -> Result<Vector2<f64>, CameraError> {
    k.project(&extrinsic.transform_point(p_world))
}

/// Exact image-space extent of a sphere's perspective silhouette.
///
/// The extreme columns are where a plane `x = m·z` through the camera center
/// touches the sphere; solving the tangency condition gives the two slopes
/// `m`. Rows work the same way with `y = m·z`.
pub fn sphere_bbox(
    center_cam: &Vector3<f64>,
    radius: f64,
    k: &CameraIntrinsics,
) -> Result<BoundingBox, CameraError> {
    if !(center_cam.z > radius.max(0.0)) || center_cam.z <= MIN_DEPTH {
        return Err(CameraError::SphereIntersectsImagePlane {
            depth: center_cam.z,
            radius,
        });
    }
    let (x0, x1) = tangent_slopes(center_cam.x, center_cam.z, radius);
    let (y0, y1) = tangent_slopes(center_cam.y, center_cam.z, radius);
    Ok(BoundingBox {
        min_x: k.fx * x0 + k.cx,
        max_x: k.fx * x1 + k.cx,
        min_y: k.fy * y0 + k.cy,
        max_y: k.fy * y1 + k.cy,
    })
}

/// Slopes of the two planes `a = m·z` tangent to a circle of radius `r`
/// centered at `(a, z)` in the a–z plane. Requires `z > r`.
fn tangent_slopes(a: f64, z: f64, r: f64) -> (f64, f64) {
    let denom = z * z - r * r;
    let disc = r * (a * a + denom).sqrt();
    ((a * z - disc) / denom, (a * z + disc) / denom)
}

/// Small-angle depth of a normalized sphere from its detected box:
/// `depth = f̄ · diameter / max(width, height)`.
///
/// Accurate to about 2% once the depth exceeds 2.5 diameters on the optical
/// axis. Closer than that it logs a near-field warning.
pub fn depth_from_bbox(
    b: &BoundingBox,
    sphere_diameter: f64,
    k: &CameraIntrinsics,
) -> Result<f64, CameraError> {
    check_detection(b, sphere_diameter)?;
    let side = b.width().max(b.height());
    let depth = k.mean_focal() * sphere_diameter / side;
    if is_near_field(depth, sphere_diameter) {
        tracing::warn!(depth, sphere_diameter, "depth estimate is in the near field");
    }
    Ok(depth)
}

/// True when the small-angle depth formula is past its accuracy limit.
pub fn is_near_field(depth: f64, sphere_diameter: f64) -> bool {
    depth < 2.5 * sphere_diameter
}

fn check_detection(b: &BoundingBox, sphere_diameter: f64) -> Result<(), CameraError> {
    if b.is_empty() {
        return Err(CameraError::EmptyBox);
    }
    if !(sphere_diameter > 0.0) {
        return Err(CameraError::InvalidDiameter(sphere_diameter));
    }
    Ok(())
}

/// Sphere center recovered by inverting [`sphere_bbox`].
///
/// For each image axis the two box edges back-project to tangent planes at
/// angles `θ₀ < θ₁`. The center lies on the bisector `φ = (θ₀ + θ₁)/2` at
/// distance `r / sin((θ₁ − θ₀)/2)` from the camera's perpendicular axis.
/// The two axes each give a z estimate; their mean is used.
pub fn sphere_center_from_bbox(
    b: &BoundingBox,
    sphere_diameter: f64,
    k: &CameraIntrinsics,
) -> Result<Vector3<f64>, CameraError> {
    check_detection(b, sphere_diameter)?;
    let r = 0.5 * sphere_diameter;
    let axis = |lo: f64, hi: f64, f: f64, c: f64| {
        let t0 = ((lo - c) / f).atan();
        let t1 = ((hi - c) / f).atan();
        let half = 0.5 * (t1 - t0);
        let phi = 0.5 * (t0 + t1);
        let rho = r / half.sin();
        (rho * phi.cos(), phi.tan())
    };
    let (zx, slope_x) = axis(b.min_x, b.max_x, k.fx, k.cx);
    let (zy, slope_y) = axis(b.min_y, b.max_y, k.fy, k.cy);
    let z = 0.5 * (zx + zy);
    Ok(Vector3::new(z * slope_x, z * slope_y, z))
}

/// Distance to the sphere center under the chosen rule.
pub fn depth_with_rule(
    b: &BoundingBox,
    sphere_diameter: f64,
    k: &CameraIntrinsics,
    rule: DepthRule,
) -> Result<f64, CameraError> {
    match rule {
        DepthRule::SmallAngle => depth_from_bbox(b, sphere_diameter, k),
        DepthRule::Silhouette => Ok(sphere_center_from_bbox(b, sphere_diameter, k)?.norm()),
    }
}

/// Initial object→camera pose from a detection box and the rotation of the
/// best-matching reference viewpoint.
///
/// With [`DepthRule::SmallAngle`] the translation is the ray through the box
/// center scaled to z = depth. With [`DepthRule::Silhouette`] it is the exact
/// recovered sphere center.
pub fn pose_from_detection(
    b: &BoundingBox,
    viewpoint_rotation: &Rotation,
    sphere_diameter: f64,
    k: &CameraIntrinsics,
    rule: DepthRule,
    object_id: &str,
) -> Result<Pose, CameraError> {
    let translation = match rule {
        DepthRule::SmallAngle => {
            let depth = depth_from_bbox(b, sphere_diameter, k)?;
            let c = b.center();
            k.back_project(c.x, c.y) * depth
        }
        DepthRule::Silhouette => sphere_center_from_bbox(b, sphere_diameter, k)?,
    };
    Ok(Pose::new(*viewpoint_rotation, translation, object_id, "camera"))
}

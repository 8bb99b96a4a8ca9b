//! Quaternion, pose, ray and pose-correction arithmetic.
//!
//! Conventions used throughout the crate:
//!
//! * Quaternions are Hamilton, stored as `(w, x, y, z)`, right-handed.
//! * A [`Pose`] maps camera coordinates to the reference (world) frame:
//!   `p_world = R(q) p_cam + t`, so `t` is the camera center.
//! * The camera looks down `+z`, with `+x` to the right and `+y` down the
//!   image. Pixel `(i, j)` is column `i`, row `j`, and rays go through pixel
//!   centers `(i + 0.5, j + 0.5)`.
//! * Corrections rotate on the left, in the world frame: `q~ = dq * q^`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn normalize(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn get(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Hamilton quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Quaternion::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn from_scalar_vector(w: f64, v: Vec3) -> Self {
        Quaternion::new(w, v.x, v.y, v.z)
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = axis.normalize();
        let (s, c) = (0.5 * angle).sin_cos();
        Quaternion::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Quaternion of a proper rotation matrix given row-major.
    pub fn from_rotation_matrix(m: [[f64; 3]; 3]) -> Self {
        let trace = m[0][0] + m[1][1] + m[2][2];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quaternion::new(
                0.25 * s,
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            )
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Quaternion::new(
                (m[2][1] - m[1][2]) / s,
                0.25 * s,
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            )
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Quaternion::new(
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                0.25 * s,
                (m[1][2] + m[2][1]) / s,
            )
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Quaternion::new(
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                0.25 * s,
            )
        };
        q.normalize()
    }

    pub fn vector(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn conjugate(self) -> Self {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(self, o: Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalize(self) -> Self {
        let s = 1.0 / self.norm();
        Quaternion::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    /// Representative with non-negative scalar part (`q` and `-q` are the
    /// same rotation).
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            Quaternion::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            self
        }
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn angle(self) -> f64 {
        2.0 * self.vector().norm().atan2(self.w.abs())
    }

    /// Geodesic distance between the rotations `self` and `o`, radians.
    pub fn angle_to(self, o: Quaternion) -> f64 {
        quat_mul(self.conjugate(), o).angle()
    }

    /// Row-major rotation matrix.
    pub fn to_rotation_matrix(self) -> [[f64; 3]; 3] {
        let Quaternion { w, x, y, z } = self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }
}

/// Hamilton product `a * b`.
pub fn quat_mul(a: Quaternion, b: Quaternion) -> Quaternion {
    Quaternion::new(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

/// Sandwich product `q (0, v) q*` for a unit quaternion `q`, expanded as
/// `v + 2w (u x v) + 2 u x (u x v)` with `u` the vector part.
pub fn quat_rotate(q: Quaternion, v: Vec3) -> Vec3 {
    let u = q.vector();
    let uv = u.cross(v);
    let uuv = u.cross(uv);
    v + uv * (2.0 * q.w) + uuv * 2.0
}

/// Scalar part of a correction quaternion from its learnable vector part,
/// chosen so the assembled quaternion has unit norm.
pub fn correction_scalar(dq_vec: Vec3) -> Result<f64> {
    let n2 = dq_vec.norm_squared();
    if n2 >= 1.0 || !n2.is_finite() {
        return Err(Error::CorrectionNorm { norm: n2.sqrt() });
    }
    Ok((1.0 - n2).sqrt())
}

/// Camera extrinsics: orientation (camera to world) and camera center.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub q: Quaternion,
    pub t: Vec3,
}

impl Pose {
    pub fn new(q: Quaternion, t: Vec3) -> Self {
        Pose { q, t }
    }

    /// Camera at `eye` looking at `target`, with image rows running against
    /// `up` (image `-y` points roughly along `up`).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let fwd = (target - eye).normalize();
        let mut right = fwd.cross(up);
        if right.norm() < 1e-9 {
            // Looking along `up`; any perpendicular works.
            right = fwd.cross(Vec3::new(1.0, 0.0, 0.0));
            if right.norm() < 1e-9 {
                right = fwd.cross(Vec3::new(0.0, 1.0, 0.0));
            }
        }
        let right = right.normalize();
        let down = fwd.cross(right);
        // Columns are the camera axes expressed in world coordinates.
        let m = [
            [right.x, down.x, fwd.x],
            [right.y, down.y, fwd.y],
            [right.z, down.z, fwd.z],
        ];
        Pose::new(Quaternion::from_rotation_matrix(m), eye)
    }
}

/// Learnable per-image pose delta: vector part of the rotation correction and
/// a translation correction in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseCorrection {
    pub dq_vec: Vec3,
    pub dt: Vec3,
}

impl PoseCorrection {
    pub fn new(dq_vec: Vec3, dt: Vec3) -> Self {
        PoseCorrection { dq_vec, dt }
    }

    pub fn rotation(&self) -> Result<Quaternion> {
        Ok(Quaternion::from_scalar_vector(correction_scalar(self.dq_vec)?, self.dq_vec))
    }
}

/// Pose-level refinement: `t~ = t^ + dt`, `q~ = dq * q^`.
pub fn apply_correction(corr: &PoseCorrection, pose: &Pose) -> Result<Pose> {
    let dq = corr.rotation()?;
    let q = if corr.dq_vec == Vec3::ZERO {
        pose.q
    } else {
        quat_mul(dq, pose.q).normalize()
    };
    Ok(Pose::new(q, pose.t + corr.dt))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Square image with the principal point at the image center and the
    /// given horizontal field of view.
    pub fn from_fov(width: usize, height: usize, fov_x_deg: f64) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        CameraIntrinsics::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Intrinsics(format!("{self:?}")))
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Unit ray direction through the center of pixel `(i, j)` in camera
    /// coordinates.
    pub fn camera_direction(&self, i: usize, j: usize) -> Vec3 {
        Vec3::new(
            (i as f64 + 0.5 - self.cx) / self.fx,
            (j as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
        .normalize()
    }
}

/// World-space rays through the given pixel centers.
pub fn pixel_rays(
    pose: &Pose,
    intr: &CameraIntrinsics,
    pixels: &[(usize, usize)],
) -> Result<Vec<Ray>> {
    pixels
        .iter()
        .map(|&(i, j)| {
            if i >= intr.width || j >= intr.height {
                return Err(Error::PixelOutOfRange { i, j, width: intr.width, height: intr.height });
            }
            Ok(Ray { origin: pose.t, dir: quat_rotate(pose.q, intr.camera_direction(i, j)) })
        })
        .collect()
}

/// Ray-level refinement: shifts origins by `dt` and rotates directions by the
/// correction quaternion. Equivalent to refining the pose first.
pub fn refine_rays(corr: &PoseCorrection, rays: &[Ray]) -> Result<Vec<Ray>> {
    let dq = corr.rotation()?;
    Ok(rays
        .iter()
        .map(|r| Ray { origin: r.origin + corr.dt, dir: quat_rotate(dq, r.dir) })
        .collect())
}

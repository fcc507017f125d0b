//! Rigid-body poses, relative actions and small calibration helpers.
//!
//! Quaternions are scalar-first `(w, x, y, z)` and kept in the canonical
//! hemisphere `w >= 0`. Relative actions express the translation in the body
//! frame of the source pose, so `apply(a, relative(a, b)) == b` and the delta
//! is invariant to any rigid transform applied to both poses.

use std::f64::consts::{PI, TAU};
use std::ops::Mul;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Allowed deviation of a quaternion norm from one.
pub const UNIT_TOL: f64 = 1e-9;

/// Normal-equation condition numbers above this are treated as rank deficient.
pub const AFFINE_CONDITION_LIMIT: f64 = 1e10;

const NLERP_THRESHOLD: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("invalid pose: quaternion norm {norm} is not unit")]
    InvalidPose { norm: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle * 0.5).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n).canonical()
    }

    pub fn from_yaw(theta: f64) -> Self {
        let (s, c) = (theta * 0.5).sin_cos();
        Self::new(c, 0.0, 0.0, s).canonical()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn scale(&self, s: f64) -> Quat {
        Quat::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(&self) -> Quat {
        self.scale(1.0 / self.norm())
    }

    /// Representative with `w >= 0`.
    pub fn canonical(&self) -> Quat {
        if self.w < 0.0 {
            self.scale(-1.0)
        } else {
            *self
        }
    }

    pub fn conjugate(&self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn check_unit(&self) -> Result<(), GeomError> {
        let norm = self.norm();
        if (norm - 1.0).abs() > UNIT_TOL || !norm.is_finite() {
            Err(GeomError::InvalidPose { norm })
        } else {
            Ok(())
        }
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        // v' = v + 2w (u x v) + 2 u x (u x v)
        let u = [self.x, self.y, self.z];
        let t = cross(u, v);
        let t = [2.0 * t[0], 2.0 * t[1], 2.0 * t[2]];
        let ut = cross(u, t);
        [
            v[0] + self.w * t[0] + ut[0],
            v[1] + self.w * t[1] + ut[1],
            v[2] + self.w * t[2] + ut[2],
        ]
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let v = (self.x * self.x + self.y * self.y + self.z * self.z).sqrt();
        2.0 * v.atan2(self.w.abs())
    }

    /// Geodesic angle between two orientations.
    pub fn angle_to(&self, other: &Quat) -> f64 {
        (self.conjugate() * *other).angle()
    }

    /// Heading about the world z axis.
    pub fn yaw(&self) -> f64 {
        let siny = 2.0 * (self.w * self.z + self.x * self.y);
        let cosy = 1.0 - 2.0 * (self.y * self.y + self.z * self.z);
        siny.atan2(cosy)
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }
}

impl Mul for Quat {
    type Output = Quat;

    fn mul(self, o: Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Shortest-arc spherical interpolation between unit quaternions.
///
/// Falls back to normalized linear interpolation when the endpoints are
/// nearly parallel.
pub fn slerp(q0: &Quat, q1: &Quat, t: f64) -> Quat {
    let mut dot = q0.dot(q1);
    let mut end = *q1;
    if dot < 0.0 {
        end = end.scale(-1.0);
        dot = -dot;
    }
    if dot > NLERP_THRESHOLD {
        let q = Quat::new(
            q0.w + t * (end.w - q0.w),
            q0.x + t * (end.x - q0.x),
            q0.y + t * (end.y - q0.y),
            q0.z + t * (end.z - q0.z),
        );
        return q.normalized().canonical();
    }
    let theta = dot.min(1.0).acos();
    let sin_theta = theta.sin();
    let a = ((1.0 - t) * theta).sin() / sin_theta;
    let b = (t * theta).sin() / sin_theta;
    Quat::new(
        a * q0.w + b * end.w,
        a * q0.x + b * end.x,
        a * q0.y + b * end.y,
        a * q0.z + b * end.z,
    )
    .canonical()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose3 {
    pub p: [f64; 3],
    pub q: Quat,
}

impl Pose3 {
    pub const IDENTITY: Pose3 = Pose3 { p: [0.0; 3], q: Quat::IDENTITY };

    pub fn new(p: [f64; 3], q: Quat) -> Self {
        Self { p, q: q.canonical() }
    }

    pub fn check(&self) -> Result<(), GeomError> {
        self.q.check_unit()
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Pose3) -> Pose3 {
        let r = self.q.rotate(other.p);
        Pose3 {
            p: [self.p[0] + r[0], self.p[1] + r[1], self.p[2] + r[2]],
            q: (self.q * other.q).canonical(),
        }
    }

    pub fn inverse(&self) -> Pose3 {
        let qi = self.q.conjugate();
        let p = qi.rotate(self.p);
        Pose3 { p: [-p[0], -p[1], -p[2]], q: qi.canonical() }
    }
}

impl From<Pose2> for Pose3 {
    fn from(p: Pose2) -> Self {
        Pose3 { p: [p.x, p.y, 0.0], q: Quat::from_yaw(p.theta) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 { x: 0.0, y: 0.0, theta: 0.0 };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Rotates a world-frame vector into this pose's body frame.
    pub fn to_body(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
    }

    /// Rotates a body-frame vector into the world frame.
    pub fn to_world(&self, v: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }
}

impl From<Pose3> for Pose2 {
    /// Drops z and keeps only the heading about the z axis.
    fn from(p: Pose3) -> Self {
        Pose2::new(p.p[0], p.p[1], p.q.yaw())
    }
}

/// Body-frame delta between two [`Pose3`]s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delta3 {
    pub dp: [f64; 3],
    pub dq: Quat,
}

impl Delta3 {
    pub const ZERO: Delta3 = Delta3 { dp: [0.0; 3], dq: Quat::IDENTITY };
}

/// Body-frame delta between two [`Pose2`]s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delta2 {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl Delta2 {
    pub const ZERO: Delta2 = Delta2 { dx: 0.0, dy: 0.0, dtheta: 0.0 };

    pub fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        Self { dx, dy, dtheta }
    }
}

impl From<Delta3> for Delta2 {
    fn from(d: Delta3) -> Self {
        Delta2 { dx: d.dp[0], dy: d.dp[1], dtheta: d.dq.yaw() }
    }
}

/// Poses that support the relative-action algebra.
pub trait RigidPose: Copy {
    type Delta: Copy;

    /// Delta `d` with `self ∘ d == target`.
    fn relative_to(&self, target: &Self) -> Result<Self::Delta, GeomError>;

    fn apply_delta(&self, delta: &Self::Delta) -> Result<Self, GeomError>;
}

impl RigidPose for Pose3 {
    type Delta = Delta3;

    fn relative_to(&self, target: &Pose3) -> Result<Delta3, GeomError> {
        self.check()?;
        target.check()?;
        let qi = self.q.conjugate();
        let diff = [
            target.p[0] - self.p[0],
            target.p[1] - self.p[1],
            target.p[2] - self.p[2],
        ];
        Ok(Delta3 { dp: qi.rotate(diff), dq: (qi * target.q).canonical() })
    }

    fn apply_delta(&self, d: &Delta3) -> Result<Pose3, GeomError> {
        self.check()?;
        d.dq.check_unit()?;
        Ok(self.compose(&Pose3 { p: d.dp, q: d.dq }))
    }
}

impl RigidPose for Pose2 {
    type Delta = Delta2;

    fn relative_to(&self, target: &Pose2) -> Result<Delta2, GeomError> {
        let [dx, dy] = self.to_body([target.x - self.x, target.y - self.y]);
        Ok(Delta2 { dx, dy, dtheta: wrap_angle(target.theta - self.theta) })
    }

    fn apply_delta(&self, d: &Delta2) -> Result<Pose2, GeomError> {
        let [wx, wy] = self.to_world([d.dx, d.dy]);
        Ok(Pose2::new(self.x + wx, self.y + wy, self.theta + d.dtheta))
    }
}

/// Pose part of the relative action taking `a` to `b`.
pub fn relative<P: RigidPose>(a: &P, b: &P) -> Result<P::Delta, GeomError> {
    a.relative_to(b)
}

/// `a ∘ d`; the exact inverse of [`relative`].
pub fn apply<P: RigidPose>(a: &P, d: &P::Delta) -> Result<P, GeomError> {
    a.apply_delta(d)
}

/// A pose delta paired with an absolute gripper target in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelAction<D> {
    pub delta: D,
    pub gripper: f64,
}

impl<D> RelAction<D> {
    /// The gripper target is clamped into `[0, 1]`.
    pub fn new(delta: D, gripper: f64) -> Self {
        Self { delta, gripper: gripper.clamp(0.0, 1.0) }
    }
}

pub type RelAction2 = RelAction<Delta2>;
pub type RelAction3 = RelAction<Delta3>;

impl From<RelAction3> for RelAction2 {
    fn from(a: RelAction3) -> Self {
        RelAction { delta: a.delta.into(), gripper: a.gripper }
    }
}

/// `p ↦ A p + b` on the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine2 {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl Default for Affine2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2 { a: [[1.0, 0.0], [0.0, 1.0]], b: [0.0, 0.0] };

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.a[0][0] * p[0] + self.a[0][1] * p[1] + self.b[0],
            self.a[1][0] * p[0] + self.a[1][1] * p[1] + self.b[1],
        ]
    }

    /// Root-mean-square mapping error over correspondences.
    pub fn rms_residual(&self, src: &[[f64; 2]], dst: &[[f64; 2]]) -> f64 {
        if src.is_empty() {
            return 0.0;
        }
        let ss: f64 = src
            .iter()
            .zip(dst)
            .map(|(s, d)| {
                let m = self.apply(*s);
                (m[0] - d[0]).powi(2) + (m[1] - d[1]).powi(2)
            })
            .sum();
        (ss / src.len() as f64).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().flatten().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

/// Least-squares affine map with `A src_i + b ≈ dst_i`.
///
/// Source points are centered and scaled before forming the normal
/// equations so the condition guard reflects geometry, not units.
pub fn fit_affine2(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Affine2, GeomError> {
    if src.len() != dst.len() {
        return Err(GeomError::Degenerate(format!(
            "{} source points but {} destination points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(GeomError::Degenerate(format!(
            "need at least 3 correspondences, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let cx = src.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = src.iter().map(|p| p[1]).sum::<f64>() / n;
    let rms = (src.iter().map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sum::<f64>() / n).sqrt();
    if !(rms > 0.0) || !rms.is_finite() {
        return Err(GeomError::Degenerate("source points coincide".into()));
    }
    let s = 1.0 / rms;

    let mut m = Matrix3::<f64>::zeros();
    let mut rhs_x = Vector3::<f64>::zeros();
    let mut rhs_y = Vector3::<f64>::zeros();
    for (p, d) in src.iter().zip(dst) {
        let phi = Vector3::new((p[0] - cx) * s, (p[1] - cy) * s, 1.0);
        m += phi * phi.transpose();
        rhs_x += phi * d[0];
        rhs_y += phi * d[1];
    }
    let eig = SymmetricEigen::new(m);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || max / min > AFFINE_CONDITION_LIMIT {
        return Err(GeomError::Degenerate(format!(
            "normal equations rank deficient (condition {:.3e})",
            max / min.max(f64::MIN_POSITIVE)
        )));
    }
    let chol = m
        .cholesky()
        .ok_or_else(|| GeomError::Degenerate("normal equations not positive definite".into()))?;
    let ux = chol.solve(&rhs_x);
    let uy = chol.solve(&rhs_y);

    // Undo the normalization: x' = s (x - c).
    let a = [[ux[0] * s, ux[1] * s], [uy[0] * s, uy[1] * s]];
    let b = [
        ux[2] - a[0][0] * cx - a[0][1] * cy,
        uy[2] - a[1][0] * cx - a[1][1] * cy,
    ];
    Ok(Affine2 { a, b })
}

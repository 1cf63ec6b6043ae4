//! Camera model, rigid-motion algebra, primitive transforms and joint
//! decomposition.
//!
//! Quaternions use nalgebra's `Quaternion` with the scalar part `w`; gradient
//! arrays are ordered `[w, x, y, z]`. Pixel `(i, j)` has its center at integer
//! coordinates, and cameras follow the x-right / y-down / z-forward convention.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = Quaternion<f64>;

/// Default revolute/prismatic decision threshold for [`decompose_joint`].
pub const DEFAULT_PRISMATIC_THRESHOLD_DEG: f64 = 0.5;

/// Serde helper storing quaternions as `[w, x, y, z]`.
pub mod quat_wxyz {
    use super::Quat;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(q: &Quat, s: S) -> Result<S::Ok, S::Error> {
        [q.w, q.i, q.j, q.k].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Quat, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        Ok(Quat::new(w, x, y, z))
    }
}

#[inline]
pub fn quat_identity() -> Quat {
    Quat::new(1.0, 0.0, 0.0, 0.0)
}

#[inline]
pub(crate) fn quat_components(q: &Quat) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Rotation angle in `[0, pi]` of a (not necessarily normalized) quaternion.
pub fn quat_angle(q: &Quat) -> f64 {
    let v = Vec3::new(q.i, q.j, q.k).norm();
    2.0 * v.atan2(q.w.abs())
}

/// Polynomial rotation map, valid for unit quaternions.
#[inline]
fn rotmat_unit([w, x, y, z]: [f64; 4]) -> Mat3 {
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Rotation matrix of `q`, renormalizing first. A zero quaternion is rejected.
pub fn quat_to_rotmat(q: &Quat) -> Result<Mat3> {
    let n = q.norm();
    if !(n > 1e-12) || !n.is_finite() {
        return Err(Error::InvalidInput(format!(
            "quaternion with norm {n} has no rotation"
        )));
    }
    let c = quat_components(q);
    Ok(rotmat_unit(c.map(|v| v / n)))
}

/// Back-propagates `dL/dR` (for `R = quat_to_rotmat(q)`) to the raw quaternion
/// components `[w, x, y, z]`, including the normalization.
pub fn rotmat_grad_to_quat(q: &Quat, g: &Mat3) -> [f64; 4] {
    let n = q.norm();
    let [w, x, y, z] = quat_components(q).map(|v| v / n);
    let dw = Mat3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dx = Mat3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x);
    let dy = Mat3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y);
    let dz = Mat3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0);
    let gh = [g.dot(&dw), g.dot(&dx), g.dot(&dy), g.dot(&dz)];
    let qh = [w, x, y, z];
    let proj: f64 = (0..4).map(|m| gh[m] * qh[m]).sum();
    std::array::from_fn(|k| (gh[k] - qh[k] * proj) / n)
}

/// A rigid transform `x -> R(q) x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidMotion {
    #[serde(with = "quat_wxyz")]
    pub q: Quat,
    pub t: Vec3,
}

impl Default for RigidMotion {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidMotion {
    pub fn identity() -> Self {
        RigidMotion {
            q: quat_identity(),
            t: Vec3::zeros(),
        }
    }

    pub fn new(q: Quat, t: Vec3) -> Result<Self> {
        let n = q.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::InvalidInput("zero-norm quaternion".into()));
        }
        Ok(RigidMotion { q: q / n, t })
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64, t: Vec3) -> Self {
        let uq = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle);
        RigidMotion {
            q: uq.into_inner(),
            t,
        }
    }

    /// Rotation matrix. Falls back to identity for a zero quaternion, which
    /// valid motions never carry.
    pub fn rotation(&self) -> Mat3 {
        quat_to_rotmat(&self.q).unwrap_or_else(|_| Mat3::identity())
    }

    pub fn angle(&self) -> f64 {
        quat_angle(&self.q)
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation() * x + self.t
    }

    pub fn inverse(&self) -> Self {
        let qi = self.q.conjugate() / self.q.norm_squared();
        let r = quat_to_rotmat(&qi).unwrap_or_else(|_| Mat3::identity());
        RigidMotion { q: qi, t: -(r * self.t) }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidMotion) -> Self {
        RigidMotion {
            q: self.q * other.q,
            t: self.rotation() * other.t + self.t,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.t == Vec3::zeros() && self.q == quat_identity()
    }
}

/// One anisotropic Gaussian: geometry, appearance and part-weight logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub center: Vec3,
    #[serde(with = "quat_wxyz")]
    pub rot: Quat,
    pub scale: Vec3,
    pub opacity: f64,
    pub color: Vec3,
    pub logits: Vec<f64>,
}

impl Primitive {
    pub fn validate(&self) -> Result<()> {
        if (self.rot.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("primitive rotation not unit".into()));
        }
        if self.scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidInput("primitive scale must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::InvalidInput("opacity outside [0, 1]".into()));
        }
        Ok(())
    }

    /// `Σ = R S Sᵀ Rᵀ`.
    pub fn covariance(&self) -> Mat3 {
        let r = quat_to_rotmat(&self.rot).unwrap_or_else(|_| Mat3::identity());
        let s = Mat3::from_diagonal(&self.scale);
        r * s * s.transpose() * r.transpose()
    }
}

/// Rigidly moves a primitive: `μ' = Rμ + t`, `rot' = q ⊗ rot` (so `Σ' = RΣRᵀ`).
pub fn apply_motion(p: &Primitive, m: &RigidMotion) -> Primitive {
    if m.is_identity() {
        return p.clone();
    }
    let mut out = p.clone();
    out.center = m.rotation() * p.center + m.t;
    let r = m.q * p.rot;
    out.rot = r / r.norm();
    out
}

/// Result of projecting a world point into a camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: Vec2,
    pub depth: f64,
}

/// Pinhole camera: intrinsics `K` and world-to-camera extrinsics `E`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraFile", into = "CameraFile")]
pub struct Camera {
    k: Mat3,
    k_inv: Mat3,
    rot: Mat3,
    trans: Vec3,
    pub width: usize,
    pub height: usize,
}

/// On-disk camera layout: row-major nested arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraFile {
    pub width: usize,
    pub height: usize,
    pub intrinsics: [[f64; 3]; 3],
    pub extrinsics: [[f64; 4]; 4],
}

impl TryFrom<CameraFile> for Camera {
    type Error = Error;
    fn try_from(f: CameraFile) -> Result<Camera> {
        let k = Mat3::from_fn(|r, c| f.intrinsics[r][c]);
        let e = Matrix4::from_fn(|r, c| f.extrinsics[r][c]);
        Camera::new(k, e, f.width, f.height)
    }
}

impl From<Camera> for CameraFile {
    fn from(c: Camera) -> CameraFile {
        let e = c.extrinsics();
        CameraFile {
            width: c.width,
            height: c.height,
            intrinsics: std::array::from_fn(|r| std::array::from_fn(|col| c.k[(r, col)])),
            extrinsics: std::array::from_fn(|r| std::array::from_fn(|col| e[(r, col)])),
        }
    }
}

impl Camera {
    pub fn new(k: Mat3, extrinsics: Matrix4<f64>, width: usize, height: usize) -> Result<Self> {
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::InvalidInput("intrinsics must be upper triangular with K[2][2] = 1".into()));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        let rot: Mat3 = extrinsics.fixed_view::<3, 3>(0, 0).into();
        let trans: Vec3 = extrinsics.fixed_view::<3, 1>(0, 3).into();
        let ortho = (rot * rot.transpose() - Mat3::identity()).abs().max();
        if ortho > 1e-6 || (rot.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput("extrinsic rotation block is not a rotation".into()));
        }
        let last = extrinsics.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(Error::InvalidInput("extrinsics last row must be (0,0,0,1)".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("camera image must be non-empty".into()));
        }
        let k_inv = k.try_inverse().expect("triangular with positive diagonal");
        Ok(Camera {
            k,
            k_inv,
            rot,
            trans,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`, world `+y` up in the image.
    pub fn look_at(eye: &Vec3, target: &Vec3, fx: f64, width: usize, height: usize) -> Result<Self> {
        let f = (target - eye).normalize();
        let mut x = f.cross(&Vec3::y());
        if x.norm() < 1e-9 {
            x = f.cross(&Vec3::z());
        }
        let x = x.normalize();
        let y = f.cross(&x);
        let rot = Mat3::from_rows(&[x.transpose(), y.transpose(), f.transpose()]);
        let t = -(rot * eye);
        let mut e = Matrix4::identity();
        e.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        e.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        let k = Mat3::new(
            fx,
            0.0,
            (width as f64 - 1.0) / 2.0,
            0.0,
            fx,
            (height as f64 - 1.0) / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Camera::new(k, e, width, height)
    }

    pub fn intrinsics(&self) -> &Mat3 {
        &self.k
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rot
    }

    pub fn translation(&self) -> &Vec3 {
        &self.trans
    }

    pub fn extrinsics(&self) -> Matrix4<f64> {
        let mut e = Matrix4::identity();
        e.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rot);
        e.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.trans);
        e
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rot.transpose() * self.trans)
    }

    #[inline]
    pub fn to_camera(&self, x: &Vec3) -> Vec3 {
        self.rot * x + self.trans
    }

    /// Projects a world point. Points with camera depth `<= 1e-6` are not
    /// visible.
    pub fn project(&self, x: &Vec3) -> Option<Projection> {
        let xc = self.to_camera(x);
        if !(xc.z > 1e-6) {
            return None;
        }
        let h = self.k * xc;
        Some(Projection {
            pixel: Vec2::new(h.x / h.z, h.y / h.z),
            depth: xc.z,
        })
    }

    /// Pixel position and depth of a camera-space point together with the
    /// Jacobian rows `d(u, v, z)/d(x_c)`.
    #[inline]
    pub(crate) fn project_camera_jac(&self, xc: &Vec3) -> (f64, f64, [Vec3; 2]) {
        let k = &self.k;
        let iz = 1.0 / xc.z;
        let (a, b) = (xc.x * iz, xc.y * iz);
        let u = k[(0, 0)] * a + k[(0, 1)] * b + k[(0, 2)];
        let v = k[(1, 1)] * b + k[(1, 2)];
        // da/dxc = (1/z, 0, -x/z^2), db/dxc = (0, 1/z, -y/z^2)
        let da = Vec3::new(iz, 0.0, -a * iz);
        let db = Vec3::new(0.0, iz, -b * iz);
        let du = da * k[(0, 0)] + db * k[(0, 1)];
        let dv = db * k[(1, 1)];
        (u, v, [du, dv])
    }

    /// World point whose projection is `(pixel, depth)`.
    pub fn backproject(&self, pixel: &Vec2, depth: f64) -> Result<Vec3> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::InvalidInput(format!("non-positive depth {depth}")));
        }
        let ray = self.k_inv * Vec3::new(pixel.x, pixel.y, 1.0);
        let xc = ray * depth;
        Ok(self.rot.transpose() * (xc - self.trans))
    }

    pub fn in_image(&self, pixel: &Vec2) -> bool {
        pixel.x >= -0.5
            && pixel.y >= -0.5
            && pixel.x < self.width as f64 - 0.5
            && pixel.y < self.height as f64 - 0.5
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

impl std::fmt::Display for JointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            JointKind::Revolute => f.write_str("revolute"),
            JointKind::Prismatic => f.write_str("prismatic"),
        }
    }
}

/// A decomposed 1-DoF joint. `magnitude` is radians (revolute) or meters
/// (prismatic) and is never negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    pub kind: JointKind,
    pub axis_dir: Vec3,
    pub axis_origin: Option<Vec3>,
    pub magnitude: f64,
}

impl JointParams {
    pub fn revolute(axis_dir: Vec3, axis_origin: Vec3, angle: f64) -> Self {
        JointParams {
            kind: JointKind::Revolute,
            axis_dir: axis_dir.normalize(),
            axis_origin: Some(axis_origin),
            magnitude: angle,
        }
    }

    pub fn prismatic(axis_dir: Vec3, distance: f64) -> Self {
        JointParams {
            kind: JointKind::Prismatic,
            axis_dir: axis_dir.normalize(),
            axis_origin: None,
            magnitude: distance,
        }
    }

    /// The rigid motion this joint produces.
    pub fn to_motion(&self) -> RigidMotion {
        compose_joint(self)
    }
}

/// Builds the rigid motion of a joint.
pub fn compose_joint(j: &JointParams) -> RigidMotion {
    match j.kind {
        JointKind::Revolute => {
            let m = RigidMotion::from_axis_angle(&j.axis_dir, j.magnitude, Vec3::zeros());
            let o = j.axis_origin.unwrap_or_else(Vec3::zeros);
            RigidMotion {
                q: m.q,
                t: (Mat3::identity() - m.rotation()) * o,
            }
        }
        JointKind::Prismatic => RigidMotion {
            q: quat_identity(),
            t: j.axis_dir.normalize() * j.magnitude,
        },
    }
}

/// Interprets a rigid motion as a revolute or prismatic joint.
///
/// Without a hint, rotations above `prismatic_threshold` radians are
/// revolute. The revolute origin is the point on the axis closest to the
/// world origin (minimum-norm solution of `(I - R) o = t`).
pub fn decompose_joint(m: &RigidMotion, kind_hint: Option<JointKind>, prismatic_threshold: f64) -> Result<JointParams> {
    let q = m.q / m.q.norm();
    // canonical hemisphere, so the angle lands in [0, pi]
    let q = if q.w < 0.0 { -q } else { q };
    let v = Vec3::new(q.i, q.j, q.k);
    let theta = 2.0 * v.norm().atan2(q.w);
    let tn = m.t.norm();
    if theta < 1e-6 && tn < 1e-9 {
        return Err(Error::DegenerateJoint("motion is the identity".into()));
    }
    let kind = kind_hint.unwrap_or(if theta > prismatic_threshold {
        JointKind::Revolute
    } else {
        JointKind::Prismatic
    });
    match kind {
        JointKind::Revolute => {
            if theta < 1e-6 {
                return Err(Error::DegenerateJoint("revolute joint without rotation".into()));
            }
            let axis = v / v.norm();
            let t_perp = m.t - axis * axis.dot(&m.t);
            let cot_half = 1.0 / (theta / 2.0).tan();
            let origin = (t_perp + axis.cross(&t_perp) * cot_half) * 0.5;
            Ok(JointParams {
                kind,
                axis_dir: axis,
                axis_origin: Some(origin),
                magnitude: theta,
            })
        }
        JointKind::Prismatic => {
            if tn < 1e-9 {
                return Err(Error::DegenerateJoint("prismatic joint without translation".into()));
            }
            Ok(JointParams::prismatic(m.t / tn, tn))
        }
    }
}

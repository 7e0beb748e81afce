//! Rotation and rigid-transform algebra.
//!
//! Conventions used throughout the crate:
//!
//! * quaternions are stored w-first, `(w, x, y, z)`, and compose with the
//!   Hamilton product; they act on vectors as active rotations;
//! * the logarithm picks the representative with `w >= 0`, so rotation
//!   vectors always have magnitude in `[0, pi]`;
//! * rotation matrices act on column vectors, `R * v`.
//!
//! The geodesic loss `4 sin^2(dtheta / 2)` is evaluated from the vector part
//! of the relative quaternion, which is algebraically identical to
//! `4 (1 - <q1, q2>^2)` for unit quaternions but exact (zero) for equal or
//! antipodal inputs.

use std::ops::{Mul, Neg};

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

/// Below this angle the exp map and the logarithm switch to Taylor forms.
pub const SMALL_ANGLE: f64 = 1e-6;

/// The second Jacobian coefficient `((a/2) cos(a/2) - sin(a/2)) / a^3` loses
/// all precision far above `SMALL_ANGLE`, so it gets its own series cut-off.
const JACOBIAN_SERIES_ANGLE: f64 = 5e-2;

/// Tolerance on `|q|^2 - 1` accepted by [`UnitQuaternion::from_wxyz`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// A unit quaternion `(w, x, y, z)`.
///
/// `q` and `-q` denote the same rotation; use [`UnitQuaternion::same_rotation`]
/// (or [`geodesic_angle`]) rather than `==` when comparing rotations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    /// Normalizes an arbitrary non-zero quaternion.
    pub fn new_normalize(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::Domain(format!(
                "cannot normalize quaternion ({w}, {x}, {y}, {z})"
            )));
        }
        Ok(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Accepts components that are already unit within [`UNIT_TOLERANCE`].
    ///
    /// Components that are unit to within `1e-12` are kept bit-for-bit, which
    /// makes file round trips byte stable.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n2 = w * w + x * x + y * y + z * z;
        if !n2.is_finite() || (n2 - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Domain(format!(
                "quaternion ({w}, {x}, {y}, {z}) is not unit (|q|^2 = {n2})"
            )));
        }
        if (n2 - 1.0).abs() <= 1e-12 {
            Ok(Self { w, x, y, z })
        } else {
            Self::new_normalize(w, x, y, z)
        }
    }

    pub(crate) fn normalize_unchecked(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
    }

    #[inline]
    pub fn w(&self) -> f64 {
        self.w
    }
    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }
    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }
    #[inline]
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Squared norm; 1 up to rounding.
    pub fn norm_squared(&self) -> f64 {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    /// Exponential map of a rotation vector. The caller guarantees finiteness.
    pub fn exp(r: &Vector3<f64>) -> Self {
        let angle = r.norm();
        let half = 0.5 * angle;
        let s = if angle < SMALL_ANGLE {
            0.5 - angle * angle / 48.0
        } else {
            half.sin() / angle
        };
        Self::normalize_unchecked(half.cos(), s * r.x, s * r.y, s * r.z)
    }

    /// The exp map together with its 4x3 Jacobian `dq/dr` (rows w, x, y, z).
    pub fn exp_with_jacobian(r: &Vector3<f64>) -> (Self, [[f64; 3]; 4]) {
        let angle = r.norm();
        let half = 0.5 * angle;
        let a2 = angle * angle;
        let s = if angle < SMALL_ANGLE {
            0.5 - a2 / 48.0
        } else {
            half.sin() / angle
        };
        // c = (ds/da) / a
        let c = if angle < JACOBIAN_SERIES_ANGLE {
            -1.0 / 24.0 + a2 / 960.0 - a2 * a2 / 107_520.0 + a2 * a2 * a2 / 23_224_320.0
        } else {
            (half * half.cos() - half.sin()) / (a2 * angle)
        };
        let q = Self::normalize_unchecked(half.cos(), s * r.x, s * r.y, s * r.z);
        let rv = [r.x, r.y, r.z];
        let mut jac = [[0.0; 3]; 4];
        for k in 0..3 {
            jac[0][k] = -0.5 * s * rv[k];
        }
        for i in 0..3 {
            for k in 0..3 {
                jac[i + 1][k] = c * rv[i] * rv[k] + if i == k { s } else { 0.0 };
            }
        }
        (q, jac)
    }

    /// Logarithm map with `w >= 0` canonicalization; magnitude in `[0, pi]`.
    pub fn log(&self) -> AxisAngle {
        let (w, x, y, z) = if self.w < 0.0 {
            (-self.w, -self.x, -self.y, -self.z)
        } else {
            (self.w, self.x, self.y, self.z)
        };
        let v = (x * x + y * y + z * z).sqrt();
        let scale = if v < SMALL_ANGLE {
            // 2 atan(v / w) / v ~ (2 / w) (1 - v^2 / (3 w^2))
            2.0 / w * (1.0 - v * v / (3.0 * w * w))
        } else {
            2.0 * v.atan2(w) / v
        };
        AxisAngle(Vector3::new(scale * x, scale * y, scale * z))
    }

    pub fn conjugate(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Four-dimensional inner product `<self, other>`.
    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Raw Hamilton product without renormalization.
    ///
    /// Terms are grouped pairwise so that `conj(q) * q` and `conj(q) * -q`
    /// have an exactly zero vector part.
    #[inline]
    fn hamilton(a: &Self, b: &Self) -> [f64; 4] {
        [
            (a.w * b.w - a.x * b.x) - (a.y * b.y + a.z * b.z),
            (a.w * b.x + a.x * b.w) + (a.y * b.z - a.z * b.y),
            (a.w * b.y + a.y * b.w) + (a.z * b.x - a.x * b.z),
            (a.w * b.z + a.z * b.w) + (a.x * b.y - a.y * b.x),
        ]
    }

    /// Relative rotation vector part and scalar part of `conj(self) * other`.
    fn relative(&self, other: &Self) -> (f64, f64) {
        let [w, x, y, z] = Self::hamilton(&self.conjugate(), other);
        (w, x * x + y * y + z * z)
    }

    /// Rotates a vector.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = self.vector();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    /// Representative with `w >= 0`.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            -*self
        } else {
            *self
        }
    }

    /// True when both quaternions denote the same rotation within `tol` radians.
    pub fn same_rotation(&self, other: &Self, tol: f64) -> bool {
        geodesic_angle(self, other) <= tol
    }

    pub fn to_rotation_matrix(&self) -> RotationMatrix {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        RotationMatrix(Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }

    /// Shepperd's method; the result is canonicalized to `w >= 0`.
    pub fn from_rotation_matrix(r: &RotationMatrix) -> Self {
        let m = &r.0;
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > m[(0, 0)].max(m[(1, 1)]).max(m[(2, 2)]) {
            let s = 2.0 * (1.0 + trace).sqrt();
            [
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            ]
        } else if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            [
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            ]
        } else if m[(1, 1)] >= m[(2, 2)] {
            let s = 2.0 * (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt();
            [
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            ]
        } else {
            let s = 2.0 * (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt();
            [
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            ]
        };
        Self::normalize_unchecked(q[0], q[1], q[2], q[3]).canonical()
    }

    /// Spherical linear interpolation along the shorter arc.
    pub fn slerp(&self, other: &Self, t: f64) -> Self {
        if t == 0.0 {
            return *self;
        }
        let mut b = *other;
        let mut d = self.dot(&b);
        if d < 0.0 {
            b = -b;
            d = -d;
        }
        if t == 1.0 {
            return b;
        }
        let (ka, kb) = if d > 1.0 - 1e-12 {
            (1.0 - t, t)
        } else {
            let omega = d.min(1.0).acos();
            let so = omega.sin();
            (((1.0 - t) * omega).sin() / so, (t * omega).sin() / so)
        };
        Self::normalize_unchecked(
            ka * self.w + kb * b.w,
            ka * self.x + kb * b.x,
            ka * self.y + kb * b.y,
            ka * self.z + kb * b.z,
        )
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    fn mul(self, rhs: UnitQuaternion) -> UnitQuaternion {
        let [w, x, y, z] = UnitQuaternion::hamilton(&self, &rhs);
        UnitQuaternion::normalize_unchecked(w, x, y, z)
    }
}

impl Neg for UnitQuaternion {
    type Output = UnitQuaternion;

    fn neg(self) -> UnitQuaternion {
        UnitQuaternion {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

/// Rotation vector `alpha * n`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.0.x, self.0.y, self.0.z]
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Equivalent rotation vector with magnitude in `[0, pi]`.
    pub fn canonicalized(&self) -> Self {
        UnitQuaternion::exp(&self.0).log()
    }
}

impl From<[f64; 3]> for AxisAngle {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// A proper rotation matrix (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl Default for RotationMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and `det = +1` within `1e-9`.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if !err.is_finite()
            || err > ORTHONORMAL_TOLERANCE
            || (det - 1.0).abs() > ORTHONORMAL_TOLERANCE
        {
            return Err(Error::Domain(format!(
                "matrix is not a rotation (orthonormality error {err:e}, det {det})"
            )));
        }
        Ok(Self(m))
    }

    pub fn from_columns(x: Vector3<f64>, y: Vector3<f64>, z: Vector3<f64>) -> Result<Self> {
        Self::from_matrix(Matrix3::from_columns(&[x, y, z]))
    }

    /// Row-major nested arrays.
    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_fn(|i, j| rows[i][j]))
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn to_quaternion(&self) -> UnitQuaternion {
        UnitQuaternion::from_rotation_matrix(self)
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

impl From<UnitQuaternion> for RotationMatrix {
    fn from(q: UnitQuaternion) -> Self {
        q.to_rotation_matrix()
    }
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Se3Transform {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl Se3Transform {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(RotationMatrix::identity(), t)
    }

    pub fn from_quaternion(q: &UnitQuaternion, t: Vector3<f64>) -> Self {
        Self::new(q.to_rotation_matrix(), t)
    }

    pub fn compose(&self, other: &Se3Transform) -> Se3Transform {
        se3_compose(self, other)
    }

    pub fn inverse(&self) -> Se3Transform {
        se3_inverse(self)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn quaternion(&self) -> UnitQuaternion {
        self.rotation.to_quaternion()
    }
}

/// Exp map. Fails on non-finite input.
pub fn quat_from_axis_angle(r: &AxisAngle) -> Result<UnitQuaternion> {
    if !r.is_finite() {
        return Err(Error::Domain(format!(
            "non-finite rotation vector {:?}",
            r.0
        )));
    }
    Ok(UnitQuaternion::exp(&r.0))
}

/// Log map of a quaternion given by raw components (validated to be unit).
pub fn quat_log(q: &UnitQuaternion) -> AxisAngle {
    q.log()
}

pub fn quat_mul(a: &UnitQuaternion, b: &UnitQuaternion) -> UnitQuaternion {
    *a * *b
}

pub fn quat_conjugate(q: &UnitQuaternion) -> UnitQuaternion {
    q.conjugate()
}

/// Minimal rotation angle between two orientations, in `[0, pi]`.
///
/// Computed as `2 atan2(|v|, |w|)` of the relative quaternion, which equals
/// `2 acos(|<q1, q2>|)` but keeps full precision near zero.
pub fn geodesic_angle(q1: &UnitQuaternion, q2: &UnitQuaternion) -> f64 {
    let (w, v2) = q1.relative(q2);
    2.0 * v2.sqrt().atan2(w.abs())
}

/// `4 sin^2(dtheta / 2) = 4 (1 - <q1, q2>^2)`, in `[0, 4]`.
pub fn geodesic_loss(q1: &UnitQuaternion, q2: &UnitQuaternion) -> f64 {
    let (w, v2) = q1.relative(q2);
    let n2 = w * w + v2;
    (4.0 * v2 / n2).clamp(0.0, 4.0)
}

/// Loss and gradient with respect to a predicted rotation vector.
pub fn geodesic_loss_and_grad(
    r_pred: &Vector3<f64>,
    q_target: &UnitQuaternion,
) -> (f64, Vector3<f64>) {
    let (q, jac) = UnitQuaternion::exp_with_jacobian(r_pred);
    let d = q.dot(q_target);
    let t = q_target.to_array();
    let mut g = Vector3::zeros();
    for k in 0..3 {
        let mut jt = 0.0;
        for (row, tv) in jac.iter().zip(t.iter()) {
            jt += row[k] * tv;
        }
        g[k] = -8.0 * d * jt;
    }
    (geodesic_loss(&q, q_target), g)
}

/// `dL/dr_pred` of `geodesic_loss(exp(r_pred), q_target)`.
pub fn geodesic_loss_grad(r_pred: &AxisAngle, q_target: &UnitQuaternion) -> Vector3<f64> {
    geodesic_loss_and_grad(&r_pred.0, q_target).1
}

pub fn se3_compose(a: &Se3Transform, b: &Se3Transform) -> Se3Transform {
    Se3Transform {
        rotation: RotationMatrix(a.rotation.0 * b.rotation.0),
        translation: a.rotation.0 * b.translation + a.translation,
    }
}

pub fn se3_inverse(a: &Se3Transform) -> Se3Transform {
    let rt = a.rotation.0.transpose();
    Se3Transform {
        rotation: RotationMatrix(rt),
        translation: -(rt * a.translation),
    }
}

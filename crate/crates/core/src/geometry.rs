//! Rigid transforms, unit rays and the 6-dof pose increment used by the
//! optimizer.
//!
//! Poses map target-frame points into the camera frame. Increments are
//! applied on the left: `retract(p, δ) = Exp(δ) ∘ p`, where `Exp` maps the
//! first three components through the SO(3) exponential and adds the last
//! three as a translation.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Point in the target frame (meters) or a direction in the camera frame.
pub type Point3 = Vector3<f64>;
/// Image measurement `(u, v)` in pixels.
pub type Pixel = Vector2<f64>;
/// `[ω; v]`: axis-angle rotation (radians) followed by translation (meters).
pub type PoseTangent = Vector6<f64>;

/// Re-orthonormalize the rotation after this many retractions.
const REORTHONORMALIZE_EVERY: u32 = 50;

/// Unit-norm direction in the camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray(Vector3<f64>);

impl Ray {
    /// Normalizes `v`; returns `None` for a zero or non-finite vector.
    pub fn new(v: Vector3<f64>) -> Option<Self> {
        let n = v.norm();
        if n > 0.0 && n.is_finite() {
            Some(Ray(v / n))
        } else {
            None
        }
    }

    pub fn dir(&self) -> &Vector3<f64> {
        &self.0
    }

    /// Angle to `other` in radians (robust for tiny angles).
    pub fn angle_to(&self, other: &Vector3<f64>) -> f64 {
        let o = other.normalize();
        self.0.cross(&o).norm().atan2(self.0.dot(&o))
    }
}

/// Rigid transform target frame → camera frame.
#[derive(Clone, Copy, Debug)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    retractions: u32,
}

impl PartialEq for Pose {
    fn eq(&self, other: &Self) -> bool {
        self.rotation == other.rotation && self.translation == other.translation
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
            retractions: 0,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_axis_angle(omega: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(so3_exp(&omega), translation)
    }

    /// `R·x + t`.
    pub fn apply(&self, x: &Point3) -> Point3 {
        self.rotation * x + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Left-multiplicative update `Exp(δ) ∘ self`.
    pub fn retract(&self, delta: &PoseTangent) -> Pose {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let v = Vector3::new(delta[3], delta[4], delta[5]);
        let dr = so3_exp(&omega);
        let mut rotation = dr * self.rotation;
        let mut retractions = self.retractions + 1;
        if retractions >= REORTHONORMALIZE_EVERY {
            rotation = nearest_rotation(&rotation);
            retractions = 0;
        }
        Pose {
            rotation,
            translation: dr * self.translation + v,
            retractions,
        }
    }

    /// Increment `δ` with `other.retract(δ) == self` (inverse of [`Pose::retract`]).
    pub fn local(&self, other: &Pose) -> PoseTangent {
        let dr = self.rotation * other.rotation.transpose();
        let omega = so3_log(&dr);
        let v = self.translation - dr * other.translation;
        PoseTangent::new(omega[0], omega[1], omega[2], v[0], v[1], v[2])
    }

    /// Row-major rotation followed by the translation.
    pub fn to_array(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[0],
            t[1],
            t[2],
        ]
    }

    pub fn from_array(a: &[f64; 12]) -> Pose {
        Pose::new(
            Matrix3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]),
            Vector3::new(a[9], a[10], a[11]),
        )
    }

    /// Largest deviation of `RᵀR` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 12]>::deserialize(d)?;
        Ok(Pose::from_array(&a))
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Rodrigues' formula.
pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let rot = Rotation3::from_matrix_unchecked(*r);
    rot.scaled_axis()
}

/// Closest rotation in Frobenius norm (SVD projection, det = +1).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

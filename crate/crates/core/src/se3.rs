//! Rigid transforms and the se(3) exponential / logarithm.
//!
//! Twists are ordered `(ω, v)`: rotational part first (rad), translational part
//! second (m).

use nalgebra::{Matrix3, Matrix4, Point3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn invert(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Orthonormality and orientation residuals: `(‖RᵀR − I‖_max, |det R − 1|)`.
    pub fn orthonormality_error(&self) -> (f64, f64) {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        (e, (self.rotation.determinant() - 1.0).abs())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let (o, d) = self.orthonormality_error();
        o <= tol && d <= tol && self.translation.iter().all(|v| v.is_finite())
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn log(&self) -> Vector6<f64> {
        log_twist(self)
    }
}

/// Rodrigues coefficients `(sinθ/θ, (1−cosθ)/θ², (θ−sinθ)/θ³)`, Taylor-expanded near zero.
fn coefficients(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    if theta < 1e-4 {
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    }
}

pub fn exp_twist(nu: &Vector6<f64>) -> RigidTransform {
    let w = Vector3::new(nu[0], nu[1], nu[2]);
    let v = Vector3::new(nu[3], nu[4], nu[5]);
    let theta = w.norm();
    let (a, b, c) = coefficients(theta);
    let wx = hat(&w);
    let wx2 = wx * wx;
    let rotation = Matrix3::identity() + wx * a + wx2 * b;
    let left_jacobian = Matrix3::identity() + wx * b + wx2 * c;
    // One Newton step of the polar iteration removes residual rounding drift.
    let rotation = rotation * (Matrix3::identity() * 3.0 - rotation.transpose() * rotation) * 0.5;
    RigidTransform { rotation, translation: left_jacobian * v }
}

pub fn log_twist(x: &RigidTransform) -> Vector6<f64> {
    let r = &x.rotation;
    let theta = x.angle();
    let w = if theta < 1e-10 {
        Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5
    } else if std::f64::consts::PI - theta < 1e-6 {
        // Near π the skew part vanishes; recover the axis from the symmetric part.
        let b = (r + Matrix3::identity()) * 0.5;
        let (i, _) = (0..3).map(|i| (i, b[(i, i)])).fold((0, f64::MIN), |acc, e| if e.1 > acc.1 { e } else { acc });
        let mut axis = b.column(i).into_owned();
        axis /= axis.norm();
        axis * theta
    } else {
        let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
        s * (theta / (2.0 * theta.sin()))
    };
    let th = w.norm();
    let (_, b, c) = coefficients(th);
    let wx = hat(&w);
    let left_jacobian = Matrix3::identity() + wx * b + wx * wx * c;
    let v = left_jacobian.try_inverse().unwrap_or_else(Matrix3::identity) * x.translation;
    Vector6::new(w.x, w.y, w.z, v.x, v.y, v.z)
}

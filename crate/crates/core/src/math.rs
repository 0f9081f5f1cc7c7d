//! Small numeric helpers shared across the crate: quaternions, scalar
//! activations, and seeded RNG construction.
//!
//! Quaternions are stored (w, x, y, z). Rotation matrices use the unit
//! polynomial form without dividing by the norm, so the analytic partials in
//! [`Quat::rotation_matrix_partials`] treat the four components as free
//! variables; callers that need a true rotation normalize first.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A quaternion in (w, x, y, z) component order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Returns the unit quaternion with the same direction. The zero
    /// quaternion has no direction; callers guard against it via norm bands
    /// before getting here, so this falls back to identity.
    pub fn normalized(self) -> Quat {
        let n = self.norm();
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    /// Matrix H with H * vec(p) = vec(self * p), components ordered (w, x, y, z).
    pub fn left_mul_matrix(self) -> Matrix4<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, -z, y, //
            y, z, w, -x, //
            z, -y, x, w,
        )
    }

    /// Unit-polynomial rotation matrix. Exact only for unit quaternions; the
    /// unnormalized form is what the analytic partials differentiate.
    pub fn rotation_matrix(self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
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

    /// Partials of [`Self::rotation_matrix`] with respect to (w, x, y, z),
    /// treating the components as free variables.
    pub fn rotation_matrix_partials(self) -> [Matrix3<f64>; 4] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let dw = Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
        let dx = Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
        let dy = Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
        let dz = Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;
        [dw, dx, dy, dz]
    }

    pub fn rotate(self, v: Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * v
    }

    /// Quaternion for a rotation of `angle` radians about `axis` (need not be
    /// unit length; the zero axis yields identity).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Quat {
        let n = axis.norm();
        if n < 1e-300 {
            return Quat::IDENTITY;
        }
        let half = 0.5 * angle;
        let s = half.sin() / n;
        Quat::new(half.cos(), axis.x * s, axis.y * s, axis.z * s)
    }

    /// Recovers the quaternion of a proper rotation matrix (Shepperd's
    /// method: branch on the largest diagonal combination for stability).
    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Quat {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quat::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.normalized()
    }

    /// Quaternion for the axis-angle vector `r` (angle = |r|).
    pub fn from_rotation_vector(r: Vector3<f64>) -> Quat {
        let theta = r.norm();
        if theta < 1e-12 {
            // sin(t/2)/t -> 1/2 as t -> 0; first-order form keeps gradichecks smooth.
            return Quat::new(1.0, 0.5 * r.x, 0.5 * r.y, 0.5 * r.z).normalized();
        }
        Quat::from_axis_angle(r / theta, theta)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// Hamilton product.
impl std::ops::Mul for Quat {
    type Output = Quat;

    fn mul(self, r: Quat) -> Quat {
        Quat::new(
            self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        )
    }
}

/// Jacobian of q / |q| with respect to q, at the unnormalized value `raw`.
pub fn normalize_jacobian(raw: Quat) -> Matrix4<f64> {
    let n = raw.norm();
    let v = Vector4::new(raw.w, raw.x, raw.y, raw.z) / n;
    (Matrix4::identity() - v * v.transpose()) / n
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// d sigmoid / dx expressed through the output value.
pub fn sigmoid_grad_from_output(s: f64) -> f64 {
    s * (1.0 - s)
}

/// Deterministic RNG for a seed; every stochastic choice in the crate goes
/// through this so runs reproduce bit for bit.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

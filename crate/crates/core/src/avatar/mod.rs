//! Canonical Gaussian avatar representation and the residual deformation
//! pipeline that turns it into a world-space, expression-aware set.

mod deform;
pub mod fields;

pub use deform::{assemble_avatar, deform_geometry, predict_colors, to_world, DeformedGeometry};
pub use fields::{Attribute, DriverKind, LinearBlend, Rbf, ResidualField, ResidualFieldBank};

use crate::control::SplitReport;
use crate::error::{Error, Result};
use crate::math::{sigmoid, Quat};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Band inside which a rotation is silently renormalized instead of
/// rejected.
pub const ROTATION_REPAIR_BAND: f64 = 1e-3;

/// The neutral avatar: per-Gaussian position, feature vector, rotation,
/// anisotropic scale (stored as logs), and opacity (stored as a logit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSet {
    pub positions: Vec<Vector3<f64>>,
    /// Flat N * d_f array, Gaussian-major.
    pub features: Vec<f64>,
    pub d_f: usize,
    pub rotations: Vec<Quat>,
    pub scale_logs: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.d_f..(i + 1) * self.d_f]
    }

    pub fn feature_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.features[i * self.d_f..(i + 1) * self.d_f]
    }

    pub fn decoded_scale(&self, i: usize) -> Vector3<f64> {
        self.scale_logs[i].map(f64::exp)
    }

    pub fn decoded_opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }
}

/// Checks the construction invariants and repairs near-unit rotations.
///
/// Rotations within [`ROTATION_REPAIR_BAND`] of unit norm are renormalized;
/// anything further off (including the zero quaternion) is rejected rather
/// than guessed at.
pub fn validate_neutral_set(mut g: GaussianSet) -> Result<GaussianSet> {
    let n = g.positions.len();
    if n == 0 {
        return Err(Error::invalid("gaussian set must hold at least one gaussian"));
    }
    if g.features.len() != n * g.d_f {
        return Err(Error::ShapeMismatch {
            context: "features length",
            expected: n * g.d_f,
            actual: g.features.len(),
        });
    }
    if g.rotations.len() != n {
        return Err(Error::ShapeMismatch {
            context: "rotations length",
            expected: n,
            actual: g.rotations.len(),
        });
    }
    if g.scale_logs.len() != n {
        return Err(Error::ShapeMismatch {
            context: "scale logs length",
            expected: n,
            actual: g.scale_logs.len(),
        });
    }
    if g.opacity_logits.len() != n {
        return Err(Error::ShapeMismatch {
            context: "opacity logits length",
            expected: n,
            actual: g.opacity_logits.len(),
        });
    }

    let finite_v3 = |vs: &[Vector3<f64>]| vs.iter().all(|v| v.x.is_finite() && v.y.is_finite() && v.z.is_finite());
    if !finite_v3(&g.positions) {
        return Err(Error::NonFinite { context: "positions" });
    }
    if !g.features.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "features" });
    }
    if !finite_v3(&g.scale_logs) {
        return Err(Error::NonFinite { context: "scale logs" });
    }
    if !g.opacity_logits.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "opacity logits" });
    }

    for (i, q) in g.rotations.iter_mut().enumerate() {
        if !q.is_finite() {
            return Err(Error::NonFinite { context: "rotations" });
        }
        let norm = q.norm();
        if (norm - 1.0).abs() > ROTATION_REPAIR_BAND {
            return Err(Error::RotationNorm { index: i, norm });
        }
        *q = q.normalized();
    }
    Ok(g)
}

/// Expression code driving the expression-conditioned residual fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpressionParams {
    pub coefficients: Vec<f64>,
}

impl ExpressionParams {
    pub fn zeros(d_exp: usize) -> Self {
        ExpressionParams {
            coefficients: vec![0.0; d_exp],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.coefficients.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "expression coefficients" });
        }
        Ok(())
    }
}

/// Head pose code: axis-angle rotation plus translation, flattened to the
/// 6-vector that drives the pose-conditioned residual fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl PoseParams {
    pub fn zeros() -> Self {
        PoseParams {
            rotation: Vector3::zeros(),
            translation: Vector3::zeros(),
        }
    }

    pub fn driver(&self) -> [f64; 6] {
        [
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite { context: "pose parameters" });
        }
        if self.rotation.norm() >= std::f64::consts::PI {
            return Err(Error::invalid("pose rotation magnitude must be below pi"));
        }
        Ok(())
    }
}

/// World placement of the head: rotate, then translate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Quat,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Quat::IDENTITY,
            translation: Vector3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.is_finite()
            || !(self.translation.x.is_finite() && self.translation.y.is_finite() && self.translation.z.is_finite())
        {
            return Err(Error::NonFinite { context: "rigid transform" });
        }
        if (self.rotation.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::RotationNorm {
                index: 0,
                norm: self.rotation.norm(),
            });
        }
        Ok(())
    }

    pub fn apply_point(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    /// self after other: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: (self.rotation * other.rotation).normalized(),
            translation: self.rotation.rotate(other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let conj = Quat::new(self.rotation.w, -self.rotation.x, -self.rotation.y, -self.rotation.z);
        RigidTransform {
            rotation: conj,
            translation: -(conj.rotate(self.translation)),
        }
    }
}

/// Where an assembled Gaussian came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// Carried over from the neutral set at this source index.
    Source { index: usize },
    /// Produced by splitting the Gaussian at `parent`.
    SplitChild { parent: usize },
}

/// The fully assembled world-space set handed to the renderer: decoded
/// scales and opacities, per-Gaussian colors, and bookkeeping about which
/// entries were controls or split children.
#[derive(Clone, Debug, PartialEq)]
pub struct AssembledAvatar {
    pub positions: Vec<Vector3<f64>>,
    pub colors: Vec<Vector3<f64>>,
    pub rotations: Vec<Quat>,
    /// Decoded, strictly positive per-axis scales.
    pub scales: Vec<Vector3<f64>>,
    /// Decoded opacities in (0, 1).
    pub opacities: Vec<f64>,
    pub provenance: Vec<Provenance>,
    pub control_indices: Vec<usize>,
    pub split: SplitReport,
}

impl AssembledAvatar {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

//! Loss weights and the two elementwise loss primitives shared by both
//! fitting stages.

use crate::error::{Error, Result};
use crate::render::Frame;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Weights of every loss term across both fitting stages. Terms a stage
/// does not use default to zero in that stage's constructor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub rgb: f64,
    pub silhouette: f64,
    pub offset: f64,
    pub landmark: f64,
    pub laplacian: f64,
    pub mesh: f64,
    pub perceptual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::stage1()
    }
}

impl LossWeights {
    /// Geometry-stage weights: full reconstruction, silhouette, offset,
    /// landmark, smoothness, and mesh-prior terms.
    pub fn stage1() -> Self {
        LossWeights {
            rgb: 1.0,
            silhouette: 0.1,
            offset: 0.01,
            landmark: 0.1,
            laplacian: 100.0,
            mesh: 1.0,
            perceptual: 0.0,
        }
    }

    /// Appearance-stage weights: reconstruction plus the patch-based
    /// perceptual proxy.
    pub fn stage2() -> Self {
        LossWeights {
            rgb: 1.0,
            silhouette: 0.0,
            offset: 0.0,
            landmark: 0.0,
            laplacian: 0.0,
            mesh: 0.0,
            perceptual: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.rgb,
            self.silhouette,
            self.offset,
            self.landmark,
            self.laplacian,
            self.mesh,
            self.perceptual,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> LossWeights {
        LossWeights {
            rgb: self.rgb * factor,
            silhouette: self.silhouette * factor,
            offset: self.offset * factor,
            landmark: self.landmark * factor,
            laplacian: self.laplacian * factor,
            mesh: self.mesh * factor,
            perceptual: self.perceptual * factor,
        }
    }
}

/// Mean absolute error over all pixels and channels, with its subgradient
/// with respect to the rendered RGB buffer.
pub fn rgb_loss(rendered: &Frame, target: &Frame) -> Result<(f64, Vec<f64>)> {
    if rendered.width != target.width || rendered.height != target.height {
        return Err(Error::ShapeMismatch {
            context: "rgb loss frame shape",
            expected: target.rgb.len(),
            actual: rendered.rgb.len(),
        });
    }
    let count = rendered.rgb.len() as f64;
    if count == 0.0 {
        return Err(Error::invalid("rgb loss over an empty frame"));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; rendered.rgb.len()];
    for (i, (&r, &t)) in rendered.rgb.iter().zip(&target.rgb).enumerate() {
        let diff = r - t;
        loss += diff.abs();
        grad[i] = if diff > 0.0 {
            1.0 / count
        } else if diff < 0.0 {
            -1.0 / count
        } else {
            0.0
        };
    }
    Ok((loss / count, grad))
}

/// Mean squared norm of the per-Gaussian position residuals, with its
/// gradient. Empty input reports zero.
pub fn offset_loss(residuals: &[Vector3<f64>]) -> (f64, Vec<Vector3<f64>>) {
    if residuals.is_empty() {
        return (0.0, Vec::new());
    }
    let n = residuals.len() as f64;
    let loss = residuals.iter().map(|r| r.norm_squared()).sum::<f64>() / n;
    let grad = residuals.iter().map(|r| r * (2.0 / n)).collect();
    (loss, grad)
}

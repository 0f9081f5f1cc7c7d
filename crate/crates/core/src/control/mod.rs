//! Controllable Gaussian mechanism: pick the Gaussians whose expression
//! displacement exceeds a threshold, spread their motion to nearby
//! non-control Gaussians with normalized Gaussian-kernel weights, and split
//! Gaussians under extreme deformation into two attribute-inheriting
//! children.

mod spatial;
mod split;

pub use spatial::SpatialIndex;
pub use split::{split_gaussians, SplitReport};

use crate::avatar::fields::{Attribute, DriverKind};
use crate::avatar::{ExpressionParams, ResidualFieldBank};
use crate::error::{Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Thresholds, kernel widths, and capacity limits for the control and
/// splitting stages. Distances are in canonical units (head in the unit
/// cube).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// Displacement magnitude above which a Gaussian becomes a control.
    pub tau_control: f64,
    /// Displacement magnitude above which a Gaussian is split.
    pub tau_split: f64,
    /// Neighborhood radius for propagation.
    pub radius_r: f64,
    /// Gaussian kernel width for propagation weights.
    pub sigma: f64,
    /// Hard cap on the total Gaussian count after splitting.
    pub n_max: usize,
    /// Child offset factor, in units of the parent's mean scale.
    pub split_epsilon: f64,
    /// Multiplier applied to child scales.
    pub split_scale_factor: f64,
    /// Whether control propagation runs during assembly.
    pub control_enabled: bool,
    /// Whether displacement-triggered splitting runs.
    pub split_enabled: bool,
    /// Stage-II iterations between persistent split passes.
    pub split_cadence: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            tau_control: 0.3,
            tau_split: 0.2,
            radius_r: 0.05,
            sigma: 0.025,
            n_max: 100_000,
            split_epsilon: 0.25,
            split_scale_factor: 0.8,
            control_enabled: true,
            split_enabled: true,
            split_cadence: 500,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self, current_n: usize) -> Result<()> {
        if self.tau_control <= 0.0 || self.tau_control.is_nan() {
            return Err(Error::invalid("tau_control must be positive"));
        }
        if self.tau_split <= 0.0 || self.tau_split.is_nan() {
            return Err(Error::invalid("tau_split must be positive"));
        }
        if self.radius_r <= 0.0 || self.radius_r.is_nan() {
            return Err(Error::invalid("radius_r must be positive"));
        }
        if self.sigma <= 0.0 || self.sigma.is_nan() {
            return Err(Error::invalid("sigma must be positive"));
        }
        if self.n_max < current_n {
            return Err(Error::invalid(format!(
                "n_max {} is below the current count {current_n}",
                self.n_max
            )));
        }
        if !(self.split_scale_factor > 0.0 && self.split_scale_factor <= 1.0) {
            return Err(Error::invalid("split_scale_factor must be in (0, 1]"));
        }
        if self.split_epsilon < 0.0 || self.split_epsilon.is_nan() {
            return Err(Error::invalid("split_epsilon must be non-negative"));
        }
        Ok(())
    }
}

/// Expression-driven position residual for every Gaussian. The pose field
/// deliberately does not participate; rigid-ish pose motion should not
/// nominate controls.
pub fn expression_displacements(
    positions: &[Vector3<f64>],
    theta: &ExpressionParams,
    bank: &ResidualFieldBank,
) -> Result<Vec<Vector3<f64>>> {
    if theta.coefficients.len() != bank.d_exp() {
        return Err(Error::ShapeMismatch {
            context: "expression dimension",
            expected: bank.d_exp(),
            actual: theta.coefficients.len(),
        });
    }
    bank.check_n(positions.len())?;
    let field = bank.field(Attribute::Position, DriverKind::Expression);
    let mut out = Vec::with_capacity(positions.len());
    for (i, p) in positions.iter().enumerate() {
        let mut res = [0.0; 3];
        field.eval_into(i, &[p.x, p.y, p.z], &theta.coefficients, &mut res);
        out.push(Vector3::new(res[0], res[1], res[2]));
    }
    Ok(out)
}

/// Euclidean magnitude of each Gaussian's expression displacement.
pub fn displacement_magnitudes(
    positions: &[Vector3<f64>],
    theta: &ExpressionParams,
    bank: &ResidualFieldBank,
) -> Result<Vec<f64>> {
    Ok(expression_displacements(positions, theta, bank)?
        .iter()
        .map(Vector3::norm)
        .collect())
}

/// Indices whose displacement strictly exceeds `tau`, ascending.
pub fn select_controls(delta: &[f64], tau: f64) -> Vec<usize> {
    (0..delta.len()).filter(|&i| delta[i] > tau).collect()
}

/// Per-control neighbor lists: strict radius, excluding the control itself
/// and every other control. Controls never receive propagation; they carry
/// their own displacement.
pub fn neighborhoods(
    positions: &[Vector3<f64>],
    controls: &[usize],
    cfg: &ControlConfig,
    idx: &SpatialIndex,
) -> Vec<Vec<usize>> {
    controls
        .iter()
        .map(|&i| {
            idx.query_ball(positions, positions[i], cfg.radius_r)
                .into_iter()
                .filter(|&j| j != i && controls.binary_search(&j).is_err())
                .collect()
        })
        .collect()
}

/// Inverts per-control neighbor lists into an affected-Gaussian view:
/// j -> the ascending list of control indices whose neighborhoods contain j.
pub fn memberships(controls: &[usize], neighborhoods: &[Vec<usize>]) -> BTreeMap<usize, Vec<usize>> {
    let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (slot, &i) in controls.iter().enumerate() {
        for &j in &neighborhoods[slot] {
            out.entry(j).or_default().push(i);
        }
    }
    // Controls are visited in ascending order, so each list is ascending.
    out
}

/// Normalized Gaussian-kernel weights of the controls `c_j` as seen from
/// Gaussian `j`, computed on canonical positions. Weights sum to one.
pub fn propagation_weights(
    positions: &[Vector3<f64>],
    j: usize,
    c_j: &[usize],
    sigma: f64,
) -> Result<Vec<f64>> {
    if c_j.is_empty() {
        return Err(Error::invalid("no controls affect this gaussian"));
    }
    let s2 = sigma * sigma;
    let mut weights: Vec<f64> = c_j
        .iter()
        .map(|&i| (-(positions[j] - positions[i]).norm_squared() / s2).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::NonFinite {
            context: "propagation weights",
        });
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Adds the weighted control displacements onto the already-deformed
/// positions of affected Gaussians. Everything outside the membership map,
/// controls included, passes through untouched.
///
/// `control_disp` is aligned to `controls`; `memberships` values must refer
/// to entries of `controls`.
pub fn propagate(
    base_deformed: &[Vector3<f64>],
    canonical: &[Vector3<f64>],
    controls: &[usize],
    control_disp: &[Vector3<f64>],
    memberships: &BTreeMap<usize, Vec<usize>>,
    sigma: f64,
) -> Result<Vec<Vector3<f64>>> {
    if controls.len() != control_disp.len() {
        return Err(Error::ShapeMismatch {
            context: "control displacement count",
            expected: controls.len(),
            actual: control_disp.len(),
        });
    }
    let mut out = base_deformed.to_vec();
    for (&j, c_j) in memberships {
        if c_j.is_empty() {
            continue;
        }
        let slots: Vec<usize> = c_j
            .iter()
            .map(|&i| {
                controls.binary_search(&i).map_err(|_| {
                    Error::invalid(format!("membership references non-control index {i}"))
                })
            })
            .collect::<Result<_>>()?;
        let weights = propagation_weights(canonical, j, c_j, sigma)?;
        let mut shift = Vector3::zeros();
        for (&slot, &w) in slots.iter().zip(&weights) {
            shift += control_disp[slot] * w;
        }
        out[j] += shift;
    }
    Ok(out)
}

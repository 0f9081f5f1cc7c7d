//! Per-group Adam with bias correction, plus the configuration shared by
//! both fitting stages.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Learning rates per parameter group, Adam moment constants, iteration
/// budgets, and the seed that fixes every stochastic choice of a fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// All ten residual field parameter groups.
    pub lr_fields: f64,
    /// Canonical Gaussian positions.
    pub lr_positions: f64,
    /// Per-Gaussian feature vectors.
    pub lr_features: f64,
    /// Canonical rotations (raw quaternion components).
    pub lr_rotations: f64,
    /// Log-scales.
    pub lr_scales: f64,
    /// Opacity logits.
    pub lr_opacities: f64,
    /// Geometry-stage lattice groups (signed distances and appearance).
    pub lr_stage1: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    /// Surface re-extraction cadence during the geometry stage; 1 means
    /// every iteration.
    pub mesh_every: usize,
    /// Iterations between PSNR snapshots in the trace.
    pub psnr_every: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr_fields: 1e-4,
            lr_positions: 1e-5,
            lr_features: 1e-5,
            lr_rotations: 1e-5,
            lr_scales: 3e-5,
            lr_opacities: 3e-5,
            lr_stage1: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            stage1_iters: 300,
            stage2_iters: 2000,
            mesh_every: 1,
            psnr_every: 100,
            seed: 0,
        }
    }
}

impl OptimConfig {
    /// Learning rates must be finite and non-negative (zero freezes a
    /// group), moment constants inside [0, 1), cadences positive.
    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.lr_fields,
            self.lr_positions,
            self.lr_features,
            self.lr_rotations,
            self.lr_scales,
            self.lr_opacities,
            self.lr_stage1,
        ];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::invalid("learning rates must be finite and non-negative"));
        }
        for b in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid("Adam momentum constants must lie in [0, 1)"));
            }
        }
        if self.epsilon <= 0.0 || self.epsilon.is_nan() {
            return Err(Error::invalid("Adam epsilon must be positive"));
        }
        if self.mesh_every == 0 || self.psnr_every == 0 {
            return Err(Error::invalid("cadence settings must be at least 1"));
        }
        Ok(())
    }
}

/// First and second moment buffers for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> AdamState {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// Appends moment rows for a freshly split-off Gaussian by copying its
    /// parent's rows, so the child starts with the parent's momentum.
    pub fn append_copy(&mut self, parent_start: usize, stride: usize) {
        for k in 0..stride {
            self.m.push(self.m[parent_start + k]);
            self.v.push(self.v[parent_start + k]);
        }
    }
}

/// One bias-corrected Adam update on a flat parameter group. Rejects NaN
/// gradients, naming the group and the step at which they appeared.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &OptimConfig,
    group: &str,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::ShapeMismatch {
            context: "adam buffer length",
            expected: params.len(),
            actual: grads.len().min(state.m.len()),
        });
    }
    if grads.iter().any(|g| g.is_nan()) {
        return Err(Error::NanGradient {
            group: group.to_string(),
            step: state.step as usize,
        });
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::seeded_rng;
    use rand::Rng;

    #[test]
    fn zero_gradient_leaves_everything_unchanged() {
        let cfg = OptimConfig::default();
        let mut params = vec![1.0, -2.5, 0.25];
        let mut state = AdamState::new(3);
        adam_step(&mut params, &[0.0; 3], &mut state, 1e-3, &cfg, "g").unwrap();
        assert_eq!(params, vec![1.0, -2.5, 0.25]);
        assert_eq!(state.m, vec![0.0; 3]);
        assert_eq!(state.v, vec![0.0; 3]);
    }

    #[test]
    fn first_step_is_normalized_gradient_direction() {
        let cfg = OptimConfig::default();
        let lr = 1e-3;
        let grads = [0.5, -3.0, 1e-7];
        let mut params = vec![0.0; 3];
        let mut state = AdamState::new(3);
        adam_step(&mut params, &grads, &mut state, lr, &cfg, "g").unwrap();
        for (p, g) in params.iter().zip(&grads) {
            let expect = -lr * g / (g.abs() + cfg.epsilon);
            assert!((p - expect).abs() < 1e-12, "{p} vs {expect}");
        }
    }

    #[test]
    fn nan_gradient_names_the_group() {
        let cfg = OptimConfig::default();
        let mut params = vec![0.0; 2];
        let mut state = AdamState::new(2);
        let err = adam_step(&mut params, &[0.0, f64::NAN], &mut state, 1e-3, &cfg, "rotations")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("rotations"), "unhelpful message: {msg}");
    }

    #[test]
    fn deterministic_trajectories() {
        let cfg = OptimConfig::default();
        let run = || {
            let mut rng = seeded_rng(42);
            let mut params = vec![0.2, -0.4, 0.6, 0.1];
            let mut state = AdamState::new(4);
            for _ in 0..50 {
                let grads: Vec<f64> =
                    params.iter().map(|p| 2.0 * p + rng.random_range(-0.1..0.1)).collect();
                adam_step(&mut params, &grads, &mut state, 1e-2, &cfg, "g").unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn converges_on_a_quadratic() {
        let cfg = OptimConfig::default();
        let mut params = vec![3.0, -2.0];
        let mut state = AdamState::new(2);
        for _ in 0..4000 {
            let grads: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
            adam_step(&mut params, &grads, &mut state, 1e-2, &cfg, "g").unwrap();
        }
        assert!(params.iter().all(|p| p.abs() < 1e-3), "{params:?}");
    }

    #[test]
    fn moment_copy_on_append() {
        let mut state = AdamState::new(6);
        state.m = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        state.v = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        state.append_copy(3, 3);
        assert_eq!(state.m, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 4.0, 5.0, 6.0]);
        assert_eq!(state.v.len(), 9);
    }

    #[test]
    fn config_validation() {
        OptimConfig::default().validate().unwrap();
        let mut cfg = OptimConfig {
            lr_fields: 0.0,
            ..OptimConfig::default()
        };
        cfg.validate().unwrap();
        cfg.lr_fields = -1.0;
        assert!(cfg.validate().is_err());
        cfg.lr_fields = 1e-4;
        cfg.beta1 = 1.0;
        assert!(cfg.validate().is_err());
        cfg.beta1 = 0.9;
        cfg.mesh_every = 0;
        assert!(cfg.validate().is_err());
    }
}

//! Deformation-triggered splitting: a Gaussian whose displacement exceeds
//! the split threshold is replaced by two children straddling it along the
//! displacement direction.

use super::ControlConfig;
use crate::avatar::GaussianSet;
use crate::error::{Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Record of one split pass: which parents split, where their children
/// landed in the output ordering, and the displacement magnitudes that
/// triggered them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub parents: Vec<usize>,
    /// Per parent: [index of the in-place child, index of the appended child].
    pub children: Vec<[usize; 2]>,
    pub magnitudes: Vec<f64>,
    /// Optimization iteration the pass ran at; 0 outside training.
    pub iteration: u64,
    /// Parents whose displacement direction was numerically zero; their
    /// children were offset along +x instead.
    pub degenerate_parents: Vec<usize>,
}

impl SplitReport {
    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }
}

/// Splits every Gaussian with `delta[i] > tau_split` into two children at
/// x_i +/- split_epsilon * mean_scale_i * unit(direction_i). The first
/// child overwrites the parent slot; the second is appended, parents in
/// ascending order, which keeps the output ordering deterministic. Children
/// keep the parent's features, rotation, and opacity; their scales shrink
/// by the configured factor.
///
/// `directions` normally carries the expression displacement vectors; only
/// the direction is used. A zero direction with a triggering magnitude is
/// resolved along +x and flagged in the report.
///
/// Fails before touching anything if the result would exceed `cfg.n_max`.
pub fn split_gaussians(
    set: &GaussianSet,
    delta: &[f64],
    directions: &[Vector3<f64>],
    cfg: &ControlConfig,
) -> Result<(GaussianSet, SplitReport)> {
    let n = set.len();
    if delta.len() != n {
        return Err(Error::ShapeMismatch {
            context: "displacement magnitudes length",
            expected: n,
            actual: delta.len(),
        });
    }
    if directions.len() != n {
        return Err(Error::ShapeMismatch {
            context: "displacement directions length",
            expected: n,
            actual: directions.len(),
        });
    }

    let triggers: Vec<usize> = (0..n).filter(|&i| delta[i] > cfg.tau_split).collect();
    let new_count = n + triggers.len();
    if new_count > cfg.n_max {
        return Err(Error::SplitBudget {
            requested: new_count,
            cap: cfg.n_max,
        });
    }

    let mut out = set.clone();
    let mut report = SplitReport::default();
    let log_factor = cfg.split_scale_factor.ln();

    for (k, &p) in triggers.iter().enumerate() {
        let dir = directions[p];
        let norm = dir.norm();
        let d_hat = if norm < 1e-12 {
            report.degenerate_parents.push(p);
            Vector3::new(1.0, 0.0, 0.0)
        } else {
            dir / norm
        };
        let mean_scale = set.decoded_scale(p).mean();
        let offset = d_hat * (cfg.split_epsilon * mean_scale);
        let child_scale_logs = set.scale_logs[p] + Vector3::new(log_factor, log_factor, log_factor);

        // First child takes the parent slot.
        out.positions[p] = set.positions[p] - offset;
        out.scale_logs[p] = child_scale_logs;

        // Second child is appended; attributes copied from the parent.
        out.positions.push(set.positions[p] + offset);
        let feat: Vec<f64> = set.feature(p).to_vec();
        out.features.extend_from_slice(&feat);
        out.rotations.push(set.rotations[p]);
        out.scale_logs.push(child_scale_logs);
        out.opacity_logits.push(set.opacity_logits[p]);

        report.parents.push(p);
        report.children.push([p, n + k]);
        report.magnitudes.push(delta[p]);
    }

    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Quat;
    use rand::Rng;

    fn small_set(n: usize) -> GaussianSet {
        let mut rng = crate::math::seeded_rng(99);
        GaussianSet {
            positions: (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                    )
                })
                .collect(),
            features: (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            d_f: 4,
            rotations: (0..n)
                .map(|_| {
                    Quat::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                    .normalized()
                })
                .collect(),
            scale_logs: (0..n)
                .map(|_| Vector3::new(rng.random_range(-4.0..-2.0), rng.random_range(-4.0..-2.0), rng.random_range(-4.0..-2.0)))
                .collect(),
            opacity_logits: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        }
    }

    #[test]
    fn one_trigger_produces_three() {
        let set = small_set(2);
        let delta = [0.25, 0.05];
        let dirs = [Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)];
        let cfg = ControlConfig::default();
        let (out, report) = split_gaussians(&set, &delta, &dirs, &cfg).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(report.parents, vec![0]);
        assert_eq!(report.children, vec![[0, 2]]);
        assert_eq!(report.magnitudes, vec![0.25]);
        // The untriggered Gaussian is untouched.
        assert_eq!(out.positions[1], set.positions[1]);
        assert_eq!(out.scale_logs[1], set.scale_logs[1]);
    }

    #[test]
    fn no_trigger_is_identity() {
        let set = small_set(3);
        let delta = [0.1, 0.0, 0.19];
        let dirs = [Vector3::new(1.0, 0.0, 0.0); 3];
        let (out, report) = split_gaussians(&set, &delta, &dirs, &ControlConfig::default()).unwrap();
        assert_eq!(out, set);
        assert!(report.is_empty());
    }

    #[test]
    fn children_inherit_and_shrink() {
        let set = small_set(4);
        let delta = [0.0, 0.3, 0.0, 0.9];
        let dirs = [
            Vector3::zeros(),
            Vector3::new(0.0, 0.3, 0.0),
            Vector3::zeros(),
            Vector3::new(0.5, 0.5, 0.0),
        ];
        let cfg = ControlConfig::default();
        let (out, report) = split_gaussians(&set, &delta, &dirs, &cfg).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(report.children, vec![[1, 4], [3, 5]]);

        for (&p, &[c1, c2]) in report.parents.iter().zip(&report.children) {
            for c in [c1, c2] {
                assert_eq!(out.feature(c), set.feature(p), "features inherited bitwise");
                assert_eq!(out.rotations[c], set.rotations[p]);
                assert_eq!(out.opacity_logits[c], set.opacity_logits[p]);
                let expected = set.decoded_scale(p) * cfg.split_scale_factor;
                assert!((out.decoded_scale(c) - expected).norm() < 1e-12);
            }
            // Children straddle the parent along the displacement direction.
            let mid = (out.positions[c1] + out.positions[c2]) * 0.5;
            assert!((mid - set.positions[p]).norm() < 1e-12);
            let gap = out.positions[c2] - out.positions[c1];
            let expected_gap = 2.0 * cfg.split_epsilon * set.decoded_scale(p).mean();
            assert!((gap.norm() - expected_gap).abs() < 1e-12);
            let d_hat = dirs[p] / dirs[p].norm();
            assert!((gap.normalize() - d_hat).norm() < 1e-9);
        }
    }

    #[test]
    fn zero_direction_is_flagged_and_offsets_along_x() {
        let set = small_set(1);
        let delta = [0.5];
        let dirs = [Vector3::zeros()];
        let (out, report) = split_gaussians(&set, &delta, &dirs, &ControlConfig::default()).unwrap();
        assert_eq!(report.degenerate_parents, vec![0]);
        let gap = out.positions[1] - out.positions[0];
        assert!(gap.x > 0.0 && gap.y == 0.0 && gap.z == 0.0);
    }

    #[test]
    fn cap_violation_is_total() {
        let set = small_set(3);
        let delta = [0.5, 0.5, 0.0];
        let dirs = [Vector3::new(1.0, 0.0, 0.0); 3];
        let cfg = ControlConfig {
            n_max: 4,
            ..ControlConfig::default()
        };
        match split_gaussians(&set, &delta, &dirs, &cfg) {
            Err(Error::SplitBudget { requested: 5, cap: 4 }) => (),
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn split_count_monotone_in_threshold() {
        let mut rng = crate::math::seeded_rng(17);
        let set = small_set(50);
        let delta: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..0.5)).collect();
        let dirs: Vec<Vector3<f64>> = (0..50)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let mut taus: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..0.6)).collect();
        taus.sort_by(f64::total_cmp);
        let mut last = usize::MAX;
        for tau in taus {
            let cfg = ControlConfig {
                tau_split: tau.max(1e-9),
                ..ControlConfig::default()
            };
            let (out, report) = split_gaussians(&set, &delta, &dirs, &cfg).unwrap();
            let splits = report.parents.len();
            assert_eq!(out.len(), set.len() + splits);
            assert_eq!(splits, delta.iter().filter(|&&d| d > cfg.tau_split).count());
            assert!(splits <= last);
            last = splits;
        }
    }
}

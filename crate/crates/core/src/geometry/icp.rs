//! Rigid point-to-point ICP on mesh vertex clouds: alternate
//! nearest-neighbor correspondence with the closed-form rotation fit from
//! the cross-covariance SVD (reflection-guarded), until the RMS residual
//! stops moving.

use super::mesh::TriangleMesh;
use crate::avatar::RigidTransform;
use crate::error::{Error, Result};
use crate::math::Quat;
use nalgebra::{Matrix3, Vector3};

#[derive(Clone, Debug, PartialEq)]
pub struct IcpConfig {
    pub max_iters: usize,
    /// Stop when the RMS residual changes by less than this between
    /// iterations.
    pub tol: f64,
    /// Fraction of the worst correspondences dropped before each fit.
    pub trim_fraction: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iters: 50,
            tol: 1e-6,
            trim_fraction: 0.0,
        }
    }
}

/// Rank of the centered scatter of a point cloud, for rejecting
/// configurations whose rotation is not observable.
fn centered_rank(points: &[Vector3<f64>]) -> usize {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let svals = cov.svd(false, false).singular_values;
    let cutoff = (svals[0] * 1e-9).max(1e-18);
    svals.iter().filter(|&&s| s > cutoff).count()
}

/// Aligns the source vertex cloud onto the target cloud with a rigid
/// transform (rotation and translation only, never scale). Returns the
/// transform and the final RMS point-to-correspondence residual.
pub fn icp_align(source: &TriangleMesh, target: &TriangleMesh, cfg: &IcpConfig) -> Result<(RigidTransform, f64)> {
    let src = &source.vertices;
    let tgt = &target.vertices;
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::invalid("icp requires nonempty vertex clouds"));
    }
    if src.len() < 3 {
        return Err(Error::invalid("icp requires at least 3 source vertices"));
    }
    let rank = centered_rank(src);
    if rank < 3 {
        return Err(Error::DegenerateAlignment { rank });
    }

    let mut transform = RigidTransform::identity();
    let mut rms = f64::INFINITY;

    for _ in 0..cfg.max_iters {
        let rot = transform.rotation.rotation_matrix();
        // Correspondences under the current transform; ties resolve to the
        // lowest target index via strict comparison.
        let mut pairs: Vec<(usize, usize, f64)> = Vec::with_capacity(src.len());
        for (i, p) in src.iter().enumerate() {
            let moved = rot * p + transform.translation;
            let mut best = (0usize, f64::INFINITY);
            for (j, q) in tgt.iter().enumerate() {
                let d2 = (moved - q).norm_squared();
                if d2 < best.1 {
                    best = (j, d2);
                }
            }
            pairs.push((i, best.0, best.1));
        }

        if cfg.trim_fraction > 0.0 {
            pairs.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
            let keep = (((1.0 - cfg.trim_fraction) * pairs.len() as f64).ceil() as usize).max(3);
            pairs.truncate(keep);
            pairs.sort_by_key(|p| p.0);
        }

        // Closed-form rigid fit between the original source points and
        // their current correspondences.
        let n = pairs.len() as f64;
        let p_mean = pairs.iter().map(|&(i, _, _)| src[i]).sum::<Vector3<f64>>() / n;
        let q_mean = pairs.iter().map(|&(_, j, _)| tgt[j]).sum::<Vector3<f64>>() / n;
        let mut h = Matrix3::zeros();
        for &(i, j, _) in &pairs {
            h += (src[i] - p_mean) * (tgt[j] - q_mean).transpose();
        }
        let svd = h.svd(true, true);
        let u = svd.u.ok_or(Error::NonFinite { context: "icp svd" })?;
        let v = svd.v_t.ok_or(Error::NonFinite { context: "icp svd" })?.transpose();
        let det = (v * u.transpose()).determinant();
        let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
        let r = v * d * u.transpose();
        let t = q_mean - r * p_mean;

        let next_rms = (pairs
            .iter()
            .map(|&(i, j, _)| (r * src[i] + t - tgt[j]).norm_squared())
            .sum::<f64>()
            / n)
            .sqrt();
        transform = RigidTransform {
            rotation: Quat::from_rotation_matrix(&r),
            translation: t,
        };
        if (rms - next_rms).abs() < cfg.tol {
            rms = next_rms;
            break;
        }
        rms = next_rms;
    }
    Ok((transform, rms))
}

//! Front-to-back alpha compositing of projected Gaussians, a brute-force
//! reference compositor, and the analytic backward pass.
//!
//! The splat model shared by every path here: a Gaussian contributes
//! weight exp(-q/2) inside its three-sigma ellipse (q <= 9) and exactly
//! zero outside, and its per-pixel alpha is opacity * weight clamped to
//! [`ALPHA_CLAMP`]. The fast path additionally skips pixels outside a
//! conservative axis-aligned bound of that ellipse and stops compositing
//! once transmittance falls below [`TRANSMITTANCE_CUTOFF`]; neither
//! shortcut changes any pixel the model makes visible.

use super::project::{perspective_jacobian, world_covariance};
use super::{Camera, Frame, SplatInputs};
use crate::error::{Error, Result};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

/// Per-splat alpha ceiling; keeps every layer partially transparent so the
/// compositing weights stay differentiable.
pub const ALPHA_CLAMP: f64 = 0.99;

/// Compositing for a pixel stops once transmittance drops below this.
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;

/// Splats are truncated at this many standard deviations.
pub const FOOTPRINT_SIGMAS: f64 = 3.0;

const FOOTPRINT_Q_MAX: f64 = FOOTPRINT_SIGMAS * FOOTPRINT_SIGMAS;
const DET_EPS: f64 = 1e-12;

/// Counters for splats that never reached compositing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RasterizeDiagnostics {
    /// Projected covariance was singular or non-finite.
    pub skipped_singular: usize,
    /// Center behind the near plane.
    pub culled_near: usize,
    /// Footprint entirely off screen.
    pub offscreen: usize,
}

struct Prepared {
    index: usize,
    depth: f64,
    mean: Vector2<f64>,
    inv_cov: Matrix2<f64>,
    opacity: f64,
    color: Vector3<f64>,
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

/// Projects, filters, and depth-sorts the input splats. Sorting is total:
/// depth ascending with input index breaking ties.
fn prepare(
    inputs: SplatInputs<'_>,
    cam: &Camera,
) -> Result<(Vec<Prepared>, RasterizeDiagnostics)> {
    inputs.check()?;
    cam.validate()?;
    let mut diag = RasterizeDiagnostics::default();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let Some(p) = super::project_gaussian(inputs.positions[i], &inputs.rotations[i], inputs.scales[i], cam)
        else {
            diag.culled_near += 1;
            continue;
        };
        let det = p.cov2d[(0, 0)] * p.cov2d[(1, 1)] - p.cov2d[(0, 1)] * p.cov2d[(1, 0)];
        let finite = det.is_finite() && p.mean2d.x.is_finite() && p.mean2d.y.is_finite();
        if !finite || det <= DET_EPS {
            diag.skipped_singular += 1;
            continue;
        }
        let inv_cov = Matrix2::new(p.cov2d[(1, 1)], -p.cov2d[(0, 1)], -p.cov2d[(1, 0)], p.cov2d[(0, 0)]) / det;
        let rx = FOOTPRINT_SIGMAS * p.cov2d[(0, 0)].sqrt();
        let ry = FOOTPRINT_SIGMAS * p.cov2d[(1, 1)].sqrt();
        let x0 = (p.mean2d.x - rx).ceil().max(0.0);
        let x1 = (p.mean2d.x + rx).floor().min(cam.width as f64 - 1.0);
        let y0 = (p.mean2d.y - ry).ceil().max(0.0);
        let y1 = (p.mean2d.y + ry).floor().min(cam.height as f64 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            diag.offscreen += 1;
            continue;
        }
        out.push(Prepared {
            index: i,
            depth: p.depth,
            mean: p.mean2d,
            inv_cov,
            opacity: inputs.opacities[i],
            color: inputs.colors[i],
            x0: x0 as usize,
            x1: x1 as usize,
            y0: y0 as usize,
            y1: y1 as usize,
        });
    }
    out.sort_unstable_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .expect("depths are finite after filtering")
            .then(a.index.cmp(&b.index))
    });
    Ok((out, diag))
}

fn splat_alpha(s: &Prepared, px: f64, py: f64) -> Option<f64> {
    let d = Vector2::new(px - s.mean.x, py - s.mean.y);
    let q = d.dot(&(s.inv_cov * d));
    if q > FOOTPRINT_Q_MAX {
        return None;
    }
    Some((s.opacity * (-0.5 * q).exp()).min(ALPHA_CLAMP))
}

fn composite_pixel(x: usize, y: usize, splats: &[Prepared], background: Vector3<f64>) -> (Vector3<f64>, f64) {
    let mut t = 1.0;
    let mut rgb = Vector3::zeros();
    for s in splats {
        if x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1 {
            continue;
        }
        let Some(alpha) = splat_alpha(s, x as f64, y as f64) else {
            continue;
        };
        rgb += s.color * (t * alpha);
        t *= 1.0 - alpha;
        if t < TRANSMITTANCE_CUTOFF {
            break;
        }
    }
    (rgb + background * t, 1.0 - t)
}

/// Renders the splats front to back over a constant background. The alpha
/// channel records total coverage (one minus final transmittance). Rows
/// are rendered in parallel; every pixel depends only on its own ray, so
/// the result is identical to a serial evaluation.
pub fn rasterize(
    inputs: SplatInputs<'_>,
    cam: &Camera,
    background: Vector3<f64>,
) -> Result<(Frame, RasterizeDiagnostics)> {
    let (splats, diag) = prepare(inputs, cam)?;
    let mut frame = Frame::new(cam.width, cam.height);
    let width = cam.width;
    frame
        .rgb
        .par_chunks_mut(width * 3)
        .zip(frame.alpha.par_chunks_mut(width))
        .enumerate()
        .for_each(|(y, (rgb_row, alpha_row))| {
            for x in 0..width {
                let (c, a) = composite_pixel(x, y, &splats, background);
                rgb_row[x * 3] = c.x;
                rgb_row[x * 3 + 1] = c.y;
                rgb_row[x * 3 + 2] = c.z;
                alpha_row[x] = a;
            }
        });
    Ok((frame, diag))
}

/// Brute-force compositor: every pixel walks every visible splat in full
/// depth order with no bounding-box test and no transmittance cutoff.
/// Slow by design; exists so the fast path can be checked against it.
pub fn rasterize_reference(
    inputs: SplatInputs<'_>,
    cam: &Camera,
    background: Vector3<f64>,
) -> Result<Frame> {
    let (splats, _) = prepare(inputs, cam)?;
    let mut frame = Frame::new(cam.width, cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut t = 1.0;
            let mut rgb = Vector3::zeros();
            for s in &splats {
                let Some(alpha) = splat_alpha(s, x as f64, y as f64) else {
                    continue;
                };
                rgb += s.color * (t * alpha);
                t *= 1.0 - alpha;
            }
            frame.set_pixel(x, y, rgb + background * t);
            frame.alpha[y * cam.width + x] = 1.0 - t;
        }
    }
    Ok(frame)
}

/// Gradients of a scalar loss with respect to the decoded splat
/// attributes. Rotation gradients are taken with respect to the four raw
/// quaternion components as the forward pass consumes them.
#[derive(Clone, Debug)]
pub struct SplatGradients {
    pub d_positions: Vec<Vector3<f64>>,
    pub d_rotations: Vec<[f64; 4]>,
    pub d_scales: Vec<Vector3<f64>>,
    pub d_opacities: Vec<f64>,
    pub d_colors: Vec<Vector3<f64>>,
}

impl SplatGradients {
    fn zeros(n: usize) -> SplatGradients {
        SplatGradients {
            d_positions: vec![Vector3::zeros(); n],
            d_rotations: vec![[0.0; 4]; n],
            d_scales: vec![Vector3::zeros(); n],
            d_opacities: vec![0.0; n],
            d_colors: vec![Vector3::zeros(); n],
        }
    }
}

struct Contribution {
    slot: usize,
    alpha: f64,
    weight: f64,
    offset: Vector2<f64>,
    t_before: f64,
    clamped: bool,
}

/// Backward pass of [`rasterize`]: given upstream gradients for the RGB
/// and alpha channels, accumulates exact gradients of the rendered frame
/// with respect to every splat attribute. Pixels are replayed serially so
/// accumulation order is fixed.
pub fn rasterize_backward(
    inputs: SplatInputs<'_>,
    cam: &Camera,
    background: Vector3<f64>,
    d_rgb: &[f64],
    d_alpha: &[f64],
) -> Result<SplatGradients> {
    let n_px = cam.width * cam.height;
    if d_rgb.len() != n_px * 3 {
        return Err(Error::ShapeMismatch {
            context: "rgb gradient length",
            expected: n_px * 3,
            actual: d_rgb.len(),
        });
    }
    if d_alpha.len() != n_px {
        return Err(Error::ShapeMismatch {
            context: "alpha gradient length",
            expected: n_px,
            actual: d_alpha.len(),
        });
    }
    let (splats, _) = prepare(inputs, cam)?;
    let mut grads = SplatGradients::zeros(inputs.len());

    // Pixel-space accumulators per prepared splat, chained through the
    // projection afterwards.
    let mut g_mean = vec![Vector2::zeros(); splats.len()];
    let mut g_cov = vec![Matrix2::zeros(); splats.len()];

    let mut contributions: Vec<Contribution> = Vec::new();
    for y in 0..cam.height {
        for x in 0..cam.width {
            let px_i = y * cam.width + x;
            let g_c = Vector3::new(d_rgb[px_i * 3], d_rgb[px_i * 3 + 1], d_rgb[px_i * 3 + 2]);
            let g_a = d_alpha[px_i];
            if g_c == Vector3::zeros() && g_a == 0.0 {
                continue;
            }
            contributions.clear();
            let mut t = 1.0;
            for (slot, s) in splats.iter().enumerate() {
                if x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1 {
                    continue;
                }
                let offset = Vector2::new(x as f64 - s.mean.x, y as f64 - s.mean.y);
                let q = offset.dot(&(s.inv_cov * offset));
                if q > FOOTPRINT_Q_MAX {
                    continue;
                }
                let weight = (-0.5 * q).exp();
                let raw = s.opacity * weight;
                let alpha = raw.min(ALPHA_CLAMP);
                contributions.push(Contribution {
                    slot,
                    alpha,
                    weight,
                    offset,
                    t_before: t,
                    clamped: raw >= ALPHA_CLAMP,
                });
                t *= 1.0 - alpha;
                if t < TRANSMITTANCE_CUTOFF {
                    break;
                }
            }
            let t_end = t;
            // Walking contributions back to front, `suffix` holds the part
            // of the pixel color laid down behind the current splat.
            let mut suffix = background * t_end;
            for c in contributions.iter().rev() {
                let s = &splats[c.slot];
                let throughput = c.t_before * c.alpha;
                grads.d_colors[s.index] += g_c * throughput;
                let d_alpha_k = g_c.dot(&(s.color * c.t_before - suffix / (1.0 - c.alpha)))
                    + g_a * t_end / (1.0 - c.alpha);
                suffix += s.color * throughput;
                if c.clamped {
                    continue;
                }
                grads.d_opacities[s.index] += d_alpha_k * c.weight;
                let d_weight = d_alpha_k * s.opacity;
                let d_q = d_weight * (-0.5 * c.weight);
                let v = s.inv_cov * c.offset;
                g_mean[c.slot] -= v * (2.0 * d_q);
                g_cov[c.slot] -= v * v.transpose() * d_q;
            }
        }
    }

    let w_mat = cam.world_to_camera.rotation.rotation_matrix();
    for (slot, s) in splats.iter().enumerate() {
        if g_mean[slot] == Vector2::zeros() && g_cov[slot] == Matrix2::zeros() {
            continue;
        }
        let i = s.index;
        let p_cam = cam.world_to_camera.apply_point(inputs.positions[i]);
        let j = perspective_jacobian(cam, p_cam);
        let m = j * w_mat;
        let sigma = world_covariance(&inputs.rotations[i], inputs.scales[i]);
        let gc = g_cov[slot];

        // cov2d = M Sigma M^T + dilation; gc is symmetric by construction.
        let g_sigma = m.transpose() * gc * m;
        let g_m = gc * m * sigma * 2.0;
        let g_j = g_m * w_mat.transpose();

        // Sigma = R diag(s^2) R^T.
        let r = inputs.rotations[i].rotation_matrix();
        let scale = inputs.scales[i];
        let d2 = Matrix3::from_diagonal(&Vector3::new(
            scale.x * scale.x,
            scale.y * scale.y,
            scale.z * scale.z,
        ));
        let g_r = g_sigma * r * d2 * 2.0;
        let partials = inputs.rotations[i].rotation_matrix_partials();
        for (c, dr) in partials.iter().enumerate() {
            grads.d_rotations[i][c] += g_r.component_mul(dr).sum();
        }
        let rtgr = r.transpose() * g_sigma * r;
        grads.d_scales[i] += Vector3::new(
            2.0 * scale.x * rtgr[(0, 0)],
            2.0 * scale.y * rtgr[(1, 1)],
            2.0 * scale.z * rtgr[(2, 2)],
        );

        // Camera-space position feeds both the pixel mean and the local
        // perspective Jacobian.
        let mut g_pcam = j.transpose() * g_mean[slot];
        let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
        let inv_z2 = 1.0 / (z * z);
        let inv_z3 = inv_z2 / z;
        g_pcam.x += g_j[(0, 2)] * (-cam.fx * inv_z2);
        g_pcam.y += g_j[(1, 2)] * (-cam.fy * inv_z2);
        g_pcam.z += g_j[(0, 0)] * (-cam.fx * inv_z2)
            + g_j[(1, 1)] * (-cam.fy * inv_z2)
            + g_j[(0, 2)] * (2.0 * cam.fx * x * inv_z3)
            + g_j[(1, 2)] * (2.0 * cam.fy * y * inv_z3);
        grads.d_positions[i] += w_mat.transpose() * g_pcam;
    }
    Ok(grads)
}

/// Mean absolute difference between rendered coverage and a target mask,
/// with its subgradient (zero where they agree exactly).
pub fn silhouette_loss(frame: &Frame, mask: &[f64]) -> Result<(f64, Vec<f64>)> {
    if mask.len() != frame.alpha.len() {
        return Err(Error::ShapeMismatch {
            context: "silhouette mask length",
            expected: frame.alpha.len(),
            actual: mask.len(),
        });
    }
    if frame.alpha.is_empty() {
        return Err(Error::invalid("silhouette loss over an empty frame"));
    }
    let n = frame.alpha.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; mask.len()];
    for (i, (&a, &m)) in frame.alpha.iter().zip(mask).enumerate() {
        let diff = a - m;
        loss += diff.abs();
        grad[i] = if diff > 0.0 {
            1.0 / n
        } else if diff < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((loss / n, grad))
}

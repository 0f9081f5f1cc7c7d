//! Stage-I fitting: optimizes the signed-distance lattice and its feature
//! channels so the extracted surface matches images, masks, landmarks, and
//! an optional prior mesh.
//!
//! The surface renders as one isotropic splat per extracted vertex, sized
//! to the lattice cell so neighbors close into a sheet. Image gradients
//! reach the lattice two ways: through the splat positions via the
//! zero-crossing formula, and through the splat colors via the feature
//! interpolation on each vertex's birth edge.

use crate::error::{Error, Result};
use crate::geometry::{
    accumulate_field_gradient, crossing_point, extract_surface, landmark_loss,
    laplacian_loss, mesh_alignment_loss, SdfGrid, TriangleMesh,
};
use crate::math::{sigmoid, sigmoid_grad_from_output, Quat};
use crate::render::{rasterize, rasterize_backward, silhouette_loss, Camera, Frame, SplatInputs};
use crate::train::losses::{offset_loss, rgb_loss, LossWeights};
use crate::train::metrics::psnr;
use crate::train::optimizer::{adam_step, AdamState, OptimConfig};
use crate::train::trace::{FitTrace, FitTraceRow, LossBreakdown};
use nalgebra::Vector3;
use std::time::Instant;

/// Splat radius as a fraction of the mean lattice cell edge; large enough
/// that adjacent surface vertices overlap into opaque coverage.
const SPLAT_RADIUS_FACTOR: f64 = 0.75;
/// Fixed splat opacity; coverage comes from overlap, not from tuning.
const SPLAT_OPACITY: f64 = 0.7;

/// One geometry-stage view: camera, target image, and a soft foreground
/// mask matched against rendered coverage.
#[derive(Clone, Debug)]
pub struct Stage1View {
    pub camera: Camera,
    pub target: Frame,
    /// Row-major, one value per pixel in [0, 1].
    pub mask: Vec<f64>,
}

/// Everything stage-I fitting reads and mutates. `landmarks` are target
/// points in world space, each matched to its nearest surface vertex.
#[derive(Clone, Debug)]
pub struct Stage1Problem {
    pub grid: SdfGrid,
    pub prior: Option<TriangleMesh>,
    pub views: Vec<Stage1View>,
    pub landmarks: Option<Vec<Vector3<f64>>>,
    pub background: Vector3<f64>,
}

/// Gradients for the two lattice parameter groups, in storage order.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Gradients {
    pub s: Vec<f64>,
    pub eta: Vec<f64>,
}

struct VertexSplats {
    rotations: Vec<Quat>,
    scales: Vec<Vector3<f64>>,
    opacities: Vec<f64>,
    colors: Vec<Vector3<f64>>,
    /// Interpolation factor along each vertex's birth edge, kept for the
    /// color backward pass.
    ts: Vec<f64>,
}

fn vertex_splats(grid: &SdfGrid, mesh: &TriangleMesh) -> Result<VertexSplats> {
    if grid.d_eta != 3 {
        return Err(Error::ShapeMismatch {
            context: "feature channels for rendering",
            expected: 3,
            actual: grid.d_eta,
        });
    }
    let provenance = mesh
        .provenance
        .as_ref()
        .expect("vertex splats need an extracted mesh with provenance");
    let n = mesh.vertices.len();
    let cell = grid.cell_size();
    let radius = SPLAT_RADIUS_FACTOR * (cell.x + cell.y + cell.z) / 3.0;

    let mut colors = Vec::with_capacity(n);
    let mut ts = Vec::with_capacity(n);
    for edge in provenance {
        let sa = grid.s[edge.a];
        let sb = grid.s[edge.b];
        let t = sa / (sa - sb);
        let ea = grid.eta_at(edge.a);
        let eb = grid.eta_at(edge.b);
        colors.push(Vector3::new(
            sigmoid(ea[0] + t * (eb[0] - ea[0])),
            sigmoid(ea[1] + t * (eb[1] - ea[1])),
            sigmoid(ea[2] + t * (eb[2] - ea[2])),
        ));
        ts.push(t);
    }
    Ok(VertexSplats {
        rotations: vec![Quat::IDENTITY; n],
        scales: vec![Vector3::new(radius, radius, radius); n],
        opacities: vec![SPLAT_OPACITY; n],
        colors,
        ts,
    })
}

/// Renders the current zero level set of `grid` from `camera`. Fails when
/// the field has no surface or fewer than three feature channels.
pub fn render_sdf_view(grid: &SdfGrid, camera: &Camera, background: Vector3<f64>) -> Result<Frame> {
    grid.validate()?;
    camera.validate()?;
    let mesh = extract_surface(grid);
    if mesh.is_empty() {
        return Err(Error::invalid("surface vanished: the field has no zero crossing"));
    }
    let splats = vertex_splats(grid, &mesh)?;
    let inputs = SplatInputs {
        positions: &mesh.vertices,
        rotations: &splats.rotations,
        scales: &splats.scales,
        opacities: &splats.opacities,
        colors: &splats.colors,
    };
    let (frame, _) = rasterize(inputs, camera, background)?;
    Ok(frame)
}

/// Per-target nearest surface vertex, lowest index on ties.
fn nearest_vertices(mesh: &TriangleMesh, targets: &[Vector3<f64>]) -> Vec<usize> {
    targets
        .iter()
        .map(|t| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, v) in mesh.vertices.iter().enumerate() {
                let d = (v - t).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn eval_stage1(
    problem: &Stage1Problem,
    weights: &LossWeights,
    mesh: &TriangleMesh,
    residuals: Option<&[Vector3<f64>]>,
) -> Result<(LossBreakdown, Stage1Gradients, Option<Frame>)> {
    let grid = &problem.grid;
    let nv = mesh.vertices.len();
    let mut d_vertices = vec![Vector3::zeros(); nv];
    let mut grads = Stage1Gradients {
        s: vec![0.0; grid.s.len()],
        eta: vec![0.0; grid.eta.len()],
    };
    let mut breakdown = LossBreakdown::default();

    let lap = laplacian_loss(mesh)?;
    breakdown.laplacian = lap.loss;
    if weights.laplacian > 0.0 {
        for (d, g) in d_vertices.iter_mut().zip(&lap.gradients) {
            *d += g * weights.laplacian;
        }
    }

    if let Some(prior) = &problem.prior {
        let (l, g) = mesh_alignment_loss(prior, mesh)?;
        breakdown.mesh = l;
        if weights.mesh > 0.0 {
            for (d, gv) in d_vertices.iter_mut().zip(&g) {
                *d += gv * weights.mesh;
            }
        }
    }

    if let Some(targets) = &problem.landmarks {
        let picked = nearest_vertices(mesh, targets);
        let pred: Vec<Vector3<f64>> = picked.iter().map(|&k| mesh.vertices[k]).collect();
        let (l, g) = landmark_loss(&pred, targets)?;
        breakdown.landmark = l;
        if weights.landmark > 0.0 {
            for (&k, gv) in picked.iter().zip(&g) {
                d_vertices[k] += gv * weights.landmark;
            }
        }
    }

    let (offset_l, _) = offset_loss(residuals.unwrap_or(&[]));
    breakdown.offset = offset_l;

    let mut first_frame = None;
    if !problem.views.is_empty() {
        let splats = vertex_splats(grid, mesh)?;
        let provenance = mesh.provenance.as_ref().expect("extracted mesh keeps provenance");
        let v_count = problem.views.len() as f64;
        for view in &problem.views {
            view.camera.validate()?;
            let inputs = SplatInputs {
                positions: &mesh.vertices,
                rotations: &splats.rotations,
                scales: &splats.scales,
                opacities: &splats.opacities,
                colors: &splats.colors,
            };
            let (frame, _) = rasterize(inputs, &view.camera, problem.background)?;

            let (rgb_l, rgb_g) = rgb_loss(&frame, &view.target)?;
            let (sil_l, sil_g) = silhouette_loss(&frame, &view.mask)?;
            breakdown.rgb += rgb_l / v_count;
            breakdown.silhouette += sil_l / v_count;

            if weights.rgb > 0.0 || weights.silhouette > 0.0 {
                let d_rgb: Vec<f64> = rgb_g.iter().map(|g| g * weights.rgb / v_count).collect();
                let d_alpha: Vec<f64> =
                    sil_g.iter().map(|g| g * weights.silhouette / v_count).collect();
                let sg = rasterize_backward(inputs, &view.camera, problem.background, &d_rgb, &d_alpha)?;
                for (d, g) in d_vertices.iter_mut().zip(&sg.d_positions) {
                    *d += g;
                }
                // Splat sizes, orientations, and opacities are functions of
                // the lattice spacing, not parameters; only color gradients
                // continue into the feature field.
                for (k, &edge) in provenance.iter().enumerate() {
                    let t = splats.ts[k];
                    let c = splats.colors[k];
                    let d_raw = [
                        sg.d_colors[k].x * sigmoid_grad_from_output(c.x),
                        sg.d_colors[k].y * sigmoid_grad_from_output(c.y),
                        sg.d_colors[k].z * sigmoid_grad_from_output(c.z),
                    ];
                    let ea = grid.eta_at(edge.a);
                    let eb = grid.eta_at(edge.b);
                    let mut along = 0.0;
                    for ch in 0..3 {
                        grads.eta[edge.a * 3 + ch] += (1.0 - t) * d_raw[ch];
                        grads.eta[edge.b * 3 + ch] += t * d_raw[ch];
                        along += d_raw[ch] * (eb[ch] - ea[ch]);
                    }
                    let sa = grid.s[edge.a];
                    let sb = grid.s[edge.b];
                    let denom = (sa - sb) * (sa - sb);
                    grads.s[edge.a] += -sb / denom * along;
                    grads.s[edge.b] += sa / denom * along;
                }
            }

            if first_frame.is_none() {
                first_frame = Some(frame);
            }
        }
    }

    accumulate_field_gradient(grid, mesh, &d_vertices, &mut grads.s);

    breakdown.total = weights.rgb * breakdown.rgb
        + weights.silhouette * breakdown.silhouette
        + weights.offset * breakdown.offset
        + weights.landmark * breakdown.landmark
        + weights.laplacian * breakdown.laplacian
        + weights.mesh * breakdown.mesh;
    Ok((breakdown, grads, first_frame))
}

/// Extracts the surface and scores it with every geometry-stage term,
/// returning lattice gradients and the mesh. `residuals` feed the offset
/// term for reporting; the term sees no parameters here, so it carries no
/// gradient. Components in the breakdown are unweighted; the total applies
/// the weights.
pub fn stage1_loss(
    problem: &Stage1Problem,
    weights: &LossWeights,
    residuals: Option<&[Vector3<f64>]>,
) -> Result<(LossBreakdown, Stage1Gradients, TriangleMesh)> {
    weights.validate()?;
    problem.grid.validate()?;
    let mesh = extract_surface(&problem.grid);
    if mesh.is_empty() {
        return Err(Error::invalid("surface vanished: the field has no zero crossing"));
    }
    let (breakdown, grads, _) = eval_stage1(problem, weights, &mesh, residuals)?;
    Ok((breakdown, grads, mesh))
}

/// Moves each surface vertex to the current zero crossing of its birth
/// edge, keeping topology fixed between full extractions.
fn refresh_vertices(grid: &SdfGrid, mesh: &mut TriangleMesh) {
    for k in 0..mesh.vertices.len() {
        let edge = mesh.provenance.as_ref().expect("extracted mesh keeps provenance")[k];
        mesh.vertices[k] = crossing_point(grid, edge.a, edge.b);
    }
}

/// Fits the lattice against the problem's views, prior, and landmarks with
/// one Adam step per group per iteration, re-extracting the surface at the
/// `mesh_every` cadence and sliding vertices along their birth edges in
/// between.
///
/// A non-finite loss, a NaN gradient, or a vanished surface stops the fit
/// early: the trace comes back with `aborted` describing the failure and
/// rows covering everything before it. The returned mesh is always a fresh
/// extraction from the final lattice state.
pub fn fit_stage1(
    problem: &mut Stage1Problem,
    weights: &LossWeights,
    optim: &OptimConfig,
) -> Result<(TriangleMesh, FitTrace)> {
    weights.validate()?;
    optim.validate()?;
    problem.grid.validate()?;
    if let Some(prior) = &problem.prior {
        prior.validate()?;
    }

    let start = Instant::now();
    let mut trace = FitTrace::new();
    let mut st_s = AdamState::new(problem.grid.s.len());
    let mut st_eta = AdamState::new(problem.grid.eta.len());
    let mut mesh: Option<TriangleMesh> = None;

    for iter in 0..optim.stage1_iters {
        if mesh.is_none() || iter % optim.mesh_every == 0 {
            let fresh = extract_surface(&problem.grid);
            if fresh.is_empty() {
                trace.aborted = Some(format!("surface vanished at iteration {iter}"));
                break;
            }
            mesh = Some(fresh);
        } else if let Some(m) = mesh.as_mut() {
            refresh_vertices(&problem.grid, m);
        }
        let current = mesh.as_ref().expect("mesh is extracted above");

        let (breakdown, grads, frame) = eval_stage1(problem, weights, current, None)?;

        let psnr_value = match (&frame, iter % optim.psnr_every == 0) {
            (Some(f), true) => Some(psnr(f, &problem.views[0].target)?),
            _ => None,
        };

        if !breakdown.total.is_finite() {
            trace.aborted = Some(format!("non-finite loss at iteration {iter}"));
            break;
        }

        let stepped = adam_step(&mut problem.grid.s, &grads.s, &mut st_s, optim.lr_stage1, optim, "sdf_values")
            .and_then(|()| {
                adam_step(
                    &mut problem.grid.eta,
                    &grads.eta,
                    &mut st_eta,
                    optim.lr_stage1,
                    optim,
                    "sdf_features",
                )
            });
        if let Err(e) = stepped {
            trace.aborted = Some(e.to_string());
            break;
        }

        trace.push_row(FitTraceRow {
            iteration: iter as u64,
            losses: breakdown,
            gaussians: current.vertices.len(),
            psnr: psnr_value,
        });
    }

    trace.wall_seconds = start.elapsed().as_secs_f64();
    Ok((extract_surface(&problem.grid), trace))
}

//! Stage-II fitting: optimizes the canonical Gaussian set and its residual
//! fields against posed target images.
//!
//! Each iteration renders one view through the full deformation pipeline
//! (residual fields, control propagation, world placement), scores it with
//! an L1 term plus an optional patch-similarity term, and walks the
//! gradient back through every differentiable stage by hand. Splitting runs
//! as a persistent pass at the configured cadence, growing the parameter
//! vectors and their optimizer moments together.

use crate::avatar::{
    deform_geometry, predict_colors, Attribute, DriverKind, ExpressionParams, GaussianSet,
    PoseParams, ResidualField, ResidualFieldBank, RigidTransform,
};
use crate::control::{self, expression_displacements, ControlConfig, SpatialIndex};
use crate::error::{Error, Result};
use crate::math::{normalize_jacobian, seeded_rng, sigmoid, sigmoid_grad_from_output, Quat};
use crate::render::{rasterize, rasterize_backward, Camera, Frame, SplatGradients, SplatInputs};
use crate::train::losses::{rgb_loss, LossWeights};
use crate::train::metrics::{psnr, ssim_with_gradient};
use crate::train::optimizer::{adam_step, AdamState, OptimConfig};
use crate::train::trace::{FitTrace, FitTraceRow, LossBreakdown, SplitEvent};
use nalgebra::{Vector3, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::time::Instant;

/// One training view: camera, target image, and the codes that pose the
/// avatar for that frame.
#[derive(Clone, Debug)]
pub struct Stage2View {
    pub camera: Camera,
    pub target: Frame,
    pub expression: ExpressionParams,
    pub pose: PoseParams,
    pub head: RigidTransform,
}

/// Everything stage-II fitting reads and mutates: the canonical set, its
/// residual fields, the control configuration, the views, and the render
/// background.
#[derive(Clone, Debug)]
pub struct Stage2Problem {
    pub gaussians: GaussianSet,
    pub bank: ResidualFieldBank,
    pub control: ControlConfig,
    pub views: Vec<Stage2View>,
    pub background: Vector3<f64>,
}

/// Gradients for every stage-II parameter group, flat per group in storage
/// order. `fields` lines up with [`ResidualFieldBank::field_names`].
#[derive(Clone, Debug)]
pub struct Stage2Gradients {
    /// 3 per Gaussian.
    pub positions: Vec<f64>,
    /// d_f per Gaussian.
    pub features: Vec<f64>,
    /// 4 per Gaussian, w-x-y-z.
    pub rotations: Vec<f64>,
    /// 3 per Gaussian.
    pub scale_logs: Vec<f64>,
    /// 1 per Gaussian.
    pub opacity_logits: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
}

impl Stage2Gradients {
    fn zeros(n: usize, d_f: usize, bank: &ResidualFieldBank) -> Stage2Gradients {
        Stage2Gradients {
            positions: vec![0.0; n * 3],
            features: vec![0.0; n * d_f],
            rotations: vec![0.0; n * 4],
            scale_logs: vec![0.0; n * 3],
            opacity_logits: vec![0.0; n],
            fields: bank
                .field_names()
                .iter()
                .map(|(_, a, k)| vec![0.0; bank.field(*a, *k).params().len()])
                .collect(),
        }
    }
}

/// Patch-sampled structural-dissimilarity term filling the perceptual slot:
/// mean 1 − SSIM over seeded random square crops of the rendered and target
/// frames.
#[derive(Clone, Copy, Debug)]
pub struct SsimPatchProxy {
    /// Crop side length; clamped down to the frame size when larger.
    pub patch: usize,
    pub patches_per_step: usize,
}

impl Default for SsimPatchProxy {
    fn default() -> Self {
        SsimPatchProxy {
            patch: 64,
            patches_per_step: 4,
        }
    }
}

impl SsimPatchProxy {
    /// Evaluates the penalty and its gradient with respect to the rendered
    /// frame, scattered back to full resolution. Crop corners come from
    /// `rng`, so a fixed seed reproduces the same patches.
    pub fn eval(
        &self,
        rendered: &Frame,
        target: &Frame,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Vec<f64>)> {
        if rendered.width != target.width || rendered.height != target.height {
            return Err(Error::ShapeMismatch {
                context: "perceptual target size",
                expected: rendered.rgb.len(),
                actual: target.rgb.len(),
            });
        }
        if self.patches_per_step == 0 {
            return Err(Error::invalid("perceptual proxy needs at least one patch per step"));
        }
        let side = self.patch.min(rendered.width).min(rendered.height);
        let scale = 1.0 / self.patches_per_step as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; rendered.rgb.len()];
        for _ in 0..self.patches_per_step {
            let x0 = rng.random_range(0..=rendered.width - side);
            let y0 = rng.random_range(0..=rendered.height - side);
            let ca = crop(rendered, x0, y0, side);
            let cb = crop(target, x0, y0, side);
            let (s, g) = ssim_with_gradient(&ca, &cb)?;
            loss += (1.0 - s) * scale;
            for yy in 0..side {
                let src = yy * side * 3;
                let dst = ((y0 + yy) * rendered.width + x0) * 3;
                for k in 0..side * 3 {
                    grad[dst + k] -= g[src + k] * scale;
                }
            }
        }
        Ok((loss, grad))
    }
}

fn crop(f: &Frame, x0: usize, y0: usize, side: usize) -> Frame {
    let mut out = Frame::new(side, side);
    for yy in 0..side {
        let src = ((y0 + yy) * f.width + x0) * 3;
        out.rgb[yy * side * 3..(yy + 1) * side * 3].copy_from_slice(&f.rgb[src..src + side * 3]);
    }
    out
}

/// Forward state for one view, retained so the backward pass can follow
/// every chain without re-deriving intermediates.
struct ViewAssembly {
    /// Unnormalized per-Gaussian rotation sums, before canonical
    /// normalization.
    raw_rotations: Vec<Quat>,
    /// Head-composed rotations before the final normalization.
    world_rotations_raw: Vec<Quat>,
    members: BTreeMap<usize, Vec<usize>>,
    colors: Vec<Vector3<f64>>,
    world_positions: Vec<Vector3<f64>>,
    world_rotations: Vec<Quat>,
    scales: Vec<Vector3<f64>>,
    opacities: Vec<f64>,
}

impl ViewAssembly {
    fn splat_inputs(&self) -> SplatInputs<'_> {
        SplatInputs {
            positions: &self.world_positions,
            rotations: &self.world_rotations,
            scales: &self.scales,
            opacities: &self.opacities,
            colors: &self.colors,
        }
    }
}

/// Runs the deformation pipeline for one view without splitting. The
/// arithmetic mirrors avatar assembly exactly, so the rendered result is
/// bitwise identical to rendering `assemble_avatar` output with splitting
/// disabled.
fn assemble_view(
    g: &GaussianSet,
    bank: &ResidualFieldBank,
    control: &ControlConfig,
    view: &Stage2View,
) -> Result<ViewAssembly> {
    let deformed = deform_geometry(g, &view.expression, &view.pose, bank)?;

    // The backward pass needs the rotation sums before normalization;
    // re-evaluating the two fields reproduces the deformation arithmetic
    // bit for bit.
    let exp_driver = view.expression.coefficients.as_slice();
    let pose_driver = view.pose.driver();
    let mut raw_rotations = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        let x = g.positions[i];
        let input = [x.x, x.y, x.z];
        let mut rot_res = [0.0; 4];
        bank.field(Attribute::Rotation, DriverKind::Expression)
            .eval_into(i, &input, exp_driver, &mut rot_res);
        bank.field(Attribute::Rotation, DriverKind::Pose)
            .eval_into(i, &input, &pose_driver, &mut rot_res);
        let q0 = g.rotations[i];
        raw_rotations.push(Quat::new(
            q0.w + rot_res[0],
            q0.x + rot_res[1],
            q0.y + rot_res[2],
            q0.z + rot_res[3],
        ));
    }

    let mut positions = deformed.positions;
    let mut members = BTreeMap::new();
    if control.control_enabled {
        let exp_disp = expression_displacements(&g.positions, &view.expression, bank)?;
        let delta: Vec<f64> = exp_disp.iter().map(Vector3::norm).collect();
        let picked = control::select_controls(&delta, control.tau_control);
        if !picked.is_empty() {
            let idx = SpatialIndex::build(&g.positions, control.radius_r);
            let neigh = control::neighborhoods(&g.positions, &picked, control, &idx);
            members = control::memberships(&picked, &neigh);
            let disp: Vec<Vector3<f64>> = picked.iter().map(|&i| exp_disp[i]).collect();
            positions = control::propagate(&positions, &g.positions, &picked, &disp, &members, control.sigma)?;
        }
    }

    let colors = predict_colors(g, &view.expression, &view.pose, bank)?;

    let r = view.head.rotation.rotation_matrix();
    let world_positions: Vec<Vector3<f64>> =
        positions.iter().map(|p| r * p + view.head.translation).collect();
    let world_rotations_raw: Vec<Quat> =
        deformed.rotations.iter().map(|q| view.head.rotation * *q).collect();
    let world_rotations: Vec<Quat> = world_rotations_raw.iter().map(|q| q.normalized()).collect();
    let scales: Vec<Vector3<f64>> = deformed.scale_logs.iter().map(|s| s.map(f64::exp)).collect();
    let opacities: Vec<f64> = deformed.opacity_logits.iter().map(|&a| sigmoid(a)).collect();

    Ok(ViewAssembly {
        raw_rotations,
        world_rotations_raw,
        members,
        colors,
        world_positions,
        world_rotations,
        scales,
        opacities,
    })
}

/// Walks splat-level gradients back to every canonical parameter group.
///
/// The propagation kernel weights and the control selection are treated as
/// constants of the canonical layout; gradients flow through the control
/// displacements themselves and through every residual field's parameters,
/// drivers being fixed per view.
fn backprop_view(
    g: &GaussianSet,
    bank: &ResidualFieldBank,
    control: &ControlConfig,
    view: &Stage2View,
    asm: &ViewAssembly,
    sg: &SplatGradients,
) -> Result<Stage2Gradients> {
    let n = g.len();
    let mut grads = Stage2Gradients::zeros(n, g.d_f, bank);

    let r_t = view.head.rotation.rotation_matrix().transpose();
    let d_p_prop: Vec<Vector3<f64>> = sg.d_positions.iter().map(|d| r_t * d).collect();

    let mut d_exp_disp = vec![Vector3::zeros(); n];
    for (&j, c_j) in &asm.members {
        let w = control::propagation_weights(&g.positions, j, c_j, control.sigma)?;
        for (&i, &wi) in c_j.iter().zip(&w) {
            d_exp_disp[i] += d_p_prop[j] * wi;
        }
    }

    let exp_driver = view.expression.coefficients.as_slice();
    let pose_driver = view.pose.driver();
    let h_t = view.head.rotation.left_mul_matrix().transpose();

    let s_pe = ResidualFieldBank::slot_of(Attribute::Position, DriverKind::Expression);
    let s_pp = ResidualFieldBank::slot_of(Attribute::Position, DriverKind::Pose);
    let s_ce = ResidualFieldBank::slot_of(Attribute::Color, DriverKind::Expression);
    let s_cp = ResidualFieldBank::slot_of(Attribute::Color, DriverKind::Pose);
    let s_re = ResidualFieldBank::slot_of(Attribute::Rotation, DriverKind::Expression);
    let s_rp = ResidualFieldBank::slot_of(Attribute::Rotation, DriverKind::Pose);
    let s_se = ResidualFieldBank::slot_of(Attribute::Scale, DriverKind::Expression);
    let s_sp = ResidualFieldBank::slot_of(Attribute::Scale, DriverKind::Pose);
    let s_oe = ResidualFieldBank::slot_of(Attribute::Opacity, DriverKind::Expression);
    let s_op = ResidualFieldBank::slot_of(Attribute::Opacity, DriverKind::Pose);

    let mut d_feat = vec![0.0; g.d_f];
    for i in 0..n {
        let x = g.positions[i];
        let input = [x.x, x.y, x.z];
        let mut d_input = [0.0; 3];

        // Position residual: the deformed position feeds world placement
        // directly; the expression field additionally feeds the propagated
        // control displacements, evaluated at the same point.
        let d_res = d_p_prop[i];
        let exp_out = [
            d_res.x + d_exp_disp[i].x,
            d_res.y + d_exp_disp[i].y,
            d_res.z + d_exp_disp[i].z,
        ];
        bank.field(Attribute::Position, DriverKind::Expression).backward_into(
            i,
            &input,
            exp_driver,
            &exp_out,
            Some(&mut grads.fields[s_pe]),
            None,
            Some(&mut d_input),
        );
        let pose_out = [d_res.x, d_res.y, d_res.z];
        bank.field(Attribute::Position, DriverKind::Pose).backward_into(
            i,
            &input,
            &pose_driver,
            &pose_out,
            Some(&mut grads.fields[s_pp]),
            None,
            Some(&mut d_input),
        );

        // Rotation: world = normalize(head ∘ normalize(q0 + residual)).
        // Both normalizations and the left composition are linear maps at
        // the evaluation point, applied transposed in reverse order.
        let d_wq = Vector4::new(
            sg.d_rotations[i][0],
            sg.d_rotations[i][1],
            sg.d_rotations[i][2],
            sg.d_rotations[i][3],
        );
        let d_v = normalize_jacobian(asm.world_rotations_raw[i]) * d_wq;
        let d_qdef = h_t * d_v;
        let d_u = normalize_jacobian(asm.raw_rotations[i]) * d_qdef;
        let d_u_arr = [d_u[0], d_u[1], d_u[2], d_u[3]];
        for (k, d) in d_u_arr.into_iter().enumerate() {
            grads.rotations[i * 4 + k] += d;
        }
        bank.field(Attribute::Rotation, DriverKind::Expression).backward_into(
            i,
            &input,
            exp_driver,
            &d_u_arr,
            Some(&mut grads.fields[s_re]),
            None,
            Some(&mut d_input),
        );
        bank.field(Attribute::Rotation, DriverKind::Pose).backward_into(
            i,
            &input,
            &pose_driver,
            &d_u_arr,
            Some(&mut grads.fields[s_rp]),
            None,
            Some(&mut d_input),
        );

        // Scale: world scale is the exponential of the deformed log.
        let d_log = [
            sg.d_scales[i].x * asm.scales[i].x,
            sg.d_scales[i].y * asm.scales[i].y,
            sg.d_scales[i].z * asm.scales[i].z,
        ];
        for (k, d) in d_log.into_iter().enumerate() {
            grads.scale_logs[i * 3 + k] += d;
        }
        bank.field(Attribute::Scale, DriverKind::Expression).backward_into(
            i,
            &input,
            exp_driver,
            &d_log,
            Some(&mut grads.fields[s_se]),
            None,
            Some(&mut d_input),
        );
        bank.field(Attribute::Scale, DriverKind::Pose).backward_into(
            i,
            &input,
            &pose_driver,
            &d_log,
            Some(&mut grads.fields[s_sp]),
            None,
            Some(&mut d_input),
        );

        // Opacity: logistic decode of the deformed logit.
        let d_logit = [sg.d_opacities[i] * sigmoid_grad_from_output(asm.opacities[i])];
        grads.opacity_logits[i] += d_logit[0];
        bank.field(Attribute::Opacity, DriverKind::Expression).backward_into(
            i,
            &input,
            exp_driver,
            &d_logit,
            Some(&mut grads.fields[s_oe]),
            None,
            Some(&mut d_input),
        );
        bank.field(Attribute::Opacity, DriverKind::Pose).backward_into(
            i,
            &input,
            &pose_driver,
            &d_logit,
            Some(&mut grads.fields[s_op]),
            None,
            Some(&mut d_input),
        );

        // Color: logistic decode of the summed field outputs, which read
        // the feature vector instead of the position.
        let c = asm.colors[i];
        let d_raw = [
            sg.d_colors[i].x * sigmoid_grad_from_output(c.x),
            sg.d_colors[i].y * sigmoid_grad_from_output(c.y),
            sg.d_colors[i].z * sigmoid_grad_from_output(c.z),
        ];
        d_feat.fill(0.0);
        let feat = g.feature(i);
        bank.field(Attribute::Color, DriverKind::Expression).backward_into(
            i,
            feat,
            exp_driver,
            &d_raw,
            Some(&mut grads.fields[s_ce]),
            None,
            Some(&mut d_feat),
        );
        bank.field(Attribute::Color, DriverKind::Pose).backward_into(
            i,
            feat,
            &pose_driver,
            &d_raw,
            Some(&mut grads.fields[s_cp]),
            None,
            Some(&mut d_feat),
        );
        for (k, &d) in d_feat.iter().enumerate() {
            grads.features[i * g.d_f + k] += d;
        }

        // Canonical position: identity through the deformed position plus
        // every position-fed field's input sensitivity.
        grads.positions[i * 3] += d_res.x + d_input[0];
        grads.positions[i * 3 + 1] += d_res.y + d_input[1];
        grads.positions[i * 3 + 2] += d_res.z + d_input[2];
    }
    Ok(grads)
}

/// Renders one view and scores it: weighted L1 on the full frame plus the
/// optional patch-similarity term, with gradients for every canonical
/// parameter group. Splitting never runs here; [`fit_stage2`] applies it
/// persistently at the configured cadence instead.
///
/// The proxy is skipped (and `rng` left untouched) when its weight is zero.
/// The rendered frame is returned for snapshot metrics.
pub fn stage2_loss(
    problem: &Stage2Problem,
    view_index: usize,
    weights: &LossWeights,
    proxy: Option<&SsimPatchProxy>,
    rng: &mut ChaCha8Rng,
) -> Result<(LossBreakdown, Stage2Gradients, Frame)> {
    weights.validate()?;
    let view = problem
        .views
        .get(view_index)
        .ok_or_else(|| Error::invalid(format!("view index {view_index} out of range")))?;
    view.expression.validate()?;
    view.pose.validate()?;
    view.head.validate()?;
    view.camera.validate()?;

    let g = &problem.gaussians;
    let bank = &problem.bank;
    let asm = assemble_view(g, bank, &problem.control, view)?;
    let (frame, _) = rasterize(asm.splat_inputs(), &view.camera, problem.background)?;

    let (rgb_l, rgb_g) = rgb_loss(&frame, &view.target)?;
    let mut d_rgb: Vec<f64> = rgb_g.iter().map(|v| weights.rgb * v).collect();
    let mut perc_l = 0.0;
    if weights.perceptual > 0.0 {
        if let Some(p) = proxy {
            let (pl, pg) = p.eval(&frame, &view.target, rng)?;
            perc_l = pl;
            for (d, v) in d_rgb.iter_mut().zip(&pg) {
                *d += weights.perceptual * v;
            }
        }
    }
    let d_alpha = vec![0.0; frame.alpha.len()];

    let sg = rasterize_backward(asm.splat_inputs(), &view.camera, problem.background, &d_rgb, &d_alpha)?;
    let grads = backprop_view(g, bank, &problem.control, view, &asm, &sg)?;

    let breakdown = LossBreakdown {
        total: weights.rgb * rgb_l + weights.perceptual * perc_l,
        rgb: rgb_l,
        perceptual: perc_l,
        ..LossBreakdown::default()
    };
    Ok((breakdown, grads, frame))
}

struct GroupStates {
    positions: AdamState,
    features: AdamState,
    rotations: AdamState,
    scales: AdamState,
    opacities: AdamState,
    fields: Vec<AdamState>,
}

fn apply_steps(
    problem: &mut Stage2Problem,
    grads: &Stage2Gradients,
    optim: &OptimConfig,
    names: &[(String, Attribute, DriverKind)],
    st: &mut GroupStates,
) -> Result<()> {
    let g = &mut problem.gaussians;

    let mut flat: Vec<f64> = g.positions.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    adam_step(&mut flat, &grads.positions, &mut st.positions, optim.lr_positions, optim, "positions")?;
    for (i, p) in g.positions.iter_mut().enumerate() {
        *p = Vector3::new(flat[i * 3], flat[i * 3 + 1], flat[i * 3 + 2]);
    }

    adam_step(&mut g.features, &grads.features, &mut st.features, optim.lr_features, optim, "features")?;

    let mut flat: Vec<f64> = g.rotations.iter().flat_map(|q| q.to_array()).collect();
    adam_step(&mut flat, &grads.rotations, &mut st.rotations, optim.lr_rotations, optim, "rotations")?;
    for (i, q) in g.rotations.iter_mut().enumerate() {
        *q = Quat::from_array([flat[i * 4], flat[i * 4 + 1], flat[i * 4 + 2], flat[i * 4 + 3]]);
    }

    let mut flat: Vec<f64> = g.scale_logs.iter().flat_map(|s| [s.x, s.y, s.z]).collect();
    adam_step(&mut flat, &grads.scale_logs, &mut st.scales, optim.lr_scales, optim, "scales")?;
    for (i, s) in g.scale_logs.iter_mut().enumerate() {
        *s = Vector3::new(flat[i * 3], flat[i * 3 + 1], flat[i * 3 + 2]);
    }

    adam_step(
        &mut g.opacity_logits,
        &grads.opacity_logits,
        &mut st.opacities,
        optim.lr_opacities,
        optim,
        "opacities",
    )?;

    for (slot, (name, attr, kind)) in names.iter().enumerate() {
        adam_step(
            problem.bank.field_mut(*attr, *kind).params_mut(),
            &grads.fields[slot],
            &mut st.fields[slot],
            optim.lr_fields,
            optim,
            name,
        )?;
    }
    Ok(())
}

/// Fits the canonical set and residual fields against the problem's views,
/// cycling through them round-robin, one Adam step per group per iteration.
///
/// Splitting runs before the loss at every `split_cadence`-th iteration
/// when enabled; children inherit their parent's optimizer moments, so the
/// Gaussian count is non-decreasing and changes only at the cadence.
///
/// A non-finite loss or a NaN gradient stops the fit early: the trace comes
/// back with `aborted` describing the failure and rows covering everything
/// before it. Structural errors (shape mismatches, the split cap) surface
/// as hard errors instead. Target frames are trusted as-given; a non-finite
/// target shows up as a divergence abort, not a validation error.
pub fn fit_stage2(
    problem: &mut Stage2Problem,
    weights: &LossWeights,
    optim: &OptimConfig,
) -> Result<FitTrace> {
    weights.validate()?;
    optim.validate()?;
    problem.control.validate(problem.gaussians.len())?;
    problem.bank.check_n(problem.gaussians.len())?;
    if optim.stage2_iters > 0 && problem.views.is_empty() {
        return Err(Error::invalid("stage-II fitting needs at least one view"));
    }

    let start = Instant::now();
    let mut trace = FitTrace::new();
    let mut rng = seeded_rng(optim.seed);
    let proxy = SsimPatchProxy::default();

    let d_f = problem.gaussians.d_f;
    let names = problem.bank.field_names();
    let n0 = problem.gaussians.len();
    let mut st = GroupStates {
        positions: AdamState::new(n0 * 3),
        features: AdamState::new(n0 * d_f),
        rotations: AdamState::new(n0 * 4),
        scales: AdamState::new(n0 * 3),
        opacities: AdamState::new(n0),
        fields: names
            .iter()
            .map(|(_, a, k)| AdamState::new(problem.bank.field(*a, *k).params().len()))
            .collect(),
    };

    for iter in 0..optim.stage2_iters {
        let view_index = iter % problem.views.len();

        if problem.control.split_enabled && iter > 0 && iter % problem.control.split_cadence == 0 {
            let disp = expression_displacements(
                &problem.gaussians.positions,
                &problem.views[view_index].expression,
                &problem.bank,
            )?;
            let delta: Vec<f64> = disp.iter().map(Vector3::norm).collect();
            let (split_set, report) =
                control::split_gaussians(&problem.gaussians, &delta, &disp, &problem.control)?;
            if !report.is_empty() {
                problem.bank.append_children(&report.parents);
                for &p in &report.parents {
                    st.positions.append_copy(p * 3, 3);
                    st.features.append_copy(p * d_f, d_f);
                    st.rotations.append_copy(p * 4, 4);
                    st.scales.append_copy(p * 3, 3);
                    st.opacities.append_copy(p, 1);
                }
                for (slot, (_, a, k)) in names.iter().enumerate() {
                    if let ResidualField::Linear(f) = problem.bank.field(*a, *k) {
                        let stride = f.out_dim * f.driver_dim;
                        for &p in &report.parents {
                            st.fields[slot].append_copy(p * stride, stride);
                        }
                    }
                }
                trace.splits.push(SplitEvent {
                    iteration: iter as u64,
                    parents: report.parents.clone(),
                    added: report.parents.len(),
                    total_after: split_set.len(),
                });
                problem.gaussians = split_set;
            }
        }

        let (breakdown, grads, frame) =
            stage2_loss(problem, view_index, weights, Some(&proxy), &mut rng)?;

        let psnr_value = if iter % optim.psnr_every == 0 {
            Some(psnr(&frame, &problem.views[view_index].target)?)
        } else {
            None
        };

        if !breakdown.total.is_finite() {
            trace.aborted = Some(format!("non-finite loss at iteration {iter}"));
            break;
        }

        if let Err(e) = apply_steps(problem, &grads, optim, &names, &mut st) {
            trace.aborted = Some(e.to_string());
            break;
        }

        trace.push_row(FitTraceRow {
            iteration: iter as u64,
            losses: breakdown,
            gaussians: problem.gaussians.len(),
            psnr: psnr_value,
        });
    }

    trace.wall_seconds = start.elapsed().as_secs_f64();
    Ok(trace)
}

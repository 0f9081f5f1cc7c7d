//! Deformation pipeline: residual updates to the neutral set, color
//! prediction, world placement, and the full assembly that strings the
//! optional control and splitting stages in between.

use super::fields::{Attribute, DriverKind, ResidualFieldBank};
use super::{AssembledAvatar, ExpressionParams, GaussianSet, PoseParams, Provenance, RigidTransform};
use crate::control::{self, ControlConfig, SpatialIndex, SplitReport};
use crate::error::{Error, Result};
use crate::math::{sigmoid, Quat};
use nalgebra::Vector3;

/// Geometry attributes after residual deformation, still in canonical space
/// and still encoded (log scales, logit opacities).
#[derive(Clone, Debug, PartialEq)]
pub struct DeformedGeometry {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Quat>,
    pub scale_logs: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
}

fn check_drivers(g: &GaussianSet, theta: &ExpressionParams, bank: &ResidualFieldBank) -> Result<()> {
    bank.check_n(g.len())?;
    if bank.d_f() != g.d_f {
        return Err(Error::ShapeMismatch {
            context: "bank feature dimension",
            expected: g.d_f,
            actual: bank.d_f(),
        });
    }
    if theta.coefficients.len() != bank.d_exp() {
        return Err(Error::ShapeMismatch {
            context: "expression dimension",
            expected: bank.d_exp(),
            actual: theta.coefficients.len(),
        });
    }
    Ok(())
}

/// Applies the additive residual fields to position, rotation, scale, and
/// opacity. Rotations get the residual added componentwise and are then
/// renormalized; scales and opacities receive their residuals in log/logit
/// space so decoding keeps them in range.
pub fn deform_geometry(
    g: &GaussianSet,
    theta: &ExpressionParams,
    beta: &PoseParams,
    bank: &ResidualFieldBank,
) -> Result<DeformedGeometry> {
    check_drivers(g, theta, bank)?;
    let n = g.len();
    let exp_driver = theta.coefficients.as_slice();
    let pose_driver = beta.driver();

    let mut out = DeformedGeometry {
        positions: Vec::with_capacity(n),
        rotations: Vec::with_capacity(n),
        scale_logs: Vec::with_capacity(n),
        opacity_logits: Vec::with_capacity(n),
    };

    for i in 0..n {
        let x = g.positions[i];
        let input = [x.x, x.y, x.z];

        let mut pos_res = [0.0; 3];
        bank.field(Attribute::Position, DriverKind::Expression)
            .eval_into(i, &input, exp_driver, &mut pos_res);
        bank.field(Attribute::Position, DriverKind::Pose)
            .eval_into(i, &input, &pose_driver, &mut pos_res);
        let p = x + Vector3::new(pos_res[0], pos_res[1], pos_res[2]);

        let mut rot_res = [0.0; 4];
        bank.field(Attribute::Rotation, DriverKind::Expression)
            .eval_into(i, &input, exp_driver, &mut rot_res);
        bank.field(Attribute::Rotation, DriverKind::Pose)
            .eval_into(i, &input, &pose_driver, &mut rot_res);
        let q0 = g.rotations[i];
        let q = Quat::new(q0.w + rot_res[0], q0.x + rot_res[1], q0.y + rot_res[2], q0.z + rot_res[3]).normalized();

        let mut scale_res = [0.0; 3];
        bank.field(Attribute::Scale, DriverKind::Expression)
            .eval_into(i, &input, exp_driver, &mut scale_res);
        bank.field(Attribute::Scale, DriverKind::Pose)
            .eval_into(i, &input, &pose_driver, &mut scale_res);
        let s = g.scale_logs[i] + Vector3::new(scale_res[0], scale_res[1], scale_res[2]);

        let mut alpha_res = [0.0; 1];
        bank.field(Attribute::Opacity, DriverKind::Expression)
            .eval_into(i, &input, exp_driver, &mut alpha_res);
        bank.field(Attribute::Opacity, DriverKind::Pose)
            .eval_into(i, &input, &pose_driver, &mut alpha_res);
        let a = g.opacity_logits[i] + alpha_res[0];

        let finite = p.iter().all(|v| v.is_finite())
            && q.is_finite()
            && s.iter().all(|v| v.is_finite())
            && a.is_finite();
        if !finite {
            return Err(Error::NonFinite { context: "deformed geometry" });
        }

        out.positions.push(p);
        out.rotations.push(q);
        out.scale_logs.push(s);
        out.opacity_logits.push(a);
    }
    Ok(out)
}

/// Predicts per-Gaussian colors from the feature vectors: the two color
/// residual fields are summed and squashed through the logistic so zero
/// parameters give mid-gray and any sum stays renderable.
pub fn predict_colors(
    g: &GaussianSet,
    theta: &ExpressionParams,
    beta: &PoseParams,
    bank: &ResidualFieldBank,
) -> Result<Vec<Vector3<f64>>> {
    check_drivers(g, theta, bank)?;
    let exp_driver = theta.coefficients.as_slice();
    let pose_driver = beta.driver();
    let mut colors = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        let feat = g.feature(i);
        let mut c = [0.0; 3];
        bank.field(Attribute::Color, DriverKind::Expression)
            .eval_into(i, feat, exp_driver, &mut c);
        bank.field(Attribute::Color, DriverKind::Pose)
            .eval_into(i, feat, &pose_driver, &mut c);
        if !c.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "color residual" });
        }
        colors.push(Vector3::new(sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2])));
    }
    Ok(colors)
}

/// Places canonical geometry in world space: rotate then translate the
/// positions, left-compose the rotations with the head rotation.
pub fn to_world(
    positions: &[Vector3<f64>],
    rotations: &[Quat],
    t: &RigidTransform,
) -> (Vec<Vector3<f64>>, Vec<Quat>) {
    let r = t.rotation.rotation_matrix();
    let out_p = positions.iter().map(|p| r * p + t.translation).collect();
    let out_q = rotations.iter().map(|q| (t.rotation * *q).normalized()).collect();
    (out_p, out_q)
}

/// Runs the full per-frame pipeline: residual deformation, optional control
/// propagation, optional displacement-triggered splitting, then world
/// placement. Colors are predicted from the neutral features and split
/// children inherit their parent's color.
///
/// Fails without partial output if splitting would exceed the configured
/// Gaussian cap.
pub fn assemble_avatar(
    g: &GaussianSet,
    theta: &ExpressionParams,
    beta: &PoseParams,
    t: &RigidTransform,
    bank: &ResidualFieldBank,
    ctl: &ControlConfig,
) -> Result<AssembledAvatar> {
    theta.validate()?;
    beta.validate()?;
    t.validate()?;
    ctl.validate(g.len())?;

    let deformed = deform_geometry(g, theta, beta, bank)?;
    let mut colors = predict_colors(g, theta, beta, bank)?;

    let needs_displacements = ctl.control_enabled || ctl.split_enabled;
    let exp_disp = if needs_displacements {
        control::expression_displacements(&g.positions, theta, bank)?
    } else {
        Vec::new()
    };

    let mut control_indices = Vec::new();
    let mut positions = deformed.positions;
    if ctl.control_enabled {
        let delta: Vec<f64> = exp_disp.iter().map(|d| d.norm()).collect();
        let controls = control::select_controls(&delta, ctl.tau_control);
        if !controls.is_empty() {
            let idx = SpatialIndex::build(&g.positions, ctl.radius_r);
            let neigh = control::neighborhoods(&g.positions, &controls, ctl, &idx);
            let memberships = control::memberships(&controls, &neigh);
            let disp: Vec<Vector3<f64>> = controls.iter().map(|&i| exp_disp[i]).collect();
            positions = control::propagate(&positions, &g.positions, &controls, &disp, &memberships, ctl.sigma)?;
        }
        control_indices = controls;
    }

    let mut provenance: Vec<Provenance> = (0..g.len()).map(|index| Provenance::Source { index }).collect();
    let mut report = SplitReport::default();
    let mut rotations = deformed.rotations;
    let mut scale_logs = deformed.scale_logs;
    let mut opacity_logits = deformed.opacity_logits;

    if ctl.split_enabled {
        let delta: Vec<f64> = exp_disp.iter().map(|d| d.norm()).collect();
        let staged = GaussianSet {
            positions,
            features: g.features.clone(),
            d_f: g.d_f,
            rotations,
            scale_logs,
            opacity_logits,
        };
        let (split_set, split_report) = control::split_gaussians(&staged, &delta, &exp_disp, ctl)?;
        for &[in_place, appended] in &split_report.children {
            let parent = in_place;
            provenance[parent] = Provenance::SplitChild { parent };
            debug_assert_eq!(appended, provenance.len());
            provenance.push(Provenance::SplitChild { parent });
            colors.push(colors[parent]);
        }
        positions = split_set.positions;
        rotations = split_set.rotations;
        scale_logs = split_set.scale_logs;
        opacity_logits = split_set.opacity_logits;
        report = split_report;
    }

    let (world_positions, world_rotations) = to_world(&positions, &rotations, t);
    let scales = scale_logs.iter().map(|s| s.map(f64::exp)).collect();
    let opacities = opacity_logits.iter().map(|&a| sigmoid(a)).collect();

    Ok(AssembledAvatar {
        positions: world_positions,
        colors,
        rotations: world_rotations,
        scales,
        opacities,
        provenance,
        control_indices,
        split: report,
    })
}

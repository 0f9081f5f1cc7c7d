//! Software Gaussian splatting: pinhole projection, front-to-back alpha
//! compositing, and the analytic backward pass the fitting stages consume.

mod project;
mod rasterize;

pub use project::{project_gaussian, Projected, NEAR_PLANE};
pub use rasterize::{
    rasterize, rasterize_backward, rasterize_reference, silhouette_loss, RasterizeDiagnostics,
    SplatGradients, ALPHA_CLAMP, FOOTPRINT_SIGMAS, TRANSMITTANCE_CUTOFF,
};

use crate::avatar::{AssembledAvatar, RigidTransform};
use crate::error::{Error, Result};
use crate::math::Quat;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Pinhole camera: intrinsics in pixels, extrinsics as the world-to-camera
/// rigid transform. Camera space looks down +z; pixel (u, v) samples the
/// continuous image plane at exactly (u, v).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: RigidTransform,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("camera focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 || self.width > 4096 || self.height > 4096 {
            return Err(Error::invalid("camera dimensions must be in 1..=4096"));
        }
        self.world_to_camera.validate()
    }

    /// Camera at `eye` looking toward `target`. The image x axis is
    /// `forward x up`, so `up` must not be parallel to the view direction.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Result<Camera> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("camera target coincides with eye"))?;
        let x = z
            .cross(&up)
            .try_normalize(1e-9)
            .ok_or_else(|| Error::invalid("camera up is parallel to the view direction"))?;
        let y = z.cross(&x);
        let rot = nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rotation = Quat::from_rotation_matrix(&rot);
        let translation = -(rot * eye);
        let cam = Camera {
            fx,
            fy,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            world_to_camera: RigidTransform { rotation, translation },
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }
}

/// Float render target: interleaved RGB rows plus a coverage channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    /// height * width * 3, row-major, channels interleaved.
    pub rgb: Vec<f64>,
    /// height * width, row-major.
    pub alpha: Vec<f64>,
    pub depth: Option<Vec<f64>>,
}

impl Frame {
    pub fn new(width: usize, height: usize) -> Frame {
        Frame {
            width,
            height,
            rgb: vec![0.0; width * height * 3],
            alpha: vec![0.0; width * height],
            depth: None,
        }
    }

    pub fn filled(width: usize, height: usize, color: Vector3<f64>) -> Frame {
        let mut f = Frame::new(width, height);
        for px in 0..width * height {
            f.rgb[px * 3] = color.x;
            f.rgb[px * 3 + 1] = color.y;
            f.rgb[px * 3 + 2] = color.z;
        }
        f
    }

    pub fn pixel(&self, x: usize, y: usize) -> Vector3<f64> {
        let base = (y * self.width + x) * 3;
        Vector3::new(self.rgb[base], self.rgb[base + 1], self.rgb[base + 2])
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: Vector3<f64>) {
        let base = (y * self.width + x) * 3;
        self.rgb[base] = c.x;
        self.rgb[base + 1] = c.y;
        self.rgb[base + 2] = c.z;
    }

    pub fn alpha_at(&self, x: usize, y: usize) -> f64 {
        self.alpha[y * self.width + x]
    }

    pub fn validate(&self) -> Result<()> {
        if self.rgb.len() != self.width * self.height * 3 || self.alpha.len() != self.width * self.height {
            return Err(Error::ShapeMismatch {
                context: "frame buffer length",
                expected: self.width * self.height * 3,
                actual: self.rgb.len(),
            });
        }
        let ok = self
            .rgb
            .iter()
            .chain(self.alpha.iter())
            .all(|v| v.is_finite() && (-1e-9..=1.0 + 1e-9).contains(v));
        if !ok {
            return Err(Error::NonFinite { context: "frame values" });
        }
        Ok(())
    }
}

/// Borrowed view of everything the rasterizer needs, decoded: linear
/// scales, (0,1) opacities, [0,1] colors.
#[derive(Clone, Copy, Debug)]
pub struct SplatInputs<'a> {
    pub positions: &'a [Vector3<f64>],
    pub rotations: &'a [Quat],
    pub scales: &'a [Vector3<f64>],
    pub opacities: &'a [f64],
    pub colors: &'a [Vector3<f64>],
}

impl<'a> SplatInputs<'a> {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.positions.len();
        for (context, len) in [
            ("splat rotations", self.rotations.len()),
            ("splat scales", self.scales.len()),
            ("splat opacities", self.opacities.len()),
            ("splat colors", self.colors.len()),
        ] {
            if len != n {
                return Err(Error::ShapeMismatch {
                    context,
                    expected: n,
                    actual: len,
                });
            }
        }
        Ok(())
    }
}

impl<'a> From<&'a AssembledAvatar> for SplatInputs<'a> {
    fn from(a: &'a AssembledAvatar) -> Self {
        SplatInputs {
            positions: &a.positions,
            rotations: &a.rotations,
            scales: &a.scales,
            opacities: &a.opacities,
            colors: &a.colors,
        }
    }
}

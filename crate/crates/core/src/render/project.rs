//! Perspective projection of anisotropic 3D Gaussians to 2D image-plane
//! Gaussians via the local affine approximation of the pinhole map.

use super::Camera;
use crate::math::Quat;
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

/// Points at or in front of this camera-space depth are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// Isotropic pixel-space variance added to every projected covariance so
/// sub-pixel splats still cover their center pixel.
pub const PIXEL_DILATION: f64 = 0.3;

/// A Gaussian after projection: pixel-space mean, 2x2 pixel-space
/// covariance (dilation included), and camera-space depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
}

pub(crate) fn perspective_jacobian(cam: &Camera, p: Vector3<f64>) -> Matrix2x3<f64> {
    let inv_z = 1.0 / p.z;
    let inv_z2 = inv_z * inv_z;
    Matrix2x3::new(
        cam.fx * inv_z,
        0.0,
        -cam.fx * p.x * inv_z2,
        0.0,
        cam.fy * inv_z,
        -cam.fy * p.y * inv_z2,
    )
}

pub(crate) fn world_covariance(rotation: &Quat, scale: Vector3<f64>) -> Matrix3<f64> {
    let r = rotation.rotation_matrix();
    let d = Matrix3::from_diagonal(&Vector3::new(
        scale.x * scale.x,
        scale.y * scale.y,
        scale.z * scale.z,
    ));
    r * d * r.transpose()
}

/// Projects one Gaussian. Returns `None` when the center fails the near
/// plane; everything else projects, however far off screen.
pub fn project_gaussian(
    position: Vector3<f64>,
    rotation: &Quat,
    scale: Vector3<f64>,
    cam: &Camera,
) -> Option<Projected> {
    let p_cam = cam.world_to_camera.apply_point(position);
    if p_cam.z.is_nan() || p_cam.z <= NEAR_PLANE {
        return None;
    }
    let mean2d = Vector2::new(
        cam.fx * p_cam.x / p_cam.z + cam.cx,
        cam.fy * p_cam.y / p_cam.z + cam.cy,
    );
    let j = perspective_jacobian(cam, p_cam);
    let w = cam.world_to_camera.rotation.rotation_matrix();
    let m = j * w;
    let cov2d = m * world_covariance(rotation, scale) * m.transpose()
        + Matrix2::identity() * PIXEL_DILATION;
    Some(Projected {
        mean2d,
        cov2d,
        depth: p_cam.z,
    })
}

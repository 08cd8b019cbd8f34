//! Perspective projection of 3D Gaussians to screen space.

use super::RasterConfig;
use crate::scene::{Camera, GaussianPrimitive};
use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};

/// A screen-space Gaussian. `cov2d` includes the low-pass regularizer, so it
/// is SPD with eigenvalues bounded below by the low-pass constant; `conic` is
/// its inverse.
#[derive(Clone, Debug)]
pub struct Gaussian2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    /// Camera-space z of the primitive center.
    pub depth: f64,
    /// Index of the source primitive in the cloud.
    pub parent: usize,
    /// Support radius in pixels (`support_sigmas` standard deviations).
    pub radius: f64,
    pub opacity: f64,
    pub color: Vector3<f64>,
}

/// Perspective Jacobian of (x, y, z) -> (fx x/z + cx, fy y/z + cy) at `p`.
pub fn perspective_jacobian(cam: &Camera, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let z = p.z;
    Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * p.x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * p.y / (z * z),
    )
}

/// Margin factor for the frustum cull: centers outside 1.3x the view cone
/// are dropped. Points nearly in the camera plane otherwise blow up the
/// perspective Jacobian and splat across the whole image.
pub const FRUSTUM_MARGIN: f64 = 1.3;

/// Whether the camera-space point sits inside the margin-extended view cone.
pub fn inside_frustum_margin(cam: &Camera, p_cam: &Vector3<f64>, near: f64) -> bool {
    if p_cam.z <= near {
        return false;
    }
    let tan_x = 0.5 * cam.width as f64 / cam.fx + (cam.cx - 0.5 * cam.width as f64).abs() / cam.fx;
    let tan_y =
        0.5 * cam.height as f64 / cam.fy + (cam.cy - 0.5 * cam.height as f64).abs() / cam.fy;
    (p_cam.x / p_cam.z).abs() <= FRUSTUM_MARGIN * tan_x
        && (p_cam.y / p_cam.z).abs() <= FRUSTUM_MARGIN * tan_y
}

/// Projects a primitive, returning `None` when it is culled: behind the near
/// plane, outside the margin-extended frustum, or with its support ellipse
/// entirely off the image.
pub fn project_gaussian(
    prim: &GaussianPrimitive,
    parent: usize,
    cam: &Camera,
    cfg: &RasterConfig,
) -> Option<Gaussian2D> {
    let p_cam = cam.world_to_camera(&prim.center);
    if !inside_frustum_margin(cam, &p_cam, cfg.near_plane) {
        return None;
    }
    let mean2d = cam.project_cam(&p_cam);
    let j = perspective_jacobian(cam, &p_cam);
    let m = j * cam.rotation;
    let cov_raw = m * prim.covariance() * m.transpose();
    // Symmetrize against round-off, then low-pass.
    let a = cov_raw[(0, 0)] + cfg.lowpass;
    let b = 0.5 * (cov_raw[(0, 1)] + cov_raw[(1, 0)]);
    let c = cov_raw[(1, 1)] + cfg.lowpass;
    let cov2d = Matrix2::new(a, b, b, c);
    let mid = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let lambda_max = mid + disc;
    let radius = if cfg.support_sigmas.is_finite() {
        cfg.support_sigmas * lambda_max.sqrt()
    } else {
        f64::INFINITY
    };
    if mean2d.x + radius < 0.0
        || mean2d.x - radius > cam.width as f64
        || mean2d.y + radius < 0.0
        || mean2d.y - radius > cam.height as f64
    {
        return None;
    }
    let det = a * c - b * b;
    let conic = Matrix2::new(c / det, -b / det, -b / det, a / det);
    Some(Gaussian2D {
        mean2d,
        cov2d,
        conic,
        depth: p_cam.z,
        parent,
        radius,
        opacity: prim.opacity,
        color: prim.color,
    })
}

//! Analytic backward pass for the tiled splatter.
//!
//! Given an upstream gradient on the rendered color image, produces per
//! primitive gradients in the optimizer's parameterization: raw center,
//! log-scale, quaternion components projected onto the unit-sphere tangent,
//! logit opacity, and raw color. The per-pixel blend is recomputed rather
//! than stored; per-tile partial gradients are reduced in fixed tile order so
//! the result is bit-reproducible.

use super::forward::prepare;
use super::project::perspective_jacobian;
use super::RasterConfig;
use crate::image::Image;
use crate::scene::{Camera, GaussianCloud};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

#[derive(Clone, Debug)]
pub struct CloudGradients {
    pub center: Vec<Vector3<f64>>,
    pub log_scale: Vec<Vector3<f64>>,
    /// Gradient with respect to (w, i, j, k), tangent to the unit sphere.
    pub rotation: Vec<Vector4<f64>>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<Vector3<f64>>,
    /// Norm of the accumulated screen-space position gradient, per primitive.
    /// This feeds densification statistics.
    pub screen: Vec<f64>,
}

impl CloudGradients {
    pub fn zeros(n: usize) -> Self {
        CloudGradients {
            center: vec![Vector3::zeros(); n],
            log_scale: vec![Vector3::zeros(); n],
            rotation: vec![Vector4::zeros(); n],
            opacity_logit: vec![0.0; n],
            color: vec![Vector3::zeros(); n],
            screen: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center.is_empty()
    }

    /// Elementwise sum; screen norms add as well (they are per-render
    /// magnitudes used only for densification bookkeeping).
    pub fn add(&mut self, other: &CloudGradients) {
        assert_eq!(self.len(), other.len());
        for i in 0..self.len() {
            self.center[i] += other.center[i];
            self.log_scale[i] += other.log_scale[i];
            self.rotation[i] += other.rotation[i];
            self.opacity_logit[i] += other.opacity_logit[i];
            self.color[i] += other.color[i];
            self.screen[i] += other.screen[i];
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.len() {
            m = m.max(self.center[i].amax());
            m = m.max(self.log_scale[i].amax());
            m = m.max(self.rotation[i].amax());
            m = m.max(self.opacity_logit[i].abs());
            m = m.max(self.color[i].amax());
        }
        m
    }
}

/// Per-splat screen-space gradient accumulator.
#[derive(Clone, Copy, Default)]
struct Grad2D {
    mean: Vector2<f64>,
    // Full-matrix gradient with respect to the low-passed 2D covariance.
    cov: Matrix2<f64>,
    alpha: f64,
    color: Vector3<f64>,
}

/// Backpropagates `upstream` (dL/dC, one 3-vector per pixel) through the
/// rasterizer. Gradients are exact for the blend actually computed, including
/// the opacity clamp and any skip/termination cutoffs in `cfg`; use
/// [`RasterConfig::smooth`] when comparing against finite differences.
pub fn rasterize_backward(
    cloud: &GaussianCloud,
    cam: &Camera,
    upstream: &Image,
    cfg: &RasterConfig,
) -> CloudGradients {
    let n = cloud.len();
    let mut out = CloudGradients::zeros(n);
    if n == 0 {
        return out;
    }
    let prep = prepare(cloud, cam, cfg);
    let support_sq = cfg.support_sigmas * cfg.support_sigmas;
    let (w, h) = (cam.width, cam.height);

    // Per tile: sparse list of (index into prep.splats, partial gradient).
    let tile_grads: Vec<Vec<(u32, Grad2D)>> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|ti| {
            let tx = ti % prep.tiles_x;
            let ty = ti / prep.tiles_x;
            let x0 = tx * cfg.tile_size;
            let y0 = ty * cfg.tile_size;
            let tw = cfg.tile_size.min(w - x0);
            let th = cfg.tile_size.min(h - y0);
            let list = &prep.tiles[ti];
            // Dense accumulator over this tile's splat list.
            let mut acc: Vec<Grad2D> = vec![Grad2D::default(); list.len()];
            let mut touched = vec![false; list.len()];
            // Per-pixel contributor scratch: (list position, sigma, weight,
            // clamped, transmittance before this splat, dx, dy).
            let mut contribs: Vec<(usize, f64, f64, bool, f64, f64, f64)> = Vec::new();
            for py in 0..th {
                for px in 0..tw {
                    let pc_x = (x0 + px) as f64 + 0.5;
                    let pc_y = (y0 + py) as f64 + 0.5;
                    let g_up = Vector3::new(
                        upstream.get(x0 + px, y0 + py, 0),
                        upstream.get(x0 + px, y0 + py, 1),
                        upstream.get(x0 + px, y0 + py, 2),
                    );
                    if g_up == Vector3::zeros() {
                        continue;
                    }
                    contribs.clear();
                    let mut t_acc = 1.0f64;
                    for (pos, &si) in list.iter().enumerate() {
                        let s = &prep.splats[si as usize];
                        let dx = pc_x - s.mean2d.x;
                        let dy = pc_y - s.mean2d.y;
                        let e = s.conic[(0, 0)] * dx * dx
                            + 2.0 * s.conic[(0, 1)] * dx * dy
                            + s.conic[(1, 1)] * dy * dy;
                        if e > support_sq {
                            continue;
                        }
                        let weight = (-0.5 * e).exp();
                        let raw = s.opacity * weight;
                        let clamped = raw > cfg.sigma_max;
                        let sigma = raw.min(cfg.sigma_max);
                        if sigma < cfg.sigma_skip {
                            continue;
                        }
                        contribs.push((pos, sigma, weight, clamped, t_acc, dx, dy));
                        t_acc *= 1.0 - sigma;
                        if t_acc < cfg.transmittance_stop {
                            break;
                        }
                    }
                    // Suffix pass, back to front. `suffix` tracks the color
                    // contribution of everything behind the current splat.
                    let mut suffix = Vector3::zeros();
                    // Background sits behind all splats.
                    suffix += cfg.background * t_acc;
                    for &(pos, sigma, weight, clamped, t_before, dx, dy) in
                        contribs.iter().rev()
                    {
                        let s = &prep.splats[list[pos] as usize];
                        let contrib = sigma * t_before;
                        let a = &mut acc[pos];
                        touched[pos] = true;
                        a.color += g_up * contrib;
                        // dL/dsigma: own term plus the shading of everything
                        // behind (suffix shrinks by (1 - sigma)).
                        let d_sigma = g_up.dot(&(s.color * t_before - suffix / (1.0 - sigma)));
                        suffix += s.color * contrib;
                        if clamped {
                            continue;
                        }
                        a.alpha += d_sigma * weight;
                        let d_weight = d_sigma * s.opacity;
                        // weight = exp(-e/2), e = d^T Q d, d = pixel - mean.
                        let qd = Vector2::new(
                            s.conic[(0, 0)] * dx + s.conic[(0, 1)] * dy,
                            s.conic[(1, 0)] * dx + s.conic[(1, 1)] * dy,
                        );
                        a.mean += qd * (d_weight * weight);
                        let d_e = -0.5 * d_weight * weight;
                        // dL/dQ = d_e * d d^T; then dL/dV = -Q (dL/dQ) Q.
                        let ddt = Matrix2::new(dx * dx, dx * dy, dx * dy, dy * dy);
                        let dq = ddt * d_e;
                        a.cov += -(s.conic * dq * s.conic);
                    }
                }
            }
            list.iter()
                .enumerate()
                .filter(|(pos, _)| touched[*pos])
                .map(|(pos, &si)| (si, acc[pos]))
                .collect()
        })
        .collect();

    // Deterministic reduction across tiles: fixed tile order.
    let mut total: Vec<Grad2D> = vec![Grad2D::default(); prep.splats.len()];
    for tile in tile_grads {
        for (si, g) in tile {
            let t = &mut total[si as usize];
            t.mean += g.mean;
            t.cov += g.cov;
            t.alpha += g.alpha;
            t.color += g.color;
        }
    }

    // Chain each splat's screen-space gradient to the 3D attributes.
    let per_splat: Vec<(usize, Vector3<f64>, Vector3<f64>, Vector4<f64>, f64, Vector3<f64>, f64)> =
        prep.splats
            .par_iter()
            .zip(total.par_iter())
            .map(|(s, g2)| {
                let prim = &cloud.primitives[s.parent];
                let p_cam = cam.world_to_camera(&prim.center);
                let j = perspective_jacobian(cam, &p_cam);
                let m = j * cam.rotation;
                let sigma_world = prim.covariance();

                // Mean gradient path: mean2d = project(p_cam).
                let mut gp_cam = j.transpose() * g2.mean;

                // Covariance gradient paths.
                let g_cov = g2.cov;
                let p_mat = m.transpose() * g_cov * m; // dL/dSigma (3x3)
                let dl_dm = (g_cov + g_cov.transpose()) * m * sigma_world;
                let dl_dj = dl_dm * cam.rotation.transpose();

                // J depends on camera-space position.
                let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
                let z2 = z * z;
                let z3 = z2 * z;
                gp_cam.x += dl_dj[(0, 2)] * (-cam.fx / z2);
                gp_cam.y += dl_dj[(1, 2)] * (-cam.fy / z2);
                gp_cam.z += dl_dj[(0, 0)] * (-cam.fx / z2)
                    + dl_dj[(0, 2)] * (2.0 * cam.fx * x / z3)
                    + dl_dj[(1, 1)] * (-cam.fy / z2)
                    + dl_dj[(1, 2)] * (2.0 * cam.fy * y / z3);

                let g_center = cam.rotation.transpose() * gp_cam;

                // Sigma = R diag(s^2) R^T.
                let r = prim.rotation.to_rotation_matrix().into_inner();
                let rt_p_r = r.transpose() * p_mat * r;
                let s_vec = prim.scale;
                let g_scale = Vector3::new(
                    2.0 * s_vec.x * rt_p_r[(0, 0)],
                    2.0 * s_vec.y * rt_p_r[(1, 1)],
                    2.0 * s_vec.z * rt_p_r[(2, 2)],
                );
                let g_log_scale = Vector3::new(
                    g_scale.x * s_vec.x,
                    g_scale.y * s_vec.y,
                    g_scale.z * s_vec.z,
                );

                let d_diag = Matrix3::from_diagonal(&Vector3::new(
                    s_vec.x * s_vec.x,
                    s_vec.y * s_vec.y,
                    s_vec.z * s_vec.z,
                ));
                let dl_dr = (p_mat + p_mat.transpose()) * r * d_diag;
                let g_rot = quaternion_gradient(&prim.rotation, &dl_dr);

                let g_logit = g2.alpha * prim.opacity * (1.0 - prim.opacity);
                (s.parent, g_center, g_log_scale, g_rot, g_logit, g2.color, g2.mean.norm())
            })
            .collect();

    for (parent, gc, gs, gq, ga, gcol, screen) in per_splat {
        out.center[parent] += gc;
        out.log_scale[parent] += gs;
        out.rotation[parent] += gq;
        out.opacity_logit[parent] += ga;
        out.color[parent] += gcol;
        out.screen[parent] += screen;
    }
    out
}

/// Gradient of a loss with respect to the four quaternion components, given
/// dL/dR at the current unit quaternion, projected onto the tangent of the
/// unit sphere (matching finite differences through renormalization).
fn quaternion_gradient(
    q: &nalgebra::UnitQuaternion<f64>,
    dl_dr: &Matrix3<f64>,
) -> Vector4<f64> {
    let (w, i, j, k) = (q.w, q.i, q.j, q.k);
    let dr_dw = Matrix3::new(0.0, -k, j, k, 0.0, -i, -j, i, 0.0) * 2.0;
    let dr_di = Matrix3::new(0.0, j, k, j, -2.0 * i, -w, k, w, -2.0 * i) * 2.0;
    let dr_dj = Matrix3::new(-2.0 * j, i, w, i, 0.0, k, -w, k, -2.0 * j) * 2.0;
    let dr_dk = Matrix3::new(-2.0 * k, -w, i, w, -2.0 * k, j, i, j, 0.0) * 2.0;
    let frob = |a: &Matrix3<f64>, b: &Matrix3<f64>| -> f64 {
        let mut s = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                s += a[(r, c)] * b[(r, c)];
            }
        }
        s
    };
    let raw = Vector4::new(
        frob(dl_dr, &dr_dw),
        frob(dl_dr, &dr_di),
        frob(dl_dr, &dr_dj),
        frob(dl_dr, &dr_dk),
    );
    let qv = Vector4::new(w, i, j, k);
    raw - qv * raw.dot(&qv)
}

//! Shared test oracles: a naive all-pixels/all-Gaussians reference renderer,
//! finite-difference gradients, a straightforward SSIM implementation, and
//! random scene builders. Everything here is deliberately independent of the
//! optimized paths it checks (no tiling, no separable convolution, no shared
//! blending code).

#![allow(dead_code)]

use nalgebra::{Matrix2, Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use splatguide::image::Image;
use splatguide::math::{logit, sigmoid, standard_normal};
use splatguide::raster::{rasterize, RasterConfig};
use splatguide::scene::{Camera, GaussianCloud, GaussianPrimitive};

pub struct NaiveRender {
    pub color: Image,
    pub transmittance: Image,
    pub depth: Image,
}

/// Reference renderer: every pixel walks every projected Gaussian in global
/// depth order, evaluating the same per-sample math as the production
/// blender (support cutoff, opacity clamp, skip, early termination) without
/// any tiling or binning.
pub fn naive_rasterize(cloud: &GaussianCloud, cam: &Camera, cfg: &RasterConfig) -> NaiveRender {
    struct Splat {
        mean: Vector2<f64>,
        conic: Matrix2<f64>,
        depth: f64,
        index: usize,
        opacity: f64,
        color: Vector3<f64>,
    }
    let mut splats: Vec<Splat> = Vec::new();
    for (i, p) in cloud.primitives.iter().enumerate() {
        let p_cam = cam.world_to_camera(&p.center);
        // Same projection semantics as production: near plane plus the
        // margin-extended frustum cone.
        if !splatguide::raster::inside_frustum_margin(cam, &p_cam, cfg.near_plane) {
            continue;
        }
        let mean = cam.project_cam(&p_cam);
        // Projected covariance built from first principles.
        let z = p_cam.z;
        let j = nalgebra::Matrix2x3::new(
            cam.fx / z,
            0.0,
            -cam.fx * p_cam.x / (z * z),
            0.0,
            cam.fy / z,
            -cam.fy * p_cam.y / (z * z),
        );
        let r3 = p.rotation.to_rotation_matrix().into_inner();
        let d = nalgebra::Matrix3::from_diagonal(&Vector3::new(
            p.scale.x * p.scale.x,
            p.scale.y * p.scale.y,
            p.scale.z * p.scale.z,
        ));
        let sigma = r3 * d * r3.transpose();
        let m = j * cam.rotation;
        let cov = m * sigma * m.transpose();
        let a = cov[(0, 0)] + cfg.lowpass;
        let b = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
        let c = cov[(1, 1)] + cfg.lowpass;
        let det = a * c - b * b;
        let conic = Matrix2::new(c / det, -b / det, -b / det, a / det);
        splats.push(Splat { mean, conic, depth: z, index: i, opacity: p.opacity, color: p.color });
    }
    splats.sort_by(|x, y| {
        x.depth
            .partial_cmp(&y.depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.index.cmp(&y.index))
    });

    let support_sq = cfg.support_sigmas * cfg.support_sigmas;
    let mut color = Image::zeros(cam.width, cam.height, 3);
    let mut transmittance = Image::zeros(cam.width, cam.height, 1);
    let mut depth = Image::zeros(cam.width, cam.height, 1);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let mut t_acc = 1.0;
            let mut c_acc = Vector3::zeros();
            let mut o_acc = 0.0;
            let mut d_acc = 0.0;
            for s in &splats {
                let dx = px - s.mean.x;
                let dy = py - s.mean.y;
                let e = s.conic[(0, 0)] * dx * dx
                    + 2.0 * s.conic[(0, 1)] * dx * dy
                    + s.conic[(1, 1)] * dy * dy;
                if e > support_sq {
                    continue;
                }
                let sigma = (s.opacity * (-0.5 * e).exp()).min(cfg.sigma_max);
                if sigma < cfg.sigma_skip {
                    continue;
                }
                let contrib = sigma * t_acc;
                c_acc += s.color * contrib;
                o_acc += contrib;
                d_acc += s.depth * contrib;
                t_acc *= 1.0 - sigma;
                if t_acc < cfg.transmittance_stop {
                    break;
                }
            }
            c_acc += cfg.background * t_acc;
            for ch in 0..3 {
                color.set(x, y, ch, c_acc[ch]);
            }
            transmittance.set(x, y, 0, o_acc);
            depth.set(x, y, 0, d_acc);
        }
    }
    NaiveRender { color, transmittance, depth }
}

/// Weighted scalar render loss sum(upstream * C), the functional the
/// backward pass differentiates.
pub fn render_loss(cloud: &GaussianCloud, cam: &Camera, upstream: &Image, cfg: &RasterConfig) -> f64 {
    let out = rasterize(cloud, cam, cfg);
    out.color
        .data()
        .iter()
        .zip(upstream.data().iter())
        .map(|(c, u)| c * u)
        .sum()
}

/// Central finite differences of `render_loss` for one primitive attribute
/// class, in the optimizer's parameterization.
pub enum Attr {
    Center(usize),
    LogScale(usize),
    Rotation(usize),
    OpacityLogit,
    Color(usize),
}

pub fn perturbed(cloud: &GaussianCloud, prim: usize, attr: &Attr, delta: f64) -> GaussianCloud {
    let mut c = cloud.clone();
    let p = &mut c.primitives[prim];
    match *attr {
        Attr::Center(k) => p.center[k] += delta,
        Attr::LogScale(k) => p.scale[k] = (p.scale[k].ln() + delta).exp(),
        Attr::Rotation(k) => {
            let mut q = [p.rotation.w, p.rotation.i, p.rotation.j, p.rotation.k];
            q[k] += delta;
            let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
            p.rotation = UnitQuaternion::from_quaternion(quat);
        }
        Attr::OpacityLogit => p.opacity = sigmoid(logit(p.opacity) + delta),
        Attr::Color(k) => p.color[k] += delta,
    }
    c
}

pub fn fd_attr(
    cloud: &GaussianCloud,
    cam: &Camera,
    upstream: &Image,
    cfg: &RasterConfig,
    prim: usize,
    attr: Attr,
    eps: f64,
) -> f64 {
    let plus = render_loss(&perturbed(cloud, prim, &attr, eps), cam, upstream, cfg);
    let minus = render_loss(&perturbed(cloud, prim, &attr, -eps), cam, upstream, cfg);
    (plus - minus) / (2.0 * eps)
}

/// Central finite differences of an image functional.
pub fn fd_image_grad(f: &dyn Fn(&Image) -> f64, a: &Image, eps: f64) -> Image {
    let mut grad = Image::zeros(a.width(), a.height(), a.channels());
    for i in 0..a.len() {
        let mut plus = a.clone();
        plus.data_mut()[i] += eps;
        let mut minus = a.clone();
        minus.data_mut()[i] -= eps;
        grad.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * eps);
    }
    grad
}

/// Max relative error between an analytic gradient vector and its
/// finite-difference estimate, normalized by the largest FD magnitude.
pub fn max_rel_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    analytic
        .iter()
        .zip(fd.iter())
        .map(|(a, f)| (a - f).abs() / scale)
        .fold(0.0, f64::max)
}

/// Straightforward SSIM: per window position, a direct double loop over the
/// 11x11 Gaussian weights.
pub fn reference_ssim(a: &Image, b: &Image) -> f64 {
    const WIN: usize = 11;
    let mut kernel = [[0.0f64; WIN]; WIN];
    let mut ksum = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, k) in row.iter_mut().enumerate() {
            let dy = i as f64 - 5.0;
            let dx = j as f64 - 5.0;
            *k = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            ksum += *k;
        }
    }
    for row in kernel.iter_mut() {
        for k in row.iter_mut() {
            *k /= ksum;
        }
    }
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let mut total = 0.0;
    let mut count = 0.0;
    for c in 0..ch {
        for y0 in 0..=(h - WIN) {
            for x0 in 0..=(w - WIN) {
                let (mut ma, mut mb) = (0.0, 0.0);
                for dy in 0..WIN {
                    for dx in 0..WIN {
                        let k = kernel[dy][dx];
                        ma += k * a.get(x0 + dx, y0 + dy, c);
                        mb += k * b.get(x0 + dx, y0 + dy, c);
                    }
                }
                let (mut va, mut vb, mut vab) = (0.0, 0.0, 0.0);
                for dy in 0..WIN {
                    for dx in 0..WIN {
                        let k = kernel[dy][dx];
                        let da = a.get(x0 + dx, y0 + dy, c) - ma;
                        let db = b.get(x0 + dx, y0 + dy, c) - mb;
                        va += k * da * da;
                        vb += k * db * db;
                        vab += k * da * db;
                    }
                }
                let s = ((2.0 * ma * mb + c1) * (2.0 * vab + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                total += s;
                count += 1.0;
            }
        }
    }
    total / count
}

/// Random cloud placed inside the frustum of [`test_camera`].
pub fn random_cloud<R: Rng>(n: usize, rng: &mut R) -> GaussianCloud {
    let prims: Vec<GaussianPrimitive> = (0..n)
        .map(|_| {
            let axis = Vector3::new(
                standard_normal(rng),
                standard_normal(rng),
                standard_normal(rng),
            );
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let rotation = if axis.norm() > 1e-9 {
                UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
            } else {
                UnitQuaternion::identity()
            };
            GaussianPrimitive {
                center: Vector3::new(
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(0.7..3.0),
                ),
                scale: Vector3::new(
                    rng.random_range(0.02..0.25),
                    rng.random_range(0.02..0.25),
                    rng.random_range(0.02..0.25),
                ),
                rotation,
                opacity: rng.random_range(0.05..0.92),
                color: Vector3::new(rng.random(), rng.random(), rng.random()),
            }
        })
        .collect();
    GaussianCloud::new(prims)
}

pub fn test_camera(size: usize) -> Camera {
    let f = size as f64;
    Camera::new(
        f,
        f,
        f / 2.0,
        f / 2.0,
        size,
        size,
        nalgebra::Matrix3::identity(),
        Vector3::zeros(),
    )
    .unwrap()
}

pub fn random_image<R: Rng>(w: usize, h: usize, c: usize, rng: &mut R) -> Image {
    let data: Vec<f64> = (0..w * h * c).map(|_| rng.random()).collect();
    Image::from_data(w, h, c, data).unwrap()
}

/// A dense textured wall in the y = `wall_y` plane spanning
/// [-half, half] in x and z, with an optional rectangular hole (no
/// primitives) of the given half-size centered at the origin.
pub fn wall_cloud(wall_y: f64, half: f64, spacing: f64, hole_half: f64) -> GaussianCloud {
    let mut prims = Vec::new();
    let n = (2.0 * half / spacing).ceil() as i64;
    for ix in 0..=n {
        for iz in 0..=n {
            let x = -half + 2.0 * half * ix as f64 / n as f64;
            let z = -half + 2.0 * half * iz as f64 / n as f64;
            if hole_half > 0.0 && x.abs() < hole_half && z.abs() < hole_half {
                continue;
            }
            let color = Vector3::new(
                0.4 + 0.3 * (x * 3.0).sin().abs(),
                0.5 + 0.2 * (z * 2.0).cos().abs(),
                0.45,
            );
            prims.push(GaussianPrimitive {
                center: Vector3::new(x, wall_y, z),
                scale: Vector3::new(spacing * 0.7, spacing * 0.12, spacing * 0.7),
                rotation: UnitQuaternion::identity(),
                opacity: 0.93,
                color,
            });
        }
    }
    GaussianCloud::new(prims)
}

/// Camera at the origin looking down +y at the wall.
pub fn wall_camera(size: usize, dist: f64) -> Camera {
    Camera::with_hfov(
        Vector3::new(0.0, -dist, 0.0),
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(0.0, 0.0, 1.0),
        1.1,
        size,
        size,
    )
    .unwrap()
}

//! Tiled forward splatting.

use super::project::{project_gaussian, Gaussian2D};
use super::{RasterConfig, RenderOutput};
use crate::image::Image;
use crate::scene::{Camera, GaussianCloud};
use rayon::prelude::*;

/// Projected splats sorted front to back plus per-tile index lists. Shared by
/// the forward and backward passes so both traverse pixels identically.
pub(crate) struct PreparedScene {
    pub splats: Vec<Gaussian2D>,
    /// Per tile: indices into `splats`, already depth-ordered.
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
}

pub(crate) fn prepare(cloud: &GaussianCloud, cam: &Camera, cfg: &RasterConfig) -> PreparedScene {
    let mut splats: Vec<Gaussian2D> = cloud
        .primitives
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| project_gaussian(p, i, cam, cfg))
        .collect();
    // Front-to-back order; ties broken by primitive index so renders are
    // reproducible.
    splats.sort_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.parent.cmp(&b.parent))
    });
    let tiles_x = cam.width.div_ceil(cfg.tile_size);
    let tiles_y = cam.height.div_ceil(cfg.tile_size);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    let t = cfg.tile_size as f64;
    for (si, s) in splats.iter().enumerate() {
        let (x0, x1, y0, y1) = if s.radius.is_finite() {
            (
                ((s.mean2d.x - s.radius) / t).floor().max(0.0) as usize,
                (((s.mean2d.x + s.radius) / t).floor() as isize).clamp(0, tiles_x as isize - 1)
                    as usize,
                ((s.mean2d.y - s.radius) / t).floor().max(0.0) as usize,
                (((s.mean2d.y + s.radius) / t).floor() as isize).clamp(0, tiles_y as isize - 1)
                    as usize,
            )
        } else {
            (0, tiles_x - 1, 0, tiles_y - 1)
        };
        for ty in y0..=y1.min(tiles_y - 1) {
            for tx in x0..=x1.min(tiles_x - 1) {
                tiles[ty * tiles_x + tx].push(si as u32);
            }
        }
    }
    PreparedScene { splats, tiles, tiles_x }
}

struct TileOut {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    color: Vec<f64>,
    transmittance: Vec<f64>,
    depth: Vec<f64>,
    count: Vec<u32>,
}

/// Renders the cloud front to back. Per pixel, for depth-ordered splats i
/// with alpha-weighted Gaussian falloff sigma_i:
///   C   = sum_i c_i sigma_i prod_{j<i} (1 - sigma_j) + background * T_final
///   O   = sum_i sigma_i prod_{j<i} (1 - sigma_j)
///   D   = sum_i z_i sigma_i prod_{j<i} (1 - sigma_j)
pub fn rasterize(cloud: &GaussianCloud, cam: &Camera, cfg: &RasterConfig) -> RenderOutput {
    let prep = prepare(cloud, cam, cfg);
    let (w, h) = (cam.width, cam.height);
    let support_sq = cfg.support_sigmas * cfg.support_sigmas;

    let tile_results: Vec<TileOut> = (0..prep.tiles.len())
        .into_par_iter()
        .map(|ti| {
            let tx = ti % prep.tiles_x;
            let ty = ti / prep.tiles_x;
            let x0 = tx * cfg.tile_size;
            let y0 = ty * cfg.tile_size;
            let tw = cfg.tile_size.min(w - x0);
            let th = cfg.tile_size.min(h - y0);
            let mut out = TileOut {
                x0,
                y0,
                w: tw,
                h: th,
                color: vec![0.0; tw * th * 3],
                transmittance: vec![0.0; tw * th],
                depth: vec![0.0; tw * th],
                count: vec![0; tw * th],
            };
            let list = &prep.tiles[ti];
            for py in 0..th {
                for px in 0..tw {
                    let pc_x = (x0 + px) as f64 + 0.5;
                    let pc_y = (y0 + py) as f64 + 0.5;
                    let mut t_acc = 1.0f64;
                    let (mut cr, mut cg, mut cb) = (0.0, 0.0, 0.0);
                    let mut o_acc = 0.0;
                    let mut d_acc = 0.0;
                    let mut n = 0u32;
                    for &si in list.iter() {
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
                        let sigma = (s.opacity * weight).min(cfg.sigma_max);
                        if sigma < cfg.sigma_skip {
                            continue;
                        }
                        let contrib = sigma * t_acc;
                        cr += s.color.x * contrib;
                        cg += s.color.y * contrib;
                        cb += s.color.z * contrib;
                        o_acc += contrib;
                        d_acc += s.depth * contrib;
                        n += 1;
                        t_acc *= 1.0 - sigma;
                        if t_acc < cfg.transmittance_stop {
                            break;
                        }
                    }
                    let pi = py * tw + px;
                    out.color[pi * 3] = cr + cfg.background.x * t_acc;
                    out.color[pi * 3 + 1] = cg + cfg.background.y * t_acc;
                    out.color[pi * 3 + 2] = cb + cfg.background.z * t_acc;
                    out.transmittance[pi] = o_acc;
                    out.depth[pi] = d_acc;
                    out.count[pi] = n;
                }
            }
            out
        })
        .collect();

    let mut color = Image::zeros(w, h, 3);
    let mut transmittance = Image::zeros(w, h, 1);
    let mut depth = Image::zeros(w, h, 1);
    let mut contributing = vec![0u32; w * h];
    for t in tile_results {
        for py in 0..t.h {
            for px in 0..t.w {
                let (x, y) = (t.x0 + px, t.y0 + py);
                let pi = py * t.w + px;
                for c in 0..3 {
                    color.set(x, y, c, t.color[pi * 3 + c]);
                }
                transmittance.set(x, y, 0, t.transmittance[pi]);
                depth.set(x, y, 0, t.depth[pi]);
                contributing[y * w + x] = t.count[pi];
            }
        }
    }
    RenderOutput { color, transmittance, depth, contributing }
}

/// Renders one output per camera, in parallel. Used for trajectory sequences.
pub fn render_sequence(
    cloud: &GaussianCloud,
    cams: &[Camera],
    cfg: &RasterConfig,
) -> Vec<RenderOutput> {
    cams.par_iter().map(|cam| rasterize(cloud, cam, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Camera, GaussianPrimitive};
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, UnitQuaternion, Vector3};

    fn test_camera() -> Camera {
        Camera::new(16.0, 16.0, 8.0, 8.0, 16, 16, Matrix3::identity(), Vector3::zeros()).unwrap()
    }

    /// Primitive whose projected mean lands exactly on the center of pixel
    /// (8, 8), so its Gaussian weight there is exactly 1.
    fn centered_prim(z: f64, opacity: f64, color: Vector3<f64>) -> GaussianPrimitive {
        let ray = Vector3::new(0.5 / 16.0, 0.5 / 16.0, 1.0);
        GaussianPrimitive {
            center: ray * z,
            scale: Vector3::new(0.05, 0.05, 0.05),
            rotation: UnitQuaternion::identity(),
            opacity,
            color,
        }
    }

    #[test]
    fn empty_cloud_renders_background() {
        let cloud = GaussianCloud::new(vec![]);
        let out = rasterize(&cloud, &test_camera(), &RasterConfig::default());
        assert!(out.color.data().iter().all(|&v| v == 0.0));
        assert!(out.transmittance.data().iter().all(|&v| v == 0.0));
        assert!(out.contributing.iter().all(|&n| n == 0));
    }

    #[test]
    fn single_primitive_blends_one_term() {
        let cloud = GaussianCloud::new(vec![centered_prim(1.0, 0.9, Vector3::new(1.0, 0.0, 0.0))]);
        let out = rasterize(&cloud, &test_camera(), &RasterConfig::default());
        // At the center pixel the Gaussian weight is 1, so C = alpha * color
        // and O = alpha.
        assert_relative_eq!(out.color.get(8, 8, 0), 0.9, epsilon = 1e-12);
        assert_relative_eq!(out.color.get(8, 8, 1), 0.0, epsilon = 1e-12);
        assert_relative_eq!(out.transmittance.get(8, 8, 0), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn occlusion_matches_hand_blend() {
        // Front (z=1): alpha 0.5 green. Back (z=2): alpha 0.99 red. Both have
        // weight 1 at the center pixel, so by the blending formula:
        //   C = 0.5 g + (1 - 0.5) * 0.99 r,  O = 0.5 + 0.5 * 0.99.
        let cloud = GaussianCloud::new(vec![
            centered_prim(1.0, 0.5, Vector3::new(0.0, 1.0, 0.0)),
            centered_prim(2.0, 0.99, Vector3::new(1.0, 0.0, 0.0)),
        ]);
        let out = rasterize(&cloud, &test_camera(), &RasterConfig::default());
        assert_relative_eq!(out.color.get(8, 8, 1), 0.5, epsilon = 1e-12);
        assert_relative_eq!(out.color.get(8, 8, 0), 0.5 * 0.99, epsilon = 1e-12);
        assert_relative_eq!(out.transmittance.get(8, 8, 0), 0.5 + 0.5 * 0.99, epsilon = 1e-12);
        // Depth blends with the same weights.
        assert_relative_eq!(
            out.depth.get(8, 8, 0),
            1.0 * 0.5 + 2.0 * 0.5 * 0.99,
            epsilon = 1e-12
        );
    }

    #[test]
    fn renders_are_bit_reproducible() {
        let prims: Vec<_> = (0..40)
            .map(|i| {
                let f = i as f64;
                GaussianPrimitive {
                    center: Vector3::new((f * 0.37).sin() * 0.3, (f * 0.71).cos() * 0.3, 1.5 + (f * 0.13).sin()),
                    scale: Vector3::new(0.05, 0.08, 0.03),
                    rotation: UnitQuaternion::from_euler_angles(f * 0.1, f * 0.2, f * 0.3),
                    opacity: 0.3 + 0.4 * ((f * 0.29).sin() * 0.5 + 0.5),
                    color: Vector3::new(0.2, 0.5, 0.8),
                }
            })
            .collect();
        let cloud = GaussianCloud::new(prims);
        let cam = test_camera();
        let cfg = RasterConfig::default();
        let a = rasterize(&cloud, &cam, &cfg);
        let b = rasterize(&cloud, &cam, &cfg);
        assert_eq!(a.color.data(), b.color.data());
        assert_eq!(a.transmittance.data(), b.transmittance.data());
    }
}

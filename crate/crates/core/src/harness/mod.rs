//! Synthetic scene construction and evaluation support.
//!
//! Scenes are textured axis-aligned rooms built from dense Gaussian sheets
//! plus box occluders. Ground-truth images are renders of the ground-truth
//! cloud through the same rasterizer, so a perfect reconstruction is
//! achievable in principle. Observability masks come from ray casting the
//! parametric geometry, independent of any trained model.

mod eval;
mod io;
mod surrogate;

pub use eval::{evaluate, MetricsReport, MetricsRow, Split};
pub use io::{
    load_run_config, load_scene, save_metrics, save_run_config, save_scene, summarize_metrics,
};
pub use surrogate::{
    build_surrogate_sequence_model, selection_rates, SurrogateProvider, SurrogateVariants,
};

use crate::error::{Result, SplatError};
use crate::image::Image;
use crate::raster::{rasterize, RasterConfig};
use crate::recon::RunConfig;
use crate::scene::{
    build_cloud_from_points, Camera, GaussianCloud, GaussianPrimitive, ViewKind, ViewRecord,
};
use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rayon::prelude::*;

/// Axis-aligned rectangle: a point, two orthogonal in-plane unit axes with
/// extents, used for walls and box faces.
#[derive(Clone, Debug)]
pub struct Rect3 {
    pub origin: Vector3<f64>,
    pub u_axis: Vector3<f64>,
    pub v_axis: Vector3<f64>,
    pub u_len: f64,
    pub v_len: f64,
}

impl Rect3 {
    fn normal(&self) -> Vector3<f64> {
        self.u_axis.cross(&self.v_axis)
    }

    /// Ray-rectangle intersection distance, if any.
    fn hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let n = self.normal();
        let denom = n.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(&(self.origin - origin)) / denom;
        if t <= 1e-9 {
            return None;
        }
        let p = origin + dir * t;
        let d = p - self.origin;
        let u = d.dot(&self.u_axis);
        let v = d.dot(&self.v_axis);
        if u < -1e-9 || u > self.u_len + 1e-9 || v < -1e-9 || v > self.v_len + 1e-9 {
            return None;
        }
        Some(t)
    }
}

/// Scene geometry used for visibility ray casting: room surfaces and
/// occluder faces, all rectangles.
#[derive(Clone, Debug, Default)]
pub struct SceneGeometry {
    pub rects: Vec<Rect3>,
}

impl SceneGeometry {
    /// Nearest hit distance along a ray.
    pub fn raycast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let mut best: Option<f64> = None;
        for r in &self.rects {
            if let Some(t) = r.hit(origin, dir) {
                if best.map(|b| t < b).unwrap_or(true) {
                    best = Some(t);
                }
            }
        }
        best
    }

    /// Whether the world point is visible from the camera: in front of it,
    /// inside the image bounds, and not blocked by nearer geometry.
    pub fn visible_from(&self, point: &Vector3<f64>, cam: &Camera) -> bool {
        let p_cam = cam.world_to_camera(point);
        if p_cam.z <= 0.01 {
            return false;
        }
        let px = cam.project_cam(&p_cam);
        if px.x < 0.0 || px.x >= cam.width as f64 || px.y < 0.0 || px.y >= cam.height as f64 {
            return false;
        }
        let origin = cam.center();
        let to_point = point - origin;
        let dist = to_point.norm();
        let dir = to_point / dist;
        match self.raycast(&origin, &dir) {
            // The point lies on geometry, so the nearest hit along the ray is
            // the point itself unless something sits strictly in between.
            Some(t) => t >= dist - 1e-6 * dist.max(1.0),
            None => true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub room: Vector3<f64>,
    pub resolution: usize,
    pub occluder_count: usize,
    pub texture_seed: u64,
    pub sheet_spacing: f64,
    pub n_inputs: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            room: Vector3::new(4.0, 3.0, 2.5),
            resolution: 64,
            occluder_count: 2,
            texture_seed: 0,
            sheet_spacing: 0.09,
            n_inputs: 6,
        }
    }
}

impl SceneSpec {
    pub fn from_run_config(cfg: &RunConfig) -> Self {
        SceneSpec {
            resolution: cfg.resolution,
            occluder_count: cfg.occluders,
            texture_seed: cfg.seed,
            n_inputs: cfg.n_inputs,
            ..SceneSpec::default()
        }
    }
}

pub struct SyntheticScene {
    pub gt_cloud: GaussianCloud,
    pub inputs: Vec<ViewRecord>,
    pub eval_views: Vec<ViewRecord>,
    /// Per eval view: 1 where the pixel's scene point is visible from some
    /// input view.
    pub eval_masks: Vec<Image>,
    pub geometry: SceneGeometry,
    pub spec: SceneSpec,
}

impl SyntheticScene {
    /// Fraction of pixels not covered by any input view, per eval view.
    pub fn unobservable_fraction(&self, view: usize) -> f64 {
        1.0 - self.eval_masks[view].mean()
    }
}

fn hash01(seed: u64, a: u64, b: u64, c: u64) -> f64 {
    let mut h = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(a.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(b.wrapping_mul(0x94D0_49BB_1331_11EB))
        .wrapping_add(c.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    h ^= h >> 30;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn surface_color(seed: u64, surface: u64, u: f64, v: f64) -> Vector3<f64> {
    let palettes = [
        Vector3::new(0.75, 0.45, 0.35),
        Vector3::new(0.35, 0.55, 0.75),
        Vector3::new(0.45, 0.70, 0.40),
        Vector3::new(0.70, 0.65, 0.35),
        Vector3::new(0.55, 0.40, 0.65),
        Vector3::new(0.65, 0.65, 0.65),
        Vector3::new(0.80, 0.55, 0.30),
        Vector3::new(0.40, 0.60, 0.60),
    ];
    let base = palettes[(surface as usize) % palettes.len()];
    let stripes = 0.18 * ((u * 7.3 + surface as f64).sin() * (v * 5.1).cos());
    let checker = if ((u / 0.45).floor() as i64 + (v / 0.45).floor() as i64) % 2 == 0 {
        0.10
    } else {
        -0.10
    };
    let cell_u = (u / 0.15).floor() as u64;
    let cell_v = (v / 0.15).floor() as u64;
    let noise = 0.08 * (hash01(seed, surface, cell_u, cell_v) - 0.5);
    let f = 1.0 + stripes + checker + noise;
    Vector3::new(
        (base.x * f).clamp(0.02, 0.98),
        (base.y * f).clamp(0.02, 0.98),
        (base.z * f).clamp(0.02, 0.98),
    )
}

fn sheet_primitives(
    rect: &Rect3,
    surface: u64,
    seed: u64,
    spacing: f64,
    out: &mut Vec<GaussianPrimitive>,
) {
    let nu = (rect.u_len / spacing).ceil() as usize;
    let nv = (rect.v_len / spacing).ceil() as usize;
    let scale = spacing * 0.65;
    // Thin in the normal direction so the sheet reads as a surface.
    let normal = rect.normal();
    for iu in 0..=nu {
        for iv in 0..=nv {
            let u = (iu as f64 / nu as f64) * rect.u_len;
            let v = (iv as f64 / nv as f64) * rect.v_len;
            let center = rect.origin + rect.u_axis * u + rect.v_axis * v;
            let color = surface_color(seed, surface, u, v);
            // Rotation aligning the z axis with the sheet normal keeps the
            // thin axis perpendicular to the surface.
            let rotation = UnitQuaternion::rotation_between(&Vector3::z(), &normal)
                .unwrap_or_else(UnitQuaternion::identity);
            out.push(GaussianPrimitive {
                center,
                scale: Vector3::new(scale, scale, scale * 0.15),
                rotation,
                opacity: 0.92,
                color,
            });
        }
    }
}

fn room_rects(room: &Vector3<f64>) -> Vec<Rect3> {
    let (lx, ly, lz) = (room.x, room.y, room.z);
    vec![
        // Floor (z = 0) and ceiling (z = lz).
        Rect3 {
            origin: Vector3::zeros(),
            u_axis: Vector3::x(),
            v_axis: Vector3::y(),
            u_len: lx,
            v_len: ly,
        },
        Rect3 {
            origin: Vector3::new(0.0, 0.0, lz),
            u_axis: Vector3::y(),
            v_axis: Vector3::x(),
            u_len: ly,
            v_len: lx,
        },
        // Walls y = 0, y = ly, x = 0, x = lx.
        Rect3 {
            origin: Vector3::zeros(),
            u_axis: Vector3::x(),
            v_axis: Vector3::z(),
            u_len: lx,
            v_len: lz,
        },
        Rect3 {
            origin: Vector3::new(0.0, ly, 0.0),
            u_axis: Vector3::z(),
            v_axis: Vector3::x(),
            u_len: lz,
            v_len: lx,
        },
        Rect3 {
            origin: Vector3::zeros(),
            u_axis: Vector3::z(),
            v_axis: Vector3::y(),
            u_len: lz,
            v_len: ly,
        },
        Rect3 {
            origin: Vector3::new(lx, 0.0, 0.0),
            u_axis: Vector3::y(),
            v_axis: Vector3::z(),
            u_len: ly,
            v_len: lz,
        },
    ]
}

fn box_rects(min: &Vector3<f64>, max: &Vector3<f64>) -> Vec<Rect3> {
    let d = max - min;
    vec![
        Rect3 {
            origin: *min,
            u_axis: Vector3::y(),
            v_axis: Vector3::x(),
            u_len: d.y,
            v_len: d.x,
        },
        Rect3 {
            origin: Vector3::new(min.x, min.y, max.z),
            u_axis: Vector3::x(),
            v_axis: Vector3::y(),
            u_len: d.x,
            v_len: d.y,
        },
        Rect3 {
            origin: *min,
            u_axis: Vector3::z(),
            v_axis: Vector3::x(),
            u_len: d.z,
            v_len: d.x,
        },
        Rect3 {
            origin: Vector3::new(min.x, max.y, min.z),
            u_axis: Vector3::x(),
            v_axis: Vector3::z(),
            u_len: d.x,
            v_len: d.z,
        },
        Rect3 {
            origin: *min,
            u_axis: Vector3::y(),
            v_axis: Vector3::z(),
            u_len: d.y,
            v_len: d.z,
        },
        Rect3 {
            origin: Vector3::new(max.x, min.y, min.z),
            u_axis: Vector3::z(),
            v_axis: Vector3::y(),
            u_len: d.z,
            v_len: d.y,
        },
    ]
}

/// Builds the textured room scene: ground-truth cloud, inside-out input
/// views with deliberate coverage gaps (an unseen ceiling/wall sector plus
/// occluded patches behind boxes), eval views probing those regions, and
/// geometric observability masks. Deterministic for a fixed spec.
pub fn synthesize_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    if spec.resolution < 32 {
        return Err(SplatError::invalid_input("scene resolution must be at least 32"));
    }
    if spec.room.x < 1.0 || spec.room.y < 1.0 || spec.room.z < 1.0 {
        return Err(SplatError::invalid_input("room dimensions must be at least 1 unit"));
    }
    let mut geometry = SceneGeometry { rects: room_rects(&spec.room) };
    let mut prims = Vec::new();
    for (i, rect) in geometry.rects.clone().iter().enumerate() {
        sheet_primitives(rect, i as u64, spec.texture_seed, spec.sheet_spacing, &mut prims);
    }
    // Occluder boxes on the floor. Placement keeps clearance from the room
    // center where the cameras live: a splat centimeters from a camera
    // projects as image-filling fog, which is physically right but makes the
    // view useless.
    let room_center_xy = Vector3::new(spec.room.x / 2.0, spec.room.y / 2.0, 0.0);
    for b in 0..spec.occluder_count {
        let angle = std::f64::consts::TAU
            * (hash01(spec.texture_seed, 101, b as u64, 0) + b as f64 / spec.occluder_count.max(1) as f64);
        let max_radius = (spec.room.x.min(spec.room.y) / 2.0 - 0.6).max(1.0);
        let radius = 1.0 + (max_radius - 1.0) * hash01(spec.texture_seed, 102, b as u64, 1);
        let size = Vector3::new(
            0.35 + 0.2 * hash01(spec.texture_seed, 103, b as u64, 2),
            0.35 + 0.2 * hash01(spec.texture_seed, 104, b as u64, 3),
            0.6 + 0.3 * hash01(spec.texture_seed, 105, b as u64, 4),
        );
        let cx = room_center_xy.x + radius * angle.cos();
        let cy = room_center_xy.y + radius * angle.sin();
        let min = Vector3::new(
            (cx - size.x / 2.0).clamp(0.15, spec.room.x - 0.6),
            (cy - size.y / 2.0).clamp(0.15, spec.room.y - 0.6),
            0.0,
        );
        let max = Vector3::new(
            (min.x + size.x).min(spec.room.x - 0.15),
            (min.y + size.y).min(spec.room.y - 0.15),
            size.z.min(spec.room.z - 0.3),
        );
        let faces = box_rects(&min, &max);
        for (i, rect) in faces.iter().enumerate() {
            sheet_primitives(
                rect,
                (6 + b * 6 + i) as u64,
                spec.texture_seed,
                spec.sheet_spacing * 0.8,
                &mut prims,
            );
        }
        geometry.rects.extend(faces);
    }
    let gt_cloud = GaussianCloud::new(prims);

    let raster_cfg = RasterConfig::default();
    let res = spec.resolution;
    let hfov = 1.25; // ~72 degrees
    let center = Vector3::new(spec.room.x / 2.0, spec.room.y / 2.0, spec.room.z * 0.5);
    let ring = 0.12 * spec.room.x.min(spec.room.y);

    // Inside-out inputs around the full ring, pitched slightly down: the
    // walls are covered while the ceiling band, the near floor, and the
    // shadows behind the occluders stay unobserved. Those gaps are the kind
    // a pose orbiting an input view can reach, so generation has something
    // to say about every one of them.
    let mut input_cams = Vec::new();
    for k in 0..spec.n_inputs {
        let yaw = std::f64::consts::TAU * k as f64 / spec.n_inputs as f64;
        let dir = Vector3::new(yaw.cos(), yaw.sin(), -0.10);
        let eye = center + Vector3::new(yaw.cos(), yaw.sin(), 0.0) * ring;
        let cam = Camera::with_hfov(eye, eye + dir, Vector3::z(), hfov, res, res)?;
        input_cams.push(cam);
    }

    let inputs: Vec<ViewRecord> = input_cams
        .par_iter()
        .map(|cam| {
            let render = rasterize(&gt_cloud, cam, &raster_cfg);
            ViewRecord::new(cam.clone(), render.color, ViewKind::Input)
        })
        .collect::<Result<_>>()?;

    // Eval views are input poses nudged upward and sideways: the visible
    // field then includes thin unobserved strips at the ceiling boundary and
    // occlusion shadows behind the boxes, the bands that orbiting candidate
    // poses can actually reach.
    let mut eval_cams = Vec::new();
    for k in 0..6 {
        let base = &input_cams[(k + 1) % input_cams.len()];
        let side = if k % 2 == 0 { 0.16 } else { -0.16 };
        let eye = base.center() + base.right_world() * side + Vector3::new(0.0, 0.0, 0.10);
        let target = eye + base.forward_world() + Vector3::new(0.0, 0.0, 0.22);
        eval_cams.push(Camera::with_hfov(eye, target, Vector3::z(), hfov, res, res)?);
    }

    let eval_views: Vec<ViewRecord> = eval_cams
        .par_iter()
        .map(|cam| {
            let render = rasterize(&gt_cloud, cam, &raster_cfg);
            ViewRecord::new(cam.clone(), render.color, ViewKind::Input)
        })
        .collect::<Result<_>>()?;

    let eval_masks: Vec<Image> = eval_cams
        .par_iter()
        .map(|cam| observability_mask(cam, &input_cams, &geometry))
        .collect();

    let scene = SyntheticScene {
        gt_cloud,
        inputs,
        eval_views,
        eval_masks,
        geometry,
        spec: spec.clone(),
    };
    if !(0..scene.eval_views.len()).any(|i| scene.unobservable_fraction(i) > 0.05) {
        return Err(SplatError::invalid_state(
            "synthetic scene has no eval view with over 5% unobservable pixels",
        ));
    }
    Ok(scene)
}

/// Pure-geometry observability: for each eval pixel, cast the view ray to the
/// nearest surface point and test visibility from every input camera.
pub fn observability_mask(
    eval_cam: &Camera,
    input_cams: &[Camera],
    geometry: &SceneGeometry,
) -> Image {
    let origin = eval_cam.center();
    let mut mask = Image::zeros(eval_cam.width, eval_cam.height, 1);
    for y in 0..eval_cam.height {
        for x in 0..eval_cam.width {
            let px = Vector3::new(
                (x as f64 + 0.5 - eval_cam.cx) / eval_cam.fx,
                (y as f64 + 0.5 - eval_cam.cy) / eval_cam.fy,
                1.0,
            );
            let dir_world = (eval_cam.rotation.transpose() * px).normalize();
            let Some(t) = geometry.raycast(&origin, &dir_world) else {
                // Nothing there: nothing to reconstruct, count as observable.
                mask.set(x, y, 0, 1.0);
                continue;
            };
            let point = origin + dir_world * t;
            let visible = input_cams.iter().any(|cam| geometry.visible_from(&point, cam));
            mask.set(x, y, 0, if visible { 1.0 } else { 0.0 });
        }
    }
    mask
}

/// Noisy ground-truth point sampling: primitive centers visible from at
/// least one input view, jittered, standing in for an external
/// structure-from-motion point cloud.
pub fn init_points_from_scene<R: Rng + ?Sized>(
    scene: &SyntheticScene,
    count: usize,
    jitter_sigma: f64,
    seed: u64,
    rng: &mut R,
) -> Result<GaussianCloud> {
    let input_cams: Vec<&Camera> = scene.inputs.iter().map(|v| &v.camera).collect();
    let visible: Vec<usize> = (0..scene.gt_cloud.len())
        .into_par_iter()
        .filter(|&i| {
            let p = &scene.gt_cloud.primitives[i].center;
            input_cams.iter().any(|cam| scene.geometry.visible_from(p, cam))
        })
        .collect();
    if visible.is_empty() {
        return Err(SplatError::invalid_state("no ground-truth points visible from inputs"));
    }
    let chosen = crate::scene::sample_indices(visible.len(), count, rng);
    let points: Vec<Vector3<f64>> =
        chosen.iter().map(|&i| scene.gt_cloud.primitives[visible[i]].center).collect();
    let colors: Vec<Vector3<f64>> =
        chosen.iter().map(|&i| scene.gt_cloud.primitives[visible[i]].color).collect();
    build_cloud_from_points(&points, &colors, jitter_sigma, seed)
}

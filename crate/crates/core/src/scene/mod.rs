//! Scene representation: Gaussian primitives, optimizable clouds, cameras,
//! and posed views.

mod camera;
mod io;

pub use camera::{Camera, ViewKind, ViewRecord};
pub use io::{cloud_from_str, cloud_to_string, load_cloud, save_cloud, CLOUD_HEADER};

use crate::error::{Result, SplatError};
use crate::math::standard_normal;
use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;

/// One anisotropic Gaussian primitive.
///
/// `scale` is strictly positive and `opacity` lies in (0,1); the optimizer
/// steps both through unconstrained log/logit space so plain gradient updates
/// cannot violate either bound. `color` is degree-0 linear RGB (the feature
/// vector is taken to be the color directly).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub center: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
}

impl GaussianPrimitive {
    pub fn new(
        center: Vector3<f64>,
        scale: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        opacity: f64,
        color: Vector3<f64>,
    ) -> Result<Self> {
        if !(scale.x > 0.0 && scale.y > 0.0 && scale.z > 0.0) {
            return Err(SplatError::invalid_input("primitive scale must be positive"));
        }
        if !(opacity > 0.0 && opacity < 1.0) {
            return Err(SplatError::invalid_input("primitive opacity must be in (0,1)"));
        }
        Ok(GaussianPrimitive { center, scale, rotation, opacity, color })
    }

    /// World-space covariance R(q) diag(s^2) R(q)^T.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let d = Matrix3::from_diagonal(&Vector3::new(
            self.scale.x * self.scale.x,
            self.scale.y * self.scale.y,
            self.scale.z * self.scale.z,
        ));
        r * d * r.transpose()
    }
}

/// World-space covariance from raw scale/rotation inputs, with validation.
/// The quaternion need not be bit-exactly unit but must be within 1e-4.
pub fn covariance_from_scale_rotation(
    scale: &Vector3<f64>,
    q: &Quaternion<f64>,
) -> Result<Matrix3<f64>> {
    if !(scale.x > 0.0 && scale.y > 0.0 && scale.z > 0.0) {
        return Err(SplatError::invalid_input("scale must be positive component-wise"));
    }
    let norm = q.norm();
    if (norm - 1.0).abs() > 1e-4 {
        return Err(SplatError::invalid_input(format!(
            "quaternion norm {norm} deviates from 1 beyond 1e-4"
        )));
    }
    let uq = UnitQuaternion::from_quaternion(*q);
    let r = uq.to_rotation_matrix().into_inner();
    let d = Matrix3::from_diagonal(&Vector3::new(
        scale.x * scale.x,
        scale.y * scale.y,
        scale.z * scale.z,
    ));
    Ok(r * d * r.transpose())
}

/// Per-primitive densification statistics accumulated across backward passes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    pub screen_grad_sum: Vec<f64>,
    pub screen_grad_max: Vec<f64>,
    pub updates: Vec<u32>,
}

impl DensifyStats {
    pub fn with_len(n: usize) -> Self {
        DensifyStats {
            screen_grad_sum: vec![0.0; n],
            screen_grad_max: vec![0.0; n],
            updates: vec![0; n],
        }
    }

    pub fn reset(&mut self) {
        self.screen_grad_sum.iter_mut().for_each(|v| *v = 0.0);
        self.screen_grad_max.iter_mut().for_each(|v| *v = 0.0);
        self.updates.iter_mut().for_each(|v| *v = 0);
    }

    pub fn accumulate(&mut self, screen_grads: &[f64]) {
        for (i, &g) in screen_grads.iter().enumerate() {
            self.screen_grad_sum[i] += g;
            if g > self.screen_grad_max[i] {
                self.screen_grad_max[i] = g;
            }
            self.updates[i] += 1;
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.updates[i] == 0 {
            0.0
        } else {
            self.screen_grad_sum[i] / self.updates[i] as f64
        }
    }
}

/// An ordered set of primitives plus densification bookkeeping. Order is
/// stable between optimizer steps and changes only at densify/prune events.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    pub primitives: Vec<GaussianPrimitive>,
    pub stats: DensifyStats,
}

impl GaussianCloud {
    pub fn new(primitives: Vec<GaussianPrimitive>) -> Self {
        let n = primitives.len();
        GaussianCloud { primitives, stats: DensifyStats::with_len(n) }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Diagonal extent of the primitive centers' bounding box. Used to scale
    /// position learning rates and densification size thresholds.
    pub fn extent(&self) -> f64 {
        if self.primitives.is_empty() {
            return 0.0;
        }
        let mut lo = self.primitives[0].center;
        let mut hi = lo;
        for p in &self.primitives {
            lo = lo.inf(&p.center);
            hi = hi.sup(&p.center);
        }
        (hi - lo).norm()
    }
}

/// Builds a cloud from a point set: one primitive per point, isotropic scale
/// set to the mean nearest-neighbor distance, opacity 0.1, identity rotation.
/// Centers are jittered with Gaussian noise of the given sigma; the result is
/// deterministic for a fixed seed.
pub fn build_cloud_from_points(
    points: &[Vector3<f64>],
    colors: &[Vector3<f64>],
    jitter_sigma: f64,
    seed: u64,
) -> Result<GaussianCloud> {
    if points.is_empty() {
        return Err(SplatError::invalid_input("cannot build a cloud from an empty point list"));
    }
    if points.len() != colors.len() {
        return Err(SplatError::invalid_input("points and colors must have equal length"));
    }
    let mut rng = crate::math::seeded_rng(seed, 0);
    let nn = mean_nearest_neighbor_distance(points).max(1e-4);
    let mut primitives = Vec::with_capacity(points.len());
    for (p, c) in points.iter().zip(colors.iter()) {
        let jitter = Vector3::new(
            standard_normal(&mut rng),
            standard_normal(&mut rng),
            standard_normal(&mut rng),
        ) * jitter_sigma;
        primitives.push(GaussianPrimitive {
            center: p + jitter,
            scale: Vector3::new(nn, nn, nn),
            rotation: UnitQuaternion::identity(),
            opacity: 0.1,
            color: *c,
        });
    }
    Ok(GaussianCloud::new(primitives))
}

fn mean_nearest_neighbor_distance(points: &[Vector3<f64>]) -> f64 {
    if points.len() < 2 {
        // A lone point has no neighbor; fall back to a nominal scene scale.
        return 0.1;
    }
    // Subsample for very large sets; the estimate only seeds initial scales.
    let step = (points.len() / 4000).max(1);
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, p) in points.iter().enumerate().step_by(step) {
        let mut best = f64::INFINITY;
        for (j, q) in points.iter().enumerate() {
            if i != j {
                let d = (p - q).norm_squared();
                if d < best {
                    best = d;
                }
            }
        }
        total += best.sqrt();
        count += 1;
    }
    total / count as f64
}

/// Samples `count` indices without replacement, deterministically.
pub fn sample_indices<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let take = count.min(n);
    for i in 0..take {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(take);
    idx
}

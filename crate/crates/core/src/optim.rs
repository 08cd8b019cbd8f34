//! Per-attribute adaptive optimization and adaptive density control.
//!
//! The optimizer steps each attribute class with bias-corrected first and
//! second moments. Steps happen in unconstrained space (log scale, logit
//! opacity, quaternion tangent), so scale positivity, opacity bounds, and
//! unit rotations survive arbitrary gradient updates.

use crate::math::{logit, sigmoid, standard_normal};
use crate::raster::CloudGradients;
use crate::scene::{DensifyStats, GaussianCloud, GaussianPrimitive};
use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector4};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct OptimizerConfig {
    /// Center learning rate, multiplied by the scene extent.
    pub lr_center: f64,
    /// The center rate decays exponentially to lr_center * this ratio over
    /// the phase.
    pub lr_center_final_ratio: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr_center: 1.6e-4,
            lr_center_final_ratio: 0.01,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Moments {
    m_center: Vec<Vector3<f64>>,
    v_center: Vec<Vector3<f64>>,
    m_scale: Vec<Vector3<f64>>,
    v_scale: Vec<Vector3<f64>>,
    m_rot: Vec<Vector4<f64>>,
    v_rot: Vec<Vector4<f64>>,
    m_opacity: Vec<f64>,
    v_opacity: Vec<f64>,
    m_color: Vec<Vector3<f64>>,
    v_color: Vec<Vector3<f64>>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Moments {
            m_center: vec![Vector3::zeros(); n],
            v_center: vec![Vector3::zeros(); n],
            m_scale: vec![Vector3::zeros(); n],
            v_scale: vec![Vector3::zeros(); n],
            m_rot: vec![Vector4::zeros(); n],
            v_rot: vec![Vector4::zeros(); n],
            m_opacity: vec![0.0; n],
            v_opacity: vec![0.0; n],
            m_color: vec![Vector3::zeros(); n],
            v_color: vec![Vector3::zeros(); n],
        }
    }

    /// Rebuilds moment rows: `sources[i]` is the old row backing new row i,
    /// or None for freshly created primitives (zero-initialized).
    fn remap(&mut self, sources: &[Option<usize>]) {
        fn take<T: Copy + Default>(old: &[T], sources: &[Option<usize>]) -> Vec<T> {
            sources.iter().map(|s| s.map(|i| old[i]).unwrap_or_default()).collect()
        }
        self.m_center = take(&self.m_center, sources);
        self.v_center = take(&self.v_center, sources);
        self.m_scale = take(&self.m_scale, sources);
        self.v_scale = take(&self.v_scale, sources);
        self.m_rot = take(&self.m_rot, sources);
        self.v_rot = take(&self.v_rot, sources);
        self.m_opacity = take(&self.m_opacity, sources);
        self.v_opacity = take(&self.v_opacity, sources);
        self.m_color = take(&self.m_color, sources);
        self.v_color = take(&self.v_color, sources);
    }
}

pub struct CloudOptimizer {
    cfg: OptimizerConfig,
    moments: Moments,
    step_count: u64,
    extent: f64,
}

impl CloudOptimizer {
    pub fn new(cfg: OptimizerConfig, n: usize, extent: f64) -> Self {
        CloudOptimizer { cfg, moments: Moments::zeros(n), step_count: 0, extent: extent.max(1e-6) }
    }

    /// One optimizer step. `progress` in [0,1] drives the center-rate decay.
    pub fn step(&mut self, cloud: &mut GaussianCloud, grads: &CloudGradients, progress: f64) {
        assert_eq!(cloud.len(), grads.len());
        self.step_count += 1;
        let t = self.step_count;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        let lr_center = self.cfg.lr_center
            * self.extent
            * self.cfg.lr_center_final_ratio.powf(progress.clamp(0.0, 1.0));
        let eps = self.cfg.eps;

        let adam3 =
            |m: &mut Vector3<f64>, v: &mut Vector3<f64>, g: &Vector3<f64>, lr: f64| {
                let mut delta = Vector3::zeros();
                for k in 0..3 {
                    m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                    v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                    let mh = m[k] / bc1;
                    let vh = v[k] / bc2;
                    delta[k] = -lr * mh / (vh.sqrt() + eps);
                }
                delta
            };

        for i in 0..cloud.len() {
            let p = &mut cloud.primitives[i];
            let d = adam3(
                &mut self.moments.m_center[i],
                &mut self.moments.v_center[i],
                &grads.center[i],
                lr_center,
            );
            p.center += d;
            // Scale steps in log space so positivity is structural.
            let d = adam3(
                &mut self.moments.m_scale[i],
                &mut self.moments.v_scale[i],
                &grads.log_scale[i],
                self.cfg.lr_scale,
            );
            p.scale = Vector3::new(
                (p.scale.x.ln() + d.x).exp(),
                (p.scale.y.ln() + d.y).exp(),
                (p.scale.z.ln() + d.z).exp(),
            );
            {
                let g = &grads.rotation[i];
                let m = &mut self.moments.m_rot[i];
                let v = &mut self.moments.v_rot[i];
                let mut q = Vector4::new(p.rotation.w, p.rotation.i, p.rotation.j, p.rotation.k);
                for k in 0..4 {
                    m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                    v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                    let mh = m[k] / bc1;
                    let vh = v[k] / bc2;
                    q[k] -= self.cfg.lr_rotation * mh / (vh.sqrt() + eps);
                }
                p.rotation = UnitQuaternion::from_quaternion(Quaternion::new(q.x, q.y, q.z, q.w));
            }
            {
                let g = grads.opacity_logit[i];
                let m = &mut self.moments.m_opacity[i];
                let v = &mut self.moments.v_opacity[i];
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                let l = logit(p.opacity.clamp(1e-6, 1.0 - 1e-6))
                    - self.cfg.lr_opacity * mh / (vh.sqrt() + eps);
                p.opacity = sigmoid(l).clamp(1e-6, 1.0 - 1e-6);
            }
            let d = adam3(
                &mut self.moments.m_color[i],
                &mut self.moments.v_color[i],
                &grads.color[i],
                self.cfg.lr_color,
            );
            p.color = Vector3::new(
                (p.color.x + d.x).clamp(0.0, 1.0),
                (p.color.y + d.y).clamp(0.0, 1.0),
                (p.color.z + d.z).clamp(0.0, 1.0),
            );
        }
    }

    fn remap(&mut self, sources: &[Option<usize>]) {
        self.moments.remap(sources);
    }

    fn reset_opacity_state(&mut self) {
        self.moments.m_opacity.iter_mut().for_each(|v| *v = 0.0);
        self.moments.v_opacity.iter_mut().for_each(|v| *v = 0.0);
    }
}

#[derive(Clone, Debug)]
pub struct DensifyConfig {
    pub interval: usize,
    /// Mean screen-space gradient norm above which a primitive is densified.
    pub grad_threshold: f64,
    /// Primitives larger than this fraction of the scene extent split
    /// instead of cloning.
    pub scale_threshold_ratio: f64,
    /// Children of a split shrink by this factor.
    pub split_shrink: f64,
    pub prune_opacity: f64,
    pub opacity_reset_interval: usize,
    pub opacity_reset_max: f64,
    /// Densification stops adding above this count.
    pub max_primitives: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            interval: 100,
            grad_threshold: 8e-7,
            scale_threshold_ratio: 0.01,
            split_shrink: 1.6,
            prune_opacity: 0.005,
            opacity_reset_interval: 3000,
            opacity_reset_max: 0.01,
            max_primitives: 20_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyOutcome {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub opacity_reset: bool,
}

/// Runs clone/split/prune plus the periodic opacity clamp for iteration `it`
/// within a phase of `phase_len` iterations. Density control is active only
/// in the first half of the phase. The optimizer's moment rows are remapped
/// alongside the primitive list.
pub fn densify_and_prune<R: Rng + ?Sized>(
    cloud: &mut GaussianCloud,
    optimizer: &mut CloudOptimizer,
    it: usize,
    phase_len: usize,
    cfg: &DensifyConfig,
    extent: f64,
    rng: &mut R,
) -> DensifyOutcome {
    let mut outcome = DensifyOutcome::default();
    if it >= phase_len / 2 {
        return outcome;
    }
    if it > 0 && it % cfg.interval == 0 {
        let scale_split = cfg.scale_threshold_ratio * extent;
        // Growth budget for this cycle; clones and splits stop once the cap
        // is reached.
        let mut budget = cfg.max_primitives.saturating_sub(cloud.len());
        let mut new_prims: Vec<GaussianPrimitive> = Vec::with_capacity(cloud.len() + 64);
        let mut sources: Vec<Option<usize>> = Vec::with_capacity(cloud.len() + 64);
        for i in 0..cloud.len() {
            let p = cloud.primitives[i].clone();
            if p.opacity < cfg.prune_opacity {
                outcome.pruned += 1;
                continue;
            }
            let hot = cloud.stats.updates[i] > 0 && cloud.stats.mean(i) > cfg.grad_threshold;
            if !hot || budget == 0 {
                new_prims.push(p);
                sources.push(Some(i));
                continue;
            }
            budget -= 1;
            let max_scale = p.scale.x.max(p.scale.y).max(p.scale.z);
            if max_scale <= scale_split {
                // Clone in place; subsequent gradients separate the copies.
                new_prims.push(p.clone());
                sources.push(Some(i));
                new_prims.push(p);
                sources.push(None);
                outcome.cloned += 1;
            } else {
                // Split into two children sampled from the parent's own
                // distribution, with shrunk scales.
                let cov_chol = p
                    .covariance()
                    .cholesky()
                    .map(|c| c.l())
                    .unwrap_or_else(|| nalgebra::Matrix3::from_diagonal(&p.scale));
                for _ in 0..2 {
                    let z = Vector3::new(
                        standard_normal(rng),
                        standard_normal(rng),
                        standard_normal(rng),
                    );
                    let mut child = p.clone();
                    child.center = p.center + cov_chol * z;
                    child.scale = p.scale / cfg.split_shrink;
                    new_prims.push(child);
                    sources.push(None);
                }
                outcome.split += 1;
            }
        }
        cloud.primitives = new_prims;
        cloud.stats = DensifyStats::with_len(cloud.primitives.len());
        optimizer.remap(&sources);
    }
    if it > 0 && cfg.opacity_reset_interval > 0 && it % cfg.opacity_reset_interval == 0 {
        for p in cloud.primitives.iter_mut() {
            p.opacity = p.opacity.min(cfg.opacity_reset_max);
        }
        optimizer.reset_opacity_state();
        outcome.opacity_reset = true;
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::seeded_rng;
    use crate::scene::build_cloud_from_points;

    fn small_cloud(n: usize) -> GaussianCloud {
        let pts: Vec<_> =
            (0..n).map(|i| Vector3::new(i as f64 * 0.2, (i % 4) as f64 * 0.2, 1.0)).collect();
        let cols = vec![Vector3::new(0.5, 0.5, 0.5); n];
        build_cloud_from_points(&pts, &cols, 0.0, 1).unwrap()
    }

    #[test]
    fn step_preserves_invariants_under_hostile_gradients() {
        let mut cloud = small_cloud(6);
        let mut opt = CloudOptimizer::new(OptimizerConfig::default(), 6, 1.0);
        let mut grads = CloudGradients::zeros(6);
        for i in 0..6 {
            grads.center[i] = Vector3::new(1.0, -2.0, 0.5);
            grads.log_scale[i] = Vector3::new(50.0, -50.0, 10.0);
            grads.rotation[i] = Vector4::new(0.5, -0.5, 0.25, 0.1);
            grads.opacity_logit[i] = -30.0;
            grads.color[i] = Vector3::new(10.0, -10.0, 0.0);
        }
        for step in 0..50 {
            opt.step(&mut cloud, &grads, step as f64 / 50.0);
        }
        for p in &cloud.primitives {
            assert!(p.scale.iter().all(|s| *s > 0.0));
            assert!(p.opacity > 0.0 && p.opacity < 1.0);
            assert!((p.rotation.norm() - 1.0).abs() < 1e-9);
            assert!(p.color.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn densify_noop_when_below_threshold() {
        let mut cloud = small_cloud(5);
        let mut opt = CloudOptimizer::new(OptimizerConfig::default(), 5, 1.0);
        let cfg = DensifyConfig { grad_threshold: 1e9, ..DensifyConfig::default() };
        let mut rng = seeded_rng(3, 0);
        cloud.stats.accumulate(&[1.0; 5]);
        let before = cloud.len();
        let out = densify_and_prune(&mut cloud, &mut opt, 100, 1000, &cfg, 1.0, &mut rng);
        assert_eq!(cloud.len(), before);
        assert_eq!(out, DensifyOutcome::default());
    }

    #[test]
    fn split_replaces_large_primitive_with_two_children() {
        let mut cloud = small_cloud(3);
        cloud.primitives[1].scale = Vector3::new(0.5, 0.5, 0.5);
        cloud.stats.accumulate(&[0.0, 10.0, 0.0]);
        let mut opt = CloudOptimizer::new(OptimizerConfig::default(), 3, 1.0);
        let cfg = DensifyConfig { grad_threshold: 1.0, ..DensifyConfig::default() };
        let mut rng = seeded_rng(4, 0);
        let out = densify_and_prune(&mut cloud, &mut opt, 100, 1000, &cfg, 1.0, &mut rng);
        assert_eq!(out.split, 1);
        assert_eq!(cloud.len(), 4); // -1 parent, +2 children
        let shrunk = 0.5 / cfg.split_shrink;
        assert!(
            cloud.primitives.iter().filter(|p| (p.scale.x - shrunk).abs() < 1e-12).count() >= 2
        );
    }

    #[test]
    fn clone_keeps_small_hot_primitive() {
        let mut cloud = small_cloud(3);
        cloud.stats.accumulate(&[10.0, 0.0, 0.0]);
        let mut opt = CloudOptimizer::new(OptimizerConfig::default(), 3, 1.0);
        let cfg = DensifyConfig { grad_threshold: 1.0, ..DensifyConfig::default() };
        let mut rng = seeded_rng(4, 0);
        // Scene extent large enough that the 0.2-scale primitive counts as
        // small (threshold = 0.01 * extent).
        let out = densify_and_prune(&mut cloud, &mut opt, 100, 1000, &cfg, 30.0, &mut rng);
        assert_eq!(out.cloned, 1);
        assert_eq!(cloud.len(), 4);
    }

    #[test]
    fn prune_drops_transparent_primitives() {
        let mut cloud = small_cloud(4);
        cloud.primitives[2].opacity = 0.001;
        cloud.stats.accumulate(&[0.0; 4]);
        let mut opt = CloudOptimizer::new(OptimizerConfig::default(), 4, 1.0);
        let cfg = DensifyConfig::default();
        let mut rng = seeded_rng(4, 0);
        let out = densify_and_prune(&mut cloud, &mut opt, 100, 1000, &cfg, 1.0, &mut rng);
        assert_eq!(out.pruned, 1);
        assert_eq!(cloud.len(), 3);
    }

    #[test]
    fn density_control_gated_to_first_half() {
        let mut cloud = small_cloud(3);
        cloud.primitives[0].opacity = 0.001;
        cloud.stats.accumulate(&[10.0, 10.0, 10.0]);
        let mut opt = CloudOptimizer::new(OptimizerConfig::default(), 3, 1.0);
        let cfg = DensifyConfig { grad_threshold: 1.0, ..DensifyConfig::default() };
        let mut rng = seeded_rng(4, 0);
        let out = densify_and_prune(&mut cloud, &mut opt, 500, 1000, &cfg, 1.0, &mut rng);
        assert_eq!(out, DensifyOutcome::default());
        assert_eq!(cloud.len(), 3);
    }

    #[test]
    fn opacity_reset_clamps_all() {
        let mut cloud = small_cloud(4);
        for p in cloud.primitives.iter_mut() {
            p.opacity = 0.9;
        }
        let mut opt = CloudOptimizer::new(OptimizerConfig::default(), 4, 1.0);
        let cfg = DensifyConfig {
            interval: 1000,
            opacity_reset_interval: 50,
            ..DensifyConfig::default()
        };
        let mut rng = seeded_rng(4, 0);
        let out = densify_and_prune(&mut cloud, &mut opt, 50, 1000, &cfg, 1.0, &mut rng);
        assert!(out.opacity_reset);
        assert!(cloud.primitives.iter().all(|p| p.opacity <= 0.01));
    }
}

//! The analytic stand-in for a camera-conditioned video sequence model.
//!
//! For a given trajectory, each frame's mixture components are whole-frame
//! variants of the ground-truth render: the render itself, a color-shifted
//! copy, and a copy with an inserted patch of content that does not exist in
//! the scene. Frames are independent, so unguided sampling flips between
//! variants frame to frame.

use super::RasterConfig;
use crate::diffusion::{FrameMixtureModel, GenerationCondition, SequenceLatent};
use crate::error::Result;
use crate::image::Image;
use crate::recon::SequenceModelProvider;
use crate::raster::render_sequence;
use crate::scene::{Camera, GaussianCloud};
use nalgebra::Vector3;

#[derive(Clone, Debug)]
pub struct SurrogateVariants {
    /// Constant color offset of the appearance-drift component.
    pub color_shift: Vector3<f64>,
    /// Fill color of the hallucinated patch component.
    pub patch_color: Vector3<f64>,
    /// Patch side length as a fraction of the image side; 0 disables it.
    pub patch_frac: f64,
    /// Per-component standard deviation of the mixture.
    pub sigma_c: f64,
}

impl Default for SurrogateVariants {
    fn default() -> Self {
        // Both defect variants pull darker than the scene. Conflicting
        // supervision then drags reconstructed content toward shadow instead
        // of averaging back to the truth, which is the failure mode guided
        // generation is meant to prevent.
        SurrogateVariants {
            color_shift: Vector3::new(-0.45, -0.45, -0.45),
            patch_color: Vector3::new(0.05, 0.05, 0.08),
            patch_frac: 0.45,
            sigma_c: 0.05,
        }
    }
}

fn insert_patch(img: &Image, color: &Vector3<f64>, frac: f64) -> Image {
    if frac <= 0.0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let pw = ((w as f64 * frac).round() as usize).max(1);
    let ph = ((h as f64 * frac).round() as usize).max(1);
    let x0 = (w as f64 * 0.55) as usize;
    let y0 = (h as f64 * 0.30) as usize;
    let mut out = img.clone();
    for y in y0..(y0 + ph).min(h) {
        for x in x0..(x0 + pw).min(w) {
            out.set(x, y, 0, color.x);
            out.set(x, y, 1, color.y);
            out.set(x, y, 2, color.z);
        }
    }
    out
}

/// Builds the per-frame mixture for a trajectory: components are the
/// ground-truth render, the render plus a constant shift, and the render
/// with an inserted patch, all at equal weight.
pub fn build_surrogate_sequence_model(
    gt_cloud: &GaussianCloud,
    raster_cfg: &RasterConfig,
    trajectory: &[Camera],
    variants: &SurrogateVariants,
) -> Result<FrameMixtureModel> {
    let renders = render_sequence(gt_cloud, trajectory, raster_cfg);
    let grounded: Vec<Image> = renders.into_iter().map(|r| r.color).collect();
    let shifted: Vec<Image> = grounded
        .iter()
        .map(|f| {
            let mut out = f.clone();
            for y in 0..f.height() {
                for x in 0..f.width() {
                    out.add(x, y, 0, variants.color_shift.x);
                    out.add(x, y, 1, variants.color_shift.y);
                    out.add(x, y, 2, variants.color_shift.z);
                }
            }
            out
        })
        .collect();
    let patched: Vec<Image> = grounded
        .iter()
        .map(|f| insert_patch(f, &variants.patch_color, variants.patch_frac))
        .collect();
    let means = vec![
        SequenceLatent::from_images(&grounded)?,
        SequenceLatent::from_images(&shifted)?,
        SequenceLatent::from_images(&patched)?,
    ];
    let w = 1.0 / 3.0;
    FrameMixtureModel::new(means, vec![w, w, w], variants.sigma_c)
}

/// Fraction of frames assigned to each component for a sampled sequence.
pub fn selection_rates(model: &FrameMixtureModel, x: &SequenceLatent) -> Vec<f64> {
    let assignments = model.assign_frames(x);
    let mut counts = vec![0usize; model.components()];
    for a in &assignments {
        counts[*a] += 1;
    }
    counts.iter().map(|&c| c as f64 / assignments.len() as f64).collect()
}

/// Sequence-model provider backed by the ground-truth cloud.
pub struct SurrogateProvider<'a> {
    pub gt_cloud: &'a GaussianCloud,
    pub raster_cfg: RasterConfig,
    pub variants: SurrogateVariants,
}

impl SequenceModelProvider for SurrogateProvider<'_> {
    fn model_for(&self, cond: &GenerationCondition) -> Result<Box<dyn crate::diffusion::ScoreModel>> {
        let model = build_surrogate_sequence_model(
            self.gt_cloud,
            &self.raster_cfg,
            &cond.trajectory,
            &self.variants,
        )?;
        Ok(Box::new(model))
    }
}

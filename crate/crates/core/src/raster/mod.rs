//! Differentiable forward splatting with an analytic backward pass.
//!
//! The forward path projects each 3D Gaussian to a 2D screen-space Gaussian,
//! bins splats to 16x16 tiles by their support ellipse, sorts per tile by
//! camera-space depth, and alpha-blends front to back. The backward path
//! recomputes the per-pixel blend and pushes an upstream color gradient to
//! every primitive attribute.

mod backward;
mod forward;
mod project;

pub use backward::{rasterize_backward, CloudGradients};
pub use forward::{rasterize, render_sequence};
pub use project::{inside_frustum_margin, project_gaussian, Gaussian2D, FRUSTUM_MARGIN};

use crate::error::{Result, SplatError};
use crate::image::Image;
use nalgebra::Vector3;

/// Rasterizer knobs. Defaults follow common splatting practice; `smooth()`
/// lifts the hard cutoffs so the render is differentiable everywhere, which
/// finite-difference gradient checks require.
#[derive(Clone, Debug)]
pub struct RasterConfig {
    /// Primitives at or behind this camera-space depth are culled.
    pub near_plane: f64,
    pub tile_size: usize,
    /// Added to the projected covariance (pixels^2) before inversion.
    pub lowpass: f64,
    /// Per-sample opacity clamp keeping the transmittance product positive.
    pub sigma_max: f64,
    /// Contributions below this opacity are skipped.
    pub sigma_skip: f64,
    /// Front-to-back accumulation stops once transmittance falls below this.
    pub transmittance_stop: f64,
    /// Support radius of the screen-space ellipse, in standard deviations.
    pub support_sigmas: f64,
    pub background: Vector3<f64>,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            near_plane: 0.01,
            tile_size: 16,
            lowpass: 0.3,
            sigma_max: 0.999,
            sigma_skip: 1.0 / 255.0,
            transmittance_stop: 1e-4,
            support_sigmas: 3.0,
            background: Vector3::zeros(),
        }
    }
}

impl RasterConfig {
    /// Configuration without skip/termination/support cutoffs. The blend is
    /// then smooth in every attribute, so analytic gradients match central
    /// finite differences.
    pub fn smooth() -> Self {
        RasterConfig {
            sigma_skip: 0.0,
            transmittance_stop: 0.0,
            support_sigmas: f64::INFINITY,
            ..RasterConfig::default()
        }
    }
}

/// Forward render products: color, accumulated opacity (transmittance map),
/// alpha-blended depth, and per-pixel contributor counts.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: Image,
    pub transmittance: Image,
    pub depth: Image,
    pub contributing: Vec<u32>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.color.width()
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }
}

/// Binary hole mask: 1 exactly where the transmittance map is below
/// `eta_mask`. Requires `eta_mask` in (0, 1].
pub fn hole_mask(transmittance: &Image, eta_mask: f64) -> Result<Image> {
    if !(eta_mask > 0.0 && eta_mask <= 1.0) {
        return Err(SplatError::invalid_input(format!(
            "eta_mask must lie in (0,1], got {eta_mask}"
        )));
    }
    if transmittance.channels() != 1 {
        return Err(SplatError::invalid_input("hole_mask expects a single-channel map"));
    }
    Ok(transmittance.map(|o| if o < eta_mask { 1.0 } else { 0.0 }))
}

/// Complement of [`hole_mask`]: 1 where the render has coverage at least
/// `eta_mask`. This is the mask the guidance loss consumes, so the grounding
/// constraint is active exactly where the scene model has content to offer.
pub fn coverage_mask(transmittance: &Image, eta_mask: f64) -> Result<Image> {
    Ok(hole_mask(transmittance, eta_mask)?.map(|m| 1.0 - m))
}

/// Fraction of pixels flagged as holes.
pub fn hole_fraction(transmittance: &Image, eta_mask: f64) -> Result<f64> {
    let m = hole_mask(transmittance, eta_mask)?;
    Ok(m.mean())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hole_mask_trivial_cases() {
        let zeros = Image::zeros(4, 4, 1);
        let m = hole_mask(&zeros, 0.9).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));

        let high = Image::constant(4, 4, 1, 0.95);
        let m = hole_mask(&high, 0.9).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hole_mask_checkerboard() {
        let o = Image::from_fn(8, 8, 1, |x, y, _| if (x + y) % 2 == 0 { 0.5 } else { 0.95 });
        let m = hole_mask(&o, 0.9).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let expect = if (x + y) % 2 == 0 { 1.0 } else { 0.0 };
                assert_eq!(m.get(x, y, 0), expect);
            }
        }
        assert!((m.mean() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hole_mask_rejects_bad_threshold() {
        let o = Image::zeros(4, 4, 1);
        assert!(hole_mask(&o, 0.0).is_err());
        assert!(hole_mask(&o, 1.5).is_err());
        assert!(hole_mask(&o, -0.1).is_err());
    }
}

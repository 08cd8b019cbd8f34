//! Sparse-input 3D Gaussian splatting with generation-augmented optimization.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`scene`]: Gaussian primitives, clouds, cameras, views, and the cloud
//!   text format.
//! - [`raster`]: differentiable forward splatting (color, transmittance,
//!   depth) with an analytic backward pass and hole-mask extraction.
//! - [`losses`]: image losses (L1, SSIM, perceptual pyramid) and metrics,
//!   each with gradients with respect to the rendered image.
//! - [`diffusion`]: noise schedules, DDPM/DDIM samplers, and score models,
//!   including an analytic per-frame Gaussian-mixture sequence model.
//! - [`guidance`]: sequence generation with rendered-scene grounding injected
//!   into every denoising step.
//! - [`trajectory`]: candidate-pose sampling around input views and
//!   trajectory-pool construction from hole statistics.
//! - [`recon`]: baseline training and the generation-augmented optimization
//!   loop (adaptive density control, generated-view store, run config).
//! - [`harness`]: synthetic room scenes, the surrogate sequence model, and
//!   evaluation over full/observable/unobservable splits.

pub mod diffusion;
pub mod error;
pub mod guidance;
pub mod harness;
pub mod image;
pub mod losses;
pub mod math;
pub mod optim;
pub mod raster;
pub mod recon;
pub mod scene;
pub mod trajectory;

pub use error::{Result, SplatError};

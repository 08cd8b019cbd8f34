//! Score-model and decoder interfaces plus the analytic per-frame Gaussian
//! mixture used as the sequence model at desk scale.

use super::{NoiseSchedule, SequenceLatent};
use crate::error::{Result, SplatError};
use crate::image::Image;
use crate::scene::{Camera, ViewRecord};
use rayon::prelude::*;

/// Conditioning for one generation run: the first-frame view and the camera
/// trajectory the sequence follows.
#[derive(Clone, Debug)]
pub struct GenerationCondition {
    pub first_view: ViewRecord,
    pub trajectory: Vec<Camera>,
}

impl GenerationCondition {
    pub fn new(first_view: ViewRecord, trajectory: Vec<Camera>) -> Result<Self> {
        if trajectory.is_empty() {
            return Err(SplatError::invalid_input("empty trajectory"));
        }
        let first = &trajectory[0];
        let cam = &first_view.camera;
        let rot_diff = (first.rotation - cam.rotation).abs().max();
        let t_diff = (first.translation - cam.translation).abs().max();
        if rot_diff > 1e-9 || t_diff > 1e-9 {
            return Err(SplatError::invalid_input(
                "trajectory must start at the first view's pose",
            ));
        }
        Ok(GenerationCondition { first_view, trajectory })
    }

    pub fn frames(&self) -> usize {
        self.trajectory.len()
    }
}

/// Noise predictor interface. Models are condition-specialized at
/// construction (the conditioning image and trajectory are fixed for one
/// generation run), so prediction takes only the latent and the timestep.
pub trait ScoreModel: Sync {
    /// Latent shape (frames, height, width, channels) this model expects.
    fn latent_shape(&self) -> (usize, usize, usize, usize);

    /// Predicted noise for the latent at timestep t.
    fn epsilon(&self, x: &SequenceLatent, t: usize, schedule: &NoiseSchedule) -> SequenceLatent;

    /// Exact Jacobian-vector product of `epsilon` with respect to x, when the
    /// model can provide it (analytic models). The Jacobian is symmetric for
    /// score-derived models, so this doubles as the transposed product.
    fn epsilon_jvp(
        &self,
        _x: &SequenceLatent,
        _t: usize,
        _schedule: &NoiseSchedule,
        _v: &SequenceLatent,
    ) -> Option<SequenceLatent> {
        None
    }
}

/// Differentiable map from latent space to image frames.
pub trait LatentDecoder: Sync {
    fn decode(&self, x: &SequenceLatent) -> Vec<Image>;
    /// Vector-Jacobian product: pulls per-frame image gradients back to the
    /// latent.
    fn vjp(&self, x: &SequenceLatent, upstream: &[Image]) -> SequenceLatent;
}

/// Pixel-space diffusion: the latent is the frame stack itself.
pub struct IdentityDecoder;

impl LatentDecoder for IdentityDecoder {
    fn decode(&self, x: &SequenceLatent) -> Vec<Image> {
        x.to_images()
    }

    fn vjp(&self, x: &SequenceLatent, upstream: &[Image]) -> SequenceLatent {
        let (l, h, w, c) = x.shape();
        let mut out = SequenceLatent::zeros(l, h, w, c);
        for (j, u) in upstream.iter().enumerate() {
            out.frame_mut(j).copy_from_slice(u.data());
        }
        out
    }
}

/// Per-frame Gaussian mixture over whole-frame variants, with frames
/// independent. The marginal at time t of component k is
/// N(sqrt(alpha_bar_t) v_k, (alpha_bar_t sigma_c^2 + 1 - alpha_bar_t) I), so
/// the score and the noise prediction are closed-form.
pub struct FrameMixtureModel {
    /// One latent per component holding that component's per-frame means.
    means: Vec<SequenceLatent>,
    weights: Vec<f64>,
    sigma_c: f64,
}

impl FrameMixtureModel {
    pub fn new(means: Vec<SequenceLatent>, weights: Vec<f64>, sigma_c: f64) -> Result<Self> {
        if means.is_empty() || means.len() != weights.len() {
            return Err(SplatError::invalid_input(
                "mixture needs matching non-empty means and weights",
            ));
        }
        let shape = means[0].shape();
        if means.iter().any(|m| m.shape() != shape) {
            return Err(SplatError::invalid_input("mixture component shapes differ"));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(SplatError::invalid_input("mixture weights must be positive"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SplatError::invalid_input("mixture weights must sum to 1"));
        }
        if sigma_c <= 0.0 {
            return Err(SplatError::invalid_input("sigma_c must be positive"));
        }
        let weights = weights.iter().map(|w| w / sum).collect();
        Ok(FrameMixtureModel { means, weights, sigma_c })
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    pub fn sigma_c(&self) -> f64 {
        self.sigma_c
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn component_mean(&self, k: usize) -> &SequenceLatent {
        &self.means[k]
    }

    fn marginal_var(&self, alpha_bar: f64) -> f64 {
        alpha_bar * self.sigma_c * self.sigma_c + (1.0 - alpha_bar)
    }

    /// Per-frame posterior responsibilities at diffusion time described by
    /// `alpha_bar` (1.0 gives clean-data responsibilities). Shape: frames x
    /// components.
    pub fn responsibilities_at(&self, x: &SequenceLatent, alpha_bar: f64) -> Vec<Vec<f64>> {
        let s2 = self.marginal_var(alpha_bar);
        let sa = alpha_bar.sqrt();
        let frames = x.frames();
        (0..frames)
            .into_par_iter()
            .map(|j| {
                let xf = x.frame(j);
                let mut logw: Vec<f64> = self
                    .means
                    .iter()
                    .zip(self.weights.iter())
                    .map(|(m, &w)| {
                        let mf = m.frame(j);
                        let mut d2 = 0.0;
                        for (xv, mv) in xf.iter().zip(mf.iter()) {
                            let d = xv - sa * mv;
                            d2 += d * d;
                        }
                        w.ln() - d2 / (2.0 * s2)
                    })
                    .collect();
                let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for lw in logw.iter_mut() {
                    *lw = (*lw - max).exp();
                    sum += *lw;
                }
                logw.iter().map(|v| v / sum).collect()
            })
            .collect()
    }

    /// Index of the most responsible component per frame, evaluated in clean
    /// data space (alpha_bar = 1).
    pub fn assign_frames(&self, x: &SequenceLatent) -> Vec<usize> {
        self.responsibilities_at(x, 1.0)
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            })
            .collect()
    }

    /// Log marginal density log p_t(x) summed over frames.
    pub fn log_density(&self, x: &SequenceLatent, t: usize, schedule: &NoiseSchedule) -> f64 {
        let ab = schedule.alpha_bar(t);
        let s2 = self.marginal_var(ab);
        let sa = ab.sqrt();
        let d = x.frame_len() as f64;
        let norm = -0.5 * d * (std::f64::consts::TAU * s2).ln();
        (0..x.frames())
            .map(|j| {
                let xf = x.frame(j);
                let logs: Vec<f64> = self
                    .means
                    .iter()
                    .zip(self.weights.iter())
                    .map(|(m, &w)| {
                        let mf = m.frame(j);
                        let mut d2 = 0.0;
                        for (xv, mv) in xf.iter().zip(mf.iter()) {
                            let dv = xv - sa * mv;
                            d2 += dv * dv;
                        }
                        w.ln() - d2 / (2.0 * s2) + norm
                    })
                    .collect();
                let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
            })
            .sum()
    }

    /// Score of the time-t marginal, per element.
    pub fn score(&self, x: &SequenceLatent, t: usize, schedule: &NoiseSchedule) -> SequenceLatent {
        let ab = schedule.alpha_bar(t);
        let s2 = self.marginal_var(ab);
        let sa = ab.sqrt();
        let resp = self.responsibilities_at(x, ab);
        let (l, h, w, c) = x.shape();
        let mut out = SequenceLatent::zeros(l, h, w, c);
        let n = x.frame_len();
        out.data_mut()
            .par_chunks_mut(n)
            .zip(x.data().par_chunks(n))
            .enumerate()
            .for_each(|(j, (of, xf))| {
                for (k, m) in self.means.iter().enumerate() {
                    let r = resp[j][k];
                    if r == 0.0 {
                        continue;
                    }
                    let mf = m.frame(j);
                    for i in 0..n {
                        of[i] += r * (sa * mf[i] - xf[i]) / s2;
                    }
                }
            });
        out
    }
}

impl ScoreModel for FrameMixtureModel {
    fn latent_shape(&self) -> (usize, usize, usize, usize) {
        self.means[0].shape()
    }

    /// eps = -sqrt(1 - alpha_bar_t) * score.
    fn epsilon(&self, x: &SequenceLatent, t: usize, schedule: &NoiseSchedule) -> SequenceLatent {
        let ab = schedule.alpha_bar(t);
        let coeff = -(1.0 - ab).sqrt();
        self.score(x, t, schedule).map(|v| coeff * v)
    }

    /// Exact product of the epsilon Jacobian with `v`, from the mixture
    /// Hessian: H = sum_k r_k (m_k m_k^T - I/s^2) - m_bar m_bar^T with
    /// m_k = (sqrt(ab) v_k - x)/s^2, and d eps/dx = -sqrt(1-ab) H.
    fn epsilon_jvp(
        &self,
        x: &SequenceLatent,
        t: usize,
        schedule: &NoiseSchedule,
        v: &SequenceLatent,
    ) -> Option<SequenceLatent> {
        let ab = schedule.alpha_bar(t);
        let s2 = self.marginal_var(ab);
        let sa = ab.sqrt();
        let resp = self.responsibilities_at(x, ab);
        let (l, h, w, c) = x.shape();
        let n = x.frame_len();
        let mut out = SequenceLatent::zeros(l, h, w, c);
        let coeff = -(1.0 - ab).sqrt();
        out.data_mut()
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(j, of)| {
                let xf = x.frame(j);
                let vf = v.frame(j);
                // Per-component m_k . v and the mixture mean direction.
                let mut mbar = vec![0.0; n];
                let mut hv = vec![0.0; n];
                let mut mbar_dot_v = 0.0;
                for (k, m) in self.means.iter().enumerate() {
                    let r = resp[j][k];
                    if r == 0.0 {
                        continue;
                    }
                    let mf = m.frame(j);
                    let mut dot = 0.0;
                    for i in 0..n {
                        let mk = (sa * mf[i] - xf[i]) / s2;
                        dot += mk * vf[i];
                    }
                    for i in 0..n {
                        let mk = (sa * mf[i] - xf[i]) / s2;
                        hv[i] += r * mk * dot;
                        mbar[i] += r * mk;
                    }
                }
                for i in 0..n {
                    mbar_dot_v += mbar[i] * vf[i];
                }
                for i in 0..n {
                    hv[i] += -vf[i] / s2 - mbar[i] * mbar_dot_v;
                    of[i] = coeff * hv[i];
                }
            });
        Some(out)
    }
}

//! Noise schedules and denoising samplers.
//!
//! Timesteps are 1-based: `beta(t)` and `alpha_bar(t)` are defined for
//! t in [1, T], with `alpha_bar(0) = 1` by convention so t = 0 denotes clean
//! data.

mod latent;
mod score;

pub use latent::SequenceLatent;
pub use score::{
    FrameMixtureModel, GenerationCondition, IdentityDecoder, LatentDecoder, ScoreModel,
};

use crate::error::{Result, SplatError};
use crate::math::standard_normal;
use rand::Rng;

#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    /// beta[0] is unused (0.0); beta[t] for t in [1, T].
    betas: Vec<f64>,
    /// alpha_bar[t] = prod_{i<=t} (1 - beta[i]); alpha_bar[0] = 1.
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta schedule over T steps.
    pub fn linear(t_count: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if t_count < 2 {
            return Err(SplatError::invalid_input("schedule needs at least 2 steps"));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(SplatError::invalid_input(format!(
                "beta range must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let mut betas = Vec::with_capacity(t_count + 1);
        let mut alpha_bars = Vec::with_capacity(t_count + 1);
        betas.push(0.0);
        alpha_bars.push(1.0);
        let mut prod = 1.0;
        for i in 0..t_count {
            let beta = beta_min + (beta_max - beta_min) * i as f64 / (t_count - 1) as f64;
            prod *= 1.0 - beta;
            betas.push(beta);
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    /// Default schedule: T = 1000, linear beta in [1e-4, 0.02].
    pub fn default_linear() -> Self {
        NoiseSchedule::linear(1000, 1e-4, 0.02).expect("default schedule parameters are valid")
    }

    pub fn t_max(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_max() {
            return Err(SplatError::invalid_input(format!(
                "timestep {t} outside [1, {}]",
                self.t_max()
            )));
        }
        Ok(())
    }
}

/// Alias for [`NoiseSchedule::linear`].
pub fn make_linear_schedule(t_count: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(t_count, beta_min, beta_max)
}

/// Diffuses clean data to time t with explicit noise:
/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) z. Accepts t = 0 (the
/// identity).
pub fn forward_noise_with(
    x0: &SequenceLatent,
    t: usize,
    schedule: &NoiseSchedule,
    z: &SequenceLatent,
) -> Result<SequenceLatent> {
    if t > schedule.t_max() {
        return Err(SplatError::invalid_input(format!(
            "timestep {t} outside [0, {}]",
            schedule.t_max()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.zip(z, |x, n| sa * x + sb * n))
}

/// [`forward_noise_with`] drawing the noise from `rng`.
pub fn forward_noise<R: Rng + ?Sized>(
    x0: &SequenceLatent,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<SequenceLatent> {
    let (l, h, w, c) = x0.shape();
    let z = SequenceLatent::standard_normal(l, h, w, c, rng);
    forward_noise_with(x0, t, schedule, &z)
}

/// Clean-data estimate implied by the current latent and a noise prediction:
/// x_{0|t} = (x_t - sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_bar_t).
pub fn predict_x0(
    x_t: &SequenceLatent,
    t: usize,
    eps: &SequenceLatent,
    schedule: &NoiseSchedule,
) -> SequenceLatent {
    let ab = schedule.alpha_bar(t);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    x_t.zip(eps, |x, e| (x - sb * e) / sa)
}

/// One ancestral step in the small-beta expansion form:
/// x_{t-1} = (1 + beta_t/2) x_t - (beta_t / sqrt(1 - alpha_bar_t)) eps
///           + sqrt(beta_t) z,
/// with z = 0 at t = 1.
pub fn ddpm_step_with(
    x_t: &SequenceLatent,
    t: usize,
    eps: &SequenceLatent,
    schedule: &NoiseSchedule,
    z: Option<&SequenceLatent>,
) -> Result<SequenceLatent> {
    schedule.check_t(t)?;
    let beta = schedule.beta(t);
    let ab = schedule.alpha_bar(t);
    let scale = 1.0 + beta / 2.0;
    let eps_coeff = beta / (1.0 - ab).sqrt();
    let mut out = x_t.zip(eps, |x, e| scale * x - eps_coeff * e);
    if t > 1 {
        if let Some(noise) = z {
            out.axpy(beta.sqrt(), noise);
        }
    }
    Ok(out)
}

/// [`ddpm_step_with`] drawing the noise from `rng` (except at t = 1). The rng
/// is consumed identically for every t > 1 so seeded chains stay aligned.
pub fn ddpm_step<R: Rng + ?Sized>(
    x_t: &SequenceLatent,
    t: usize,
    eps: &SequenceLatent,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<SequenceLatent> {
    let z = if t > 1 {
        let (l, h, w, c) = x_t.shape();
        Some(SequenceLatent::standard_normal(l, h, w, c, rng))
    } else {
        None
    };
    ddpm_step_with(x_t, t, eps, schedule, z.as_ref())
}

/// Standard ancestral step using the exact posterior mean
/// x_{t-1} = (x_t - beta_t eps / sqrt(1 - alpha_bar_t)) / sqrt(1 - beta_t)
///           + sqrt(beta_t) z.
/// Exposed as an alternative to the expansion form above.
pub fn ddpm_step_posterior<R: Rng + ?Sized>(
    x_t: &SequenceLatent,
    t: usize,
    eps: &SequenceLatent,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<SequenceLatent> {
    schedule.check_t(t)?;
    let beta = schedule.beta(t);
    let ab = schedule.alpha_bar(t);
    let inv_sqrt_alpha = 1.0 / (1.0 - beta).sqrt();
    let eps_coeff = beta / (1.0 - ab).sqrt();
    let mut out = x_t.zip(eps, |x, e| inv_sqrt_alpha * (x - eps_coeff * e));
    if t > 1 {
        let (l, h, w, c) = x_t.shape();
        let z = SequenceLatent::standard_normal(l, h, w, c, rng);
        out.axpy(beta.sqrt(), &z);
    }
    Ok(out)
}

/// Deterministic DDIM step (eta = 0):
/// x_{t_prev} = sqrt(alpha_bar_{t_prev}) x_{0|t} + sqrt(1 - alpha_bar_{t_prev}) eps.
pub fn ddim_step(
    x_t: &SequenceLatent,
    t: usize,
    t_prev: usize,
    eps: &SequenceLatent,
    schedule: &NoiseSchedule,
) -> Result<SequenceLatent> {
    schedule.check_t(t)?;
    if t_prev >= t {
        return Err(SplatError::invalid_input("ddim_step requires t_prev < t"));
    }
    let x0 = predict_x0(x_t, t, eps, schedule);
    Ok(ddim_step_from_x0(&x0, t_prev, eps, schedule))
}

/// DDIM step when x_{0|t} has already been computed.
pub fn ddim_step_from_x0(
    x0: &SequenceLatent,
    t_prev: usize,
    eps: &SequenceLatent,
    schedule: &NoiseSchedule,
) -> SequenceLatent {
    let ab_prev = schedule.alpha_bar(t_prev);
    let (sa, sb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    x0.zip(eps, |x, e| sa * x + sb * e)
}

/// Uniform-stride (t, t_prev) pairs for a DDIM run of `steps` steps starting
/// at t = T and ending at t_prev = 0.
pub fn ddim_timesteps(t_max: usize, steps: usize) -> Vec<(usize, usize)> {
    let steps = steps.clamp(1, t_max);
    let mut ts: Vec<usize> = (0..steps)
        .map(|k| t_max - (k * t_max) / steps)
        .collect();
    ts.dedup();
    let mut pairs = Vec::with_capacity(ts.len());
    for (i, &t) in ts.iter().enumerate() {
        let t_prev = if i + 1 < ts.len() { ts[i + 1] } else { 0 };
        pairs.push((t, t_prev));
    }
    pairs
}

/// Draws a standard normal latent shaped like the model's latent space.
pub fn sample_prior<R: Rng + ?Sized>(
    shape: (usize, usize, usize, usize),
    rng: &mut R,
) -> SequenceLatent {
    let mut x = SequenceLatent::zeros(shape.0, shape.1, shape.2, shape.3);
    for v in x.data_mut().iter_mut() {
        *v = standard_normal(rng);
    }
    x
}

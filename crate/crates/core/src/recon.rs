//! Generation-augmented optimization: baseline training, trajectory
//! initialization, periodic sequence generation, and the per-iteration
//! input + generated supervision steps.

use crate::diffusion::{GenerationCondition, LatentDecoder, NoiseSchedule, ScoreModel};
use crate::error::{Result, SplatError};
use crate::guidance::{generate, GammaMode, GeneratorConfig, JacobianMode, SamplerKind};
use crate::image::Image;
use crate::losses::{generated_view_loss, input_view_loss, LossWeights};
use crate::math::seeded_rng;
use crate::optim::{densify_and_prune, CloudOptimizer, DensifyConfig, OptimizerConfig};
use crate::raster::{rasterize, rasterize_backward, RasterConfig};
use crate::scene::{Camera, GaussianCloud, ViewRecord};
use crate::trajectory::{build_pool, TrajectoryConfig, TrajectoryPool};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

/// Full run configuration. Every field round-trips through the flat
/// key=value config file format.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub n_inputs: usize,
    pub resolution: usize,
    pub occluders: usize,
    pub n_iter: usize,
    pub n_gen: usize,
    pub eta: f64,
    pub eta_mask: f64,
    pub seq_len: usize,
    pub lambda: f64,
    pub lambda_perc: f64,
    pub lambda_gen1: f64,
    pub lambda_gen2: f64,
    pub sampler: String,
    pub ddim_steps: usize,
    pub gamma0: f64,
    pub normalize_guidance: bool,
    pub exact_jacobian: bool,
    pub baseline_iters: usize,
    pub t_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub lr_center: f64,
    pub lr_center_final_ratio: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub densify_interval: usize,
    pub densify_grad_threshold: f64,
    pub densify_scale_ratio: f64,
    pub prune_opacity: f64,
    pub opacity_reset_interval: usize,
    pub max_primitives: usize,
    pub surrogate_sigma: f64,
    pub surrogate_shift: f64,
    pub surrogate_patch_frac: f64,
    pub init_points: usize,
    pub jitter_sigma: f64,
    pub generation_enabled: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            n_inputs: 6,
            resolution: 64,
            occluders: 2,
            n_iter: 10000,
            n_gen: 260,
            eta: 0.5,
            eta_mask: 0.9,
            seq_len: 25,
            lambda: 0.2,
            lambda_perc: 1e-4,
            lambda_gen1: 0.1,
            lambda_gen2: 0.01,
            sampler: "ddim".to_string(),
            ddim_steps: 50,
            gamma0: 1.0,
            normalize_guidance: true,
            exact_jacobian: false,
            baseline_iters: 3000,
            t_steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
            lr_center: 1.6e-4,
            lr_center_final_ratio: 0.01,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            densify_interval: 100,
            densify_grad_threshold: 8e-7,
            densify_scale_ratio: 0.01,
            prune_opacity: 0.005,
            opacity_reset_interval: 3000,
            max_primitives: 20_000,
            surrogate_sigma: 0.05,
            surrogate_shift: -0.45,
            surrogate_patch_frac: 0.45,
            init_points: 3000,
            jitter_sigma: 0.01,
            generation_enabled: true,
        }
    }
}

macro_rules! config_fields {
    ($macro:ident) => {
        $macro!(
            (seed, u64),
            (n_inputs, usize),
            (resolution, usize),
            (occluders, usize),
            (n_iter, usize),
            (n_gen, usize),
            (eta, f64),
            (eta_mask, f64),
            (seq_len, usize),
            (lambda, f64),
            (lambda_perc, f64),
            (lambda_gen1, f64),
            (lambda_gen2, f64),
            (sampler, String),
            (ddim_steps, usize),
            (gamma0, f64),
            (normalize_guidance, bool),
            (exact_jacobian, bool),
            (baseline_iters, usize),
            (t_steps, usize),
            (beta_min, f64),
            (beta_max, f64),
            (lr_center, f64),
            (lr_center_final_ratio, f64),
            (lr_scale, f64),
            (lr_rotation, f64),
            (lr_opacity, f64),
            (lr_color, f64),
            (densify_interval, usize),
            (densify_grad_threshold, f64),
            (densify_scale_ratio, f64),
            (prune_opacity, f64),
            (opacity_reset_interval, usize),
            (max_primitives, usize),
            (surrogate_sigma, f64),
            (surrogate_shift, f64),
            (surrogate_patch_frac, f64),
            (init_points, usize),
            (jitter_sigma, f64),
            (generation_enabled, bool)
        );
    };
}

impl RunConfig {
    /// Emits the flat `key = value` form, one field per line.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($(($field:ident, $ty:ty)),*) => {
                $(writeln!(out, "{} = {}", stringify!($field), self.$field).unwrap();)*
            };
        }
        config_fields!(emit);
        out
    }

    /// Parses the flat form, starting from defaults. Unknown keys and
    /// malformed values are rejected. Lines starting with '#' are comments.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SplatError::Parse(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let mut matched = false;
            macro_rules! assign {
                ($(($field:ident, $ty:ty)),*) => {
                    $(
                        if key == stringify!($field) {
                            cfg.$field = value.parse::<$ty>().map_err(|_| {
                                SplatError::Parse(format!(
                                    "line {}: bad value for {}: {value}",
                                    lineno + 1,
                                    stringify!($field)
                                ))
                            })?;
                            matched = true;
                        }
                    )*
                };
            }
            config_fields!(assign);
            if !matched {
                return Err(SplatError::Parse(format!("line {}: unknown key {key}", lineno + 1)));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_gen == 0 || self.n_gen > self.n_iter {
            return Err(SplatError::invalid_input("n_gen must lie in [1, n_iter]"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(SplatError::invalid_input("eta must lie in [0,1]"));
        }
        if !(self.eta_mask > 0.0 && self.eta_mask <= 1.0) {
            return Err(SplatError::invalid_input("eta_mask must lie in (0,1]"));
        }
        if self.sampler != "ddim" && self.sampler != "ddpm" {
            return Err(SplatError::invalid_input("sampler must be ddim or ddpm"));
        }
        self.loss_weights().validate()?;
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            lambda_perc: self.lambda_perc,
            lambda_gen1: self.lambda_gen1,
            lambda_gen2: self.lambda_gen2,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            lr_center: self.lr_center,
            lr_center_final_ratio: self.lr_center_final_ratio,
            lr_scale: self.lr_scale,
            lr_rotation: self.lr_rotation,
            lr_opacity: self.lr_opacity,
            lr_color: self.lr_color,
            ..OptimizerConfig::default()
        }
    }

    pub fn densify_config(&self) -> DensifyConfig {
        DensifyConfig {
            interval: self.densify_interval,
            grad_threshold: self.densify_grad_threshold,
            scale_threshold_ratio: self.densify_scale_ratio,
            split_shrink: 1.6,
            prune_opacity: self.prune_opacity,
            opacity_reset_interval: self.opacity_reset_interval,
            opacity_reset_max: 0.01,
            max_primitives: self.max_primitives,
        }
    }

    pub fn trajectory_config(&self) -> TrajectoryConfig {
        TrajectoryConfig { seq_len: self.seq_len, eta_mask: self.eta_mask, ..Default::default() }
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        let sampler = match self.sampler.as_str() {
            "ddpm" => SamplerKind::Ddpm,
            "ddim" => SamplerKind::Ddim { steps: self.ddim_steps },
            other => return Err(SplatError::invalid_input(format!("unknown sampler {other}"))),
        };
        Ok(GeneratorConfig {
            gamma0: self.gamma0,
            gamma_mode: GammaMode::Fade,
            normalize: self.normalize_guidance,
            sampler,
            eta_mask: self.eta_mask,
            jacobian: if self.exact_jacobian {
                JacobianMode::Exact
            } else {
                JacobianMode::FrozenEpsilon
            },
            weights: self.loss_weights(),
        })
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t_steps, self.beta_min, self.beta_max)
    }
}

/// One generated frame paired with its camera and originating sequence.
#[derive(Clone, Debug)]
pub struct GeneratedView {
    pub image: Image,
    pub camera: Camera,
    pub sequence_id: usize,
}

/// Append-only store of generated views. The tail starting at
/// `current_start` is the most recent sequence (the local-sampling target);
/// the whole list is the global pool.
#[derive(Clone, Debug, Default)]
pub struct GeneratedViewStore {
    entries: Vec<GeneratedView>,
    current_start: usize,
    sequences: usize,
}

impl GeneratedViewStore {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sequences(&self) -> usize {
        self.sequences
    }

    pub fn current_len(&self) -> usize {
        self.entries.len() - self.current_start
    }

    pub fn append_sequence(&mut self, frames: Vec<Image>, cameras: Vec<Camera>) {
        assert_eq!(frames.len(), cameras.len());
        self.current_start = self.entries.len();
        let id = self.sequences;
        self.sequences += 1;
        for (image, camera) in frames.into_iter().zip(cameras) {
            self.entries.push(GeneratedView { image, camera, sequence_id: id });
        }
    }

    /// Samples a supervision view: with probability 1 - eta uniformly from
    /// the current sequence, otherwise uniformly from the global list. Falls
    /// back to whichever side is non-empty; errors when both are.
    pub fn pick<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> Result<(&GeneratedView, bool)> {
        if self.entries.is_empty() {
            return Err(SplatError::invalid_state("no generated views to sample"));
        }
        let u: f64 = rng.random();
        let from_current = u >= eta && self.current_len() > 0;
        if from_current {
            let i = self.current_start + rng.random_range(0..self.current_len());
            Ok((&self.entries[i], true))
        } else {
            let i = rng.random_range(0..self.entries.len());
            Ok((&self.entries[i], false))
        }
    }
}

/// Standalone form of the sampling rule, matching the operation surface.
pub fn pick_generated_view<'a, R: Rng + ?Sized>(
    store: &'a GeneratedViewStore,
    eta: f64,
    rng: &mut R,
) -> Result<(&'a GeneratedView, bool)> {
    store.pick(eta, rng)
}

/// Builds condition-specialized sequence models for generation events.
pub trait SequenceModelProvider: Sync {
    fn model_for(&self, cond: &GenerationCondition) -> Result<Box<dyn ScoreModel>>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub input_loss: f64,
    pub gen_loss: Option<f64>,
    pub primitives: usize,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,input_loss,gen_loss,primitives\n");
        for r in &self.rows {
            let gen = r.gen_loss.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", r.iteration, r.input_loss, gen, r.primitives).unwrap();
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct GenEvent {
    pub iteration: usize,
    pub input_index: usize,
    pub trajectory_index: usize,
    pub frames_added: usize,
}

pub struct ReconstructReport {
    pub cloud: GaussianCloud,
    pub log: TrainLog,
    pub events: Vec<GenEvent>,
    pub picks_current: usize,
    pub picks_global: usize,
    pub pool_size: usize,
    pub warning: Option<String>,
}

/// Optimization engine shared by baseline training and the full loop.
pub struct Trainer<'a> {
    inputs: &'a [ViewRecord],
    pub cloud: GaussianCloud,
    optimizer: CloudOptimizer,
    raster_cfg: RasterConfig,
    densify_cfg: DensifyConfig,
    weights: LossWeights,
    extent: f64,
    /// Global iteration counter across phases; drives input-view round-robin.
    iteration: usize,
    densify_rng: ChaCha8Rng,
    pub log: TrainLog,
}

impl<'a> Trainer<'a> {
    pub fn new(inputs: &'a [ViewRecord], init_cloud: GaussianCloud, cfg: &RunConfig) -> Result<Self> {
        if inputs.is_empty() {
            return Err(SplatError::invalid_input("training requires at least one input view"));
        }
        if init_cloud.is_empty() {
            return Err(SplatError::invalid_input("initial cloud is empty"));
        }
        let extent = init_cloud.extent().max(1e-3);
        let optimizer = CloudOptimizer::new(cfg.optimizer_config(), init_cloud.len(), extent);
        Ok(Trainer {
            inputs,
            cloud: init_cloud,
            optimizer,
            raster_cfg: RasterConfig::default(),
            densify_cfg: cfg.densify_config(),
            weights: cfg.loss_weights(),
            extent,
            iteration: 0,
            densify_rng: seeded_rng(cfg.seed, 11),
            log: TrainLog::default(),
        })
    }

    pub fn raster_config(&self) -> &RasterConfig {
        &self.raster_cfg
    }

    /// Gradient step on one input view plus an optional generated view.
    fn supervised_step(
        &mut self,
        phase_it: usize,
        phase_len: usize,
        generated: Option<(&Image, &Camera)>,
    ) -> Result<(f64, Option<f64>)> {
        let view = &self.inputs[self.iteration % self.inputs.len()];
        let render = rasterize(&self.cloud, &view.camera, &self.raster_cfg);
        let (input_loss, grad_img) = input_view_loss(&render.color, &view.image, &self.weights)?;
        let mut grads = rasterize_backward(&self.cloud, &view.camera, &grad_img, &self.raster_cfg);

        let gen_loss = if let Some((gen_img, gen_cam)) = generated {
            let render_g = rasterize(&self.cloud, gen_cam, &self.raster_cfg);
            let (loss_g, grad_img_g) =
                generated_view_loss(&render_g.color, gen_img, &self.weights)?;
            let grads_g = rasterize_backward(&self.cloud, gen_cam, &grad_img_g, &self.raster_cfg);
            grads.add(&grads_g);
            Some(loss_g)
        } else {
            None
        };

        self.cloud.stats.accumulate(&grads.screen);
        let progress = phase_it as f64 / phase_len.max(1) as f64;
        self.optimizer.step(&mut self.cloud, &grads, progress);
        densify_and_prune(
            &mut self.cloud,
            &mut self.optimizer,
            phase_it,
            phase_len,
            &self.densify_cfg,
            self.extent,
            &mut self.densify_rng,
        );
        self.iteration += 1;
        Ok((input_loss, gen_loss))
    }

    /// Runs a phase with input-view supervision only.
    pub fn run_input_only(&mut self, iters: usize) -> Result<()> {
        for it in 0..iters {
            let (input_loss, _) = self.supervised_step(it, iters, None)?;
            self.log.rows.push(LogRow {
                iteration: self.iteration - 1,
                input_loss,
                gen_loss: None,
                primitives: self.cloud.len(),
            });
        }
        Ok(())
    }
}

/// Baseline optimization: input-view loss only, with density control, for
/// `iters` iterations. Deterministic for a fixed config seed.
pub fn train_baseline(
    inputs: &[ViewRecord],
    init_cloud: GaussianCloud,
    cfg: &RunConfig,
    iters: usize,
) -> Result<(GaussianCloud, TrainLog)> {
    let mut tr = Trainer::new(inputs, init_cloud, cfg)?;
    tr.run_input_only(iters)?;
    Ok((tr.cloud, tr.log))
}

/// Periodic snapshot hook for long runs: called with (iteration, cloud).
pub type CheckpointHook<'a> = &'a mut dyn FnMut(usize, &GaussianCloud) -> Result<()>;

/// The full pipeline: baseline optimization, trajectory initialization from
/// the frozen baseline, then the main loop with periodic guided generation
/// and mixed input/generated supervision. An empty trajectory pool degrades
/// to baseline-style training with a warning record.
pub fn reconstruct(
    inputs: &[ViewRecord],
    init_cloud: GaussianCloud,
    cfg: &RunConfig,
    provider: &dyn SequenceModelProvider,
    decoder: &dyn LatentDecoder,
) -> Result<ReconstructReport> {
    reconstruct_with_hook(inputs, init_cloud, cfg, provider, decoder, None)
}

/// [`reconstruct`] with an optional checkpoint hook invoked every 1000 main
/// loop iterations.
pub fn reconstruct_with_hook(
    inputs: &[ViewRecord],
    init_cloud: GaussianCloud,
    cfg: &RunConfig,
    provider: &dyn SequenceModelProvider,
    decoder: &dyn LatentDecoder,
    mut checkpoint: Option<CheckpointHook<'_>>,
) -> Result<ReconstructReport> {
    cfg.validate()?;
    let schedule = cfg.schedule()?;
    let gen_cfg = cfg.generator_config()?;
    let mut tr = Trainer::new(inputs, init_cloud, cfg)?;
    tr.run_input_only(cfg.baseline_iters)?;

    // The guidance model is the frozen baseline.
    let baseline_cloud = tr.cloud.clone();
    let pool: TrajectoryPool = if cfg.generation_enabled {
        build_pool(inputs, &baseline_cloud, tr.raster_config(), &cfg.trajectory_config())?
    } else {
        TrajectoryPool::default()
    };
    let warning = if cfg.generation_enabled && pool.is_empty() {
        Some("trajectory pool is empty; proceeding without generation".to_string())
    } else {
        None
    };

    let mut gen_rng = seeded_rng(cfg.seed, 23);
    let mut store = GeneratedViewStore::default();
    let mut events = Vec::new();
    let mut picks_current = 0usize;
    let mut picks_global = 0usize;

    for it in 0..cfg.n_iter {
        if !pool.is_empty() && it % cfg.n_gen == 0 {
            let input_index = events.len() % inputs.len();
            let choices = pool.indices_for_source(input_index);
            let trajectory_index = choices[gen_rng.random_range(0..choices.len())];
            let traj = &pool.trajectories[trajectory_index];
            // The conditioning image is the trajectory's own source view;
            // it differs from the sampled input only on the fallback path
            // where that input contributed no trajectories.
            let cond = GenerationCondition::new(
                inputs[traj.source_input].clone(),
                traj.poses.clone(),
            )?;
            let model = provider.model_for(&cond)?;
            let seq = generate(
                &baseline_cloud,
                tr.raster_config(),
                &cond,
                model.as_ref(),
                decoder,
                &schedule,
                &gen_cfg,
                &mut gen_rng,
            )?;
            let frames_added = seq.frames.len();
            store.append_sequence(seq.frames, seq.trajectory);
            events.push(GenEvent {
                iteration: it,
                input_index,
                trajectory_index,
                frames_added,
            });
        }

        let picked = if store.is_empty() {
            None
        } else {
            let (view, from_current) = store.pick(cfg.eta, &mut gen_rng)?;
            if from_current {
                picks_current += 1;
            } else {
                picks_global += 1;
            }
            Some((view.image.clone(), view.camera.clone()))
        };
        let (input_loss, gen_loss) =
            tr.supervised_step(it, cfg.n_iter, picked.as_ref().map(|(i, c)| (i, c)))?;
        tr.log.rows.push(LogRow {
            iteration: tr.iteration - 1,
            input_loss,
            gen_loss,
            primitives: tr.cloud.len(),
        });
        if it > 0 && it % 1000 == 0 {
            if let Some(hook) = checkpoint.as_mut() {
                hook(it, &tr.cloud)?;
            }
        }
    }

    Ok(ReconstructReport {
        cloud: tr.cloud,
        log: tr.log,
        events,
        picks_current,
        picks_global,
        pool_size: pool.len(),
        warning,
    })
}

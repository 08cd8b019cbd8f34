//! Command-line entry points for the synthetic pipeline: scene synthesis,
//! baseline training, trajectory initialization, guided generation, full
//! reconstruction, and evaluation.

use clap::{Parser, Subcommand};
use splatguide::diffusion::{GenerationCondition, IdentityDecoder};
use splatguide::error::{Result, SplatError};
use splatguide::guidance::{generate, GeneratorConfig, SamplerKind};
use splatguide::harness::{
    evaluate, load_run_config, load_scene, save_metrics, save_run_config, save_scene,
    summarize_metrics, synthesize_scene, SceneSpec, SurrogateProvider, SurrogateVariants,
};
use splatguide::math::seeded_rng;
use splatguide::raster::{rasterize, RasterConfig};
use splatguide::recon::{reconstruct_with_hook, train_baseline, RunConfig, SequenceModelProvider};
use splatguide::scene::{load_cloud, save_cloud};
use splatguide::trajectory::{build_pool, load_pool, save_pool};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "splatguide",
    about = "Sparse-input Gaussian splatting with guided sequence generation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a textured room scene and write the scene directory.
    Synth {
        /// Run configuration file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed override for the scene and all downstream runs.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the baseline model from the scene's initialization points.
    TrainBaseline {
        /// Scene directory produced by `synth`.
        #[arg(long)]
        scene: PathBuf,
        /// Optional config override (defaults to the scene's config).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Iteration count (defaults to the config's baseline_iters).
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the trajectory pool from a trained cloud.
    GenTrajectories {
        #[arg(long)]
        scene: PathBuf,
        /// Trained cloud file (for example the baseline checkpoint).
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate one guided sequence along a pooled trajectory.
    Generate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cloud: PathBuf,
        /// Trajectory pool manifest from `gen-trajectories`.
        #[arg(long)]
        pool: PathBuf,
        /// Index of the trajectory to follow.
        #[arg(long, default_value_t = 0)]
        trajectory: usize,
        /// Guidance scale; 0 disables guidance.
        #[arg(long, default_value_t = 1.0)]
        gamma0: f64,
        /// Sampler: "ddpm" or "ddim:<steps>".
        #[arg(long, default_value = "ddim:50")]
        steps: String,
        #[arg(long, default_value_t = 0.9)]
        eta_mask: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full generation-augmented reconstruction.
    Reconstruct {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a cloud against the scene's held-out views.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_sampler(spec: &str) -> Result<SamplerKind> {
    if spec == "ddpm" {
        return Ok(SamplerKind::Ddpm);
    }
    if spec == "ddim" {
        return Ok(SamplerKind::Ddim { steps: 50 });
    }
    if let Some(rest) = spec.strip_prefix("ddim:") {
        let steps: usize = rest
            .parse()
            .map_err(|_| SplatError::invalid_input(format!("bad ddim step count: {rest}")))?;
        return Ok(SamplerKind::Ddim { steps });
    }
    Err(SplatError::invalid_input(format!(
        "sampler must be 'ddpm' or 'ddim:<steps>', got {spec}"
    )))
}

fn load_config_or_default(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => load_run_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn scene_init_cloud(
    scene: &splatguide::harness::SyntheticScene,
    cfg: &RunConfig,
) -> Result<splatguide::scene::GaussianCloud> {
    let mut rng = seeded_rng(cfg.seed, 3);
    splatguide::harness::init_points_from_scene(
        scene,
        cfg.init_points,
        cfg.jitter_sigma,
        cfg.seed,
        &mut rng,
    )
}

fn surrogate_variants(cfg: &RunConfig) -> SurrogateVariants {
    SurrogateVariants {
        sigma_c: cfg.surrogate_sigma,
        color_shift: nalgebra::Vector3::new(
            cfg.surrogate_shift,
            cfg.surrogate_shift,
            cfg.surrogate_shift,
        ),
        patch_frac: cfg.surrogate_patch_frac,
        ..SurrogateVariants::default()
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, seed, out } => {
            let mut cfg = load_config_or_default(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let scene = synthesize_scene(&SceneSpec::from_run_config(&cfg))?;
            std::fs::create_dir_all(&out)?;
            save_scene(&scene, &cfg, &out)?;
            let init = scene_init_cloud(&scene, &cfg)?;
            save_cloud(&init, &out.join("init_points.txt"))?;
            println!(
                "scene written to {}: {} ground-truth primitives, {} inputs, {} eval views",
                out.display(),
                scene.gt_cloud.len(),
                scene.inputs.len(),
                scene.eval_views.len()
            );
            Ok(())
        }
        Command::TrainBaseline { scene, config, iters, out } => {
            let (scene_data, scene_cfg) = load_scene(&scene)?;
            let cfg = match config {
                Some(p) => load_run_config(&p)?,
                None => scene_cfg,
            };
            let init = scene_init_cloud(&scene_data, &cfg)?;
            let iters = iters.unwrap_or(cfg.baseline_iters);
            let (cloud, log) = train_baseline(&scene_data.inputs, init, &cfg, iters)?;
            std::fs::create_dir_all(&out)?;
            save_cloud(&cloud, &out.join("baseline_cloud.txt"))?;
            std::fs::write(out.join("train_log.csv"), log.to_csv())?;
            render_previews(&cloud, &scene_data, &out.join("renders"))?;
            println!("baseline trained for {iters} iterations: {} primitives", cloud.len());
            Ok(())
        }
        Command::GenTrajectories { scene, cloud, out } => {
            let (scene_data, cfg) = load_scene(&scene)?;
            let trained = load_cloud(&cloud)?;
            let pool = build_pool(
                &scene_data.inputs,
                &trained,
                &RasterConfig::default(),
                &cfg.trajectory_config(),
            )?;
            std::fs::create_dir_all(&out)?;
            save_pool(&pool, &out.join("pool.txt"))?;
            println!("trajectory pool with {} trajectories written", pool.len());
            Ok(())
        }
        Command::Generate {
            scene,
            cloud,
            pool,
            trajectory,
            gamma0,
            steps,
            eta_mask,
            seed,
            out,
        } => {
            let (scene_data, cfg) = load_scene(&scene)?;
            let trained = load_cloud(&cloud)?;
            let template = &scene_data.inputs[0].camera;
            let pool = load_pool(&pool, template)?;
            if trajectory >= pool.len() {
                return Err(SplatError::invalid_input(format!(
                    "trajectory index {trajectory} out of range (pool has {})",
                    pool.len()
                )));
            }
            let traj = &pool.trajectories[trajectory];
            let cond = GenerationCondition::new(
                scene_data.inputs[traj.source_input].clone(),
                traj.poses.clone(),
            )?;
            let provider = SurrogateProvider {
                gt_cloud: &scene_data.gt_cloud,
                raster_cfg: RasterConfig::default(),
                variants: surrogate_variants(&cfg),
            };
            let model = provider.model_for(&cond)?;
            let gen_cfg = GeneratorConfig {
                gamma0,
                sampler: parse_sampler(&steps)?,
                eta_mask,
                weights: cfg.loss_weights(),
                ..GeneratorConfig::default()
            };
            let schedule = cfg.schedule()?;
            let mut rng = seeded_rng(seed.unwrap_or(cfg.seed), 23);
            let seq = generate(
                &trained,
                &RasterConfig::default(),
                &cond,
                model.as_ref(),
                &IdentityDecoder,
                &schedule,
                &gen_cfg,
                &mut rng,
            )?;
            std::fs::create_dir_all(&out)?;
            for (j, frame) in seq.frames.iter().enumerate() {
                frame.write_ppm(&out.join(format!("frame_{j:03}.ppm")))?;
            }
            let one =
                splatguide::trajectory::TrajectoryPool { trajectories: vec![traj.clone()] };
            save_pool(&one, &out.join("trajectory.txt"))?;
            println!("generated {} frames along trajectory {trajectory}", seq.frames.len());
            Ok(())
        }
        Command::Reconstruct { scene, config, seed, out } => {
            let (scene_data, scene_cfg) = load_scene(&scene)?;
            let mut cfg = match config {
                Some(p) => load_run_config(&p)?,
                None => scene_cfg,
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let init = scene_init_cloud(&scene_data, &cfg)?;
            let provider = SurrogateProvider {
                gt_cloud: &scene_data.gt_cloud,
                raster_cfg: RasterConfig::default(),
                variants: surrogate_variants(&cfg),
            };
            std::fs::create_dir_all(&out)?;
            let ckpt_dir = out.join("checkpoints");
            std::fs::create_dir_all(&ckpt_dir)?;
            let mut hook = |it: usize, cloud: &splatguide::scene::GaussianCloud| -> Result<()> {
                save_cloud(cloud, &ckpt_dir.join(format!("cloud_{it:06}.txt")))
            };
            let report = reconstruct_with_hook(
                &scene_data.inputs,
                init,
                &cfg,
                &provider,
                &IdentityDecoder,
                Some(&mut hook),
            )?;
            if let Some(w) = &report.warning {
                eprintln!("warning: {w}");
            }
            save_cloud(&report.cloud, &out.join("final_cloud.txt"))?;
            std::fs::write(out.join("run_log.csv"), report.log.to_csv())?;
            save_run_config(&cfg, &out.join("config.txt"))?;
            render_previews(&report.cloud, &scene_data, &out.join("renders"))?;
            println!(
                "reconstruction finished: {} primitives, {} generation events, pool size {}",
                report.cloud.len(),
                report.events.len(),
                report.pool_size
            );
            Ok(())
        }
        Command::Eval { scene, cloud, out } => {
            let (scene_data, _) = load_scene(&scene)?;
            let trained = load_cloud(&cloud)?;
            let report = evaluate(&trained, &scene_data, &RasterConfig::default())?;
            std::fs::create_dir_all(&out)?;
            save_metrics(&report, &out.join("metrics.csv"))?;
            print!("{}", summarize_metrics(&report));
            Ok(())
        }
    }
}

fn render_previews(
    cloud: &splatguide::scene::GaussianCloud,
    scene: &splatguide::harness::SyntheticScene,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let cfg = RasterConfig::default();
    for (i, v) in scene.eval_views.iter().enumerate() {
        let render = rasterize(cloud, &v.camera, &cfg);
        render.color.write_ppm(&dir.join(format!("eval_{i:03}.ppm")))?;
        render.transmittance.write_pgm(&dir.join(format!("eval_{i:03}_coverage.pgm")))?;
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

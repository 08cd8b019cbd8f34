//! Scene directory layout written by `synth` and consumed by the other CLI
//! commands:
//!
//! ```text
//! <dir>/config.txt         run configuration (flat key = value)
//! <dir>/gt_cloud.txt       ground-truth cloud
//! <dir>/init_points.txt    noisy visible-point initialization cloud
//! <dir>/views.txt          camera manifest (inputs and eval views)
//! <dir>/inputs/input_XXX.ppm
//! <dir>/eval/eval_XXX.ppm
//! <dir>/eval/mask_XXX.pgm  observability masks (white = observable)
//! ```
//!
//! Scenes are regenerated deterministically from `config.txt`, so the
//! images and manifests exist for inspection and external tooling.

use super::{synthesize_scene, SceneSpec, SyntheticScene};
use crate::error::{Result, SplatError};
use crate::recon::RunConfig;
use crate::scene::{save_cloud, Camera};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub fn save_run_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    fs::write(path, cfg.to_kv_string())?;
    Ok(())
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    RunConfig::from_kv_str(&text)
}

fn camera_line(kind: &str, index: usize, cam: &Camera, path: &str) -> String {
    let q = cam.orientation();
    let qq = q.quaternion();
    format!(
        "{kind} {index} {} {} {} {} {} {} {} {} {} {} {} {} {} {path}\n",
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        cam.width,
        cam.height,
        qq.w,
        qq.i,
        qq.j,
        qq.k,
        cam.translation.x,
        cam.translation.y,
        cam.translation.z
    )
}

/// Writes the full scene directory for a synthesized scene.
pub fn save_scene(scene: &SyntheticScene, cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("inputs"))?;
    fs::create_dir_all(dir.join("eval"))?;
    save_run_config(cfg, &dir.join("config.txt"))?;
    save_cloud(&scene.gt_cloud, &dir.join("gt_cloud.txt"))?;
    let mut views = String::from("splatguide-views v1\n");
    for (i, v) in scene.inputs.iter().enumerate() {
        let rel = format!("inputs/input_{i:03}.ppm");
        v.image.write_ppm(&dir.join(&rel))?;
        views.push_str(&camera_line("input", i, &v.camera, &rel));
    }
    for (i, v) in scene.eval_views.iter().enumerate() {
        let rel = format!("eval/eval_{i:03}.ppm");
        v.image.write_ppm(&dir.join(&rel))?;
        views.push_str(&camera_line("eval", i, &v.camera, &rel));
        scene.eval_masks[i].write_pgm(&dir.join(format!("eval/mask_{i:03}.pgm")))?;
    }
    fs::write(dir.join("views.txt"), views)?;
    Ok(())
}

/// Regenerates the scene recorded in a scene directory's config.
pub fn load_scene(dir: &Path) -> Result<(SyntheticScene, RunConfig)> {
    let cfg_path = dir.join("config.txt");
    if !cfg_path.exists() {
        return Err(SplatError::invalid_input(format!(
            "{} is not a scene directory (missing config.txt)",
            dir.display()
        )));
    }
    let cfg = load_run_config(&cfg_path)?;
    let scene = synthesize_scene(&SceneSpec::from_run_config(&cfg))?;
    Ok((scene, cfg))
}

/// Writes a metrics report CSV.
pub fn save_metrics(report: &super::MetricsReport, path: &Path) -> Result<()> {
    fs::write(path, report.to_csv())?;
    Ok(())
}

/// Renders a short textual summary of per-split means.
pub fn summarize_metrics(report: &super::MetricsReport) -> String {
    let mut out = String::new();
    for split in [super::Split::Full, super::Split::Observable, super::Split::Unobservable] {
        if let Some(row) = report.mean_for(split) {
            writeln!(
                out,
                "{:>12}: psnr {:>8.3} dB  ssim {:.4}  perceptual {:.5}",
                split.as_str(),
                row.psnr,
                row.ssim,
                row.perceptual
            )
            .unwrap();
        }
    }
    out
}

//! Evaluation over full images and observable/unobservable splits.

use super::SyntheticScene;
use crate::error::{Result, SplatError};
use crate::image::Image;
use crate::losses::{masked_mse, mse, perceptual_pyramid, psnr_from_mse, ssim_masked};
use crate::raster::{rasterize, RasterConfig};
use crate::scene::GaussianCloud;
use rayon::prelude::*;
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Full,
    Observable,
    Unobservable,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Full => "full",
            Split::Observable => "observable",
            Split::Unobservable => "unobservable",
        }
    }

    fn parse(s: &str) -> Result<Split> {
        match s {
            "full" => Ok(Split::Full),
            "observable" => Ok(Split::Observable),
            "unobservable" => Ok(Split::Unobservable),
            other => Err(SplatError::Parse(format!("unknown split {other}"))),
        }
    }
}

/// One metrics row; `view` is None for the per-split mean rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub view: Option<usize>,
    pub split: Split,
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn mean_for(&self, split: Split) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.view.is_none() && r.split == split)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("view,split,psnr,ssim,perceptual\n");
        for r in &self.rows {
            let view = r.view.map(|v| v.to_string()).unwrap_or_else(|| "mean".to_string());
            writeln!(out, "{},{},{},{},{}", view, r.split.as_str(), r.psnr, r.ssim, r.perceptual)
                .unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<MetricsReport> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line != "view,split,psnr,ssim,perceptual" {
                    return Err(SplatError::Parse("bad metrics CSV header".into()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 5 {
                return Err(SplatError::Parse(format!("line {}: need 5 fields", i + 1)));
            }
            let view = if parts[0] == "mean" {
                None
            } else {
                Some(
                    parts[0]
                        .parse::<usize>()
                        .map_err(|_| SplatError::Parse(format!("bad view id {}", parts[0])))?,
                )
            };
            let parse_f = |s: &str| {
                s.parse::<f64>().map_err(|_| SplatError::Parse(format!("bad float {s}")))
            };
            rows.push(MetricsRow {
                view,
                split: Split::parse(parts[1])?,
                psnr: parse_f(parts[2])?,
                ssim: parse_f(parts[3])?,
                perceptual: parse_f(parts[4])?,
            });
        }
        Ok(MetricsReport { rows })
    }
}

fn invert_mask(mask: &Image) -> Image {
    mask.map(|v| 1.0 - v)
}

/// Renders the cloud at every eval view and reports PSNR/SSIM/perceptual on
/// the full image and both observability splits. Split rows are omitted when
/// the split selects no pixels; mean rows average the per-view values
/// (infinite PSNR propagates).
pub fn evaluate(
    cloud: &GaussianCloud,
    scene: &SyntheticScene,
    raster_cfg: &RasterConfig,
) -> Result<MetricsReport> {
    let per_view: Vec<Vec<MetricsRow>> = scene
        .eval_views
        .par_iter()
        .zip(scene.eval_masks.par_iter())
        .enumerate()
        .map(|(vi, (view, mask))| -> Result<Vec<MetricsRow>> {
            let render = rasterize(cloud, &view.camera, raster_cfg);
            let mut rows = Vec::new();
            let full_mse = mse(&render.color, &view.image)?;
            rows.push(MetricsRow {
                view: Some(vi),
                split: Split::Full,
                psnr: psnr_from_mse(full_mse),
                ssim: ssim_masked(&render.color, &view.image, None)?,
                perceptual: perceptual_pyramid(&render.color, &view.image, None)?.0,
            });
            let unobs_mask = invert_mask(mask);
            for (split, m) in
                [(Split::Observable, mask), (Split::Unobservable, &unobs_mask)]
            {
                let (split_mse, pixels) = masked_mse(&render.color, &view.image, m)?;
                if pixels == 0 {
                    continue;
                }
                rows.push(MetricsRow {
                    view: Some(vi),
                    split,
                    psnr: psnr_from_mse(split_mse),
                    ssim: ssim_masked(&render.color, &view.image, Some(m))?,
                    perceptual: perceptual_pyramid(&render.color, &view.image, Some(m))?.0,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let mut report = MetricsReport::default();
    for rows in per_view {
        report.rows.extend(rows);
    }
    for split in [Split::Full, Split::Observable, Split::Unobservable] {
        let members: Vec<&MetricsRow> =
            report.rows.iter().filter(|r| r.view.is_some() && r.split == split).collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        let mean = MetricsRow {
            view: None,
            split,
            psnr: members.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: members.iter().map(|r| r.ssim).sum::<f64>() / n,
            perceptual: members.iter().map(|r| r.perceptual).sum::<f64>() / n,
        };
        report.rows.push(mean);
    }
    Ok(report)
}

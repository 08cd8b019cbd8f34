//! Trajectory initialization: sample candidate poses around each input view,
//! score their renders by hole fraction, and interpolate camera paths from
//! each input pose to its selected candidates.

use crate::error::{Result, SplatError};
use crate::raster::{hole_fraction, rasterize, RasterConfig};
use crate::scene::{Camera, GaussianCloud, ViewRecord};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Debug)]
pub struct CandidatePose {
    pub camera: Camera,
    /// Index of the input view the candidate orbits.
    pub source_index: usize,
    pub polar_deg: f64,
    pub azimuth_deg: f64,
    /// Orbit radius in scene units.
    pub radius: f64,
    /// Hole fraction of the candidate's render; filled in by scoring.
    pub hole_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub poses: Vec<Camera>,
    pub source_input: usize,
    pub candidate_index: usize,
}

#[derive(Clone, Debug, Default)]
pub struct TrajectoryPool {
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryPool {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Trajectory indices whose source input matches; all indices otherwise.
    pub fn indices_for_source(&self, source: usize) -> Vec<usize> {
        let matching: Vec<usize> = self
            .trajectories
            .iter()
            .enumerate()
            .filter(|(_, t)| t.source_input == source)
            .map(|(i, _)| i)
            .collect();
        if matching.is_empty() {
            (0..self.trajectories.len()).collect()
        } else {
            matching
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryConfig {
    pub polar_offsets_deg: Vec<f64>,
    pub azimuth_offsets_deg: Vec<f64>,
    /// Orbit radii as fractions of the center-pixel depth.
    pub radius_factors: Vec<f64>,
    /// Candidates with hole fraction above this are discarded as too far off
    /// the covered scene.
    pub max_hole_frac: f64,
    pub top_k: usize,
    pub seq_len: usize,
    pub eta_mask: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            polar_offsets_deg: vec![-30.0, -15.0, 0.0, 15.0, 30.0],
            azimuth_offsets_deg: vec![-30.0, -15.0, 0.0, 15.0, 30.0],
            radius_factors: vec![1.0, 1.0 / 3.0, 1.0 / 10.0],
            max_hole_frac: 0.10,
            top_k: 6,
            seq_len: 25,
            eta_mask: 0.9,
        }
    }
}

/// Candidate poses orbiting the 3D point one `center_depth` ahead of the
/// input camera. For each (polar, azimuth) offset the direction from the
/// look-at point back to the camera is rotated about the input view's right
/// and up axes, placed at the scaled radius, and re-aimed at the point.
pub fn sample_candidates(
    input_cam: &Camera,
    source_index: usize,
    center_depth: f64,
    cfg: &TrajectoryConfig,
) -> Result<Vec<CandidatePose>> {
    if center_depth <= 0.0 {
        return Err(SplatError::invalid_input("center depth must be positive"));
    }
    let target = input_cam.center() + input_cam.forward_world() * center_depth;
    let back = -input_cam.forward_world();
    let right = input_cam.right_world();
    let up = input_cam.up_world();
    let mut out = Vec::with_capacity(
        cfg.polar_offsets_deg.len() * cfg.azimuth_offsets_deg.len() * cfg.radius_factors.len(),
    );
    for &polar in &cfg.polar_offsets_deg {
        for &azimuth in &cfg.azimuth_offsets_deg {
            for &factor in &cfg.radius_factors {
                let radius = center_depth * factor;
                let rot = UnitQuaternion::from_axis_angle(
                    &nalgebra::Unit::new_normalize(right),
                    polar.to_radians(),
                ) * UnitQuaternion::from_axis_angle(
                    &nalgebra::Unit::new_normalize(up),
                    azimuth.to_radians(),
                );
                let eye = target + rot * back * radius;
                let camera = Camera::look_at(
                    eye,
                    target,
                    up,
                    input_cam.fx,
                    input_cam.fy,
                    input_cam.cx,
                    input_cam.cy,
                    input_cam.width,
                    input_cam.height,
                )?;
                out.push(CandidatePose {
                    camera,
                    source_index,
                    polar_deg: polar,
                    azimuth_deg: azimuth,
                    radius,
                    hole_fraction: 0.0,
                });
            }
        }
    }
    Ok(out)
}

/// Renders each candidate and records its hole fraction.
pub fn score_candidates(
    candidates: &mut [CandidatePose],
    cloud: &GaussianCloud,
    raster_cfg: &RasterConfig,
    eta_mask: f64,
) -> Result<()> {
    let fracs: Vec<f64> = candidates
        .par_iter()
        .map(|c| {
            let out = rasterize(cloud, &c.camera, raster_cfg);
            hole_fraction(&out.transmittance, eta_mask)
        })
        .collect::<Result<_>>()?;
    for (c, f) in candidates.iter_mut().zip(fracs) {
        c.hole_fraction = f;
    }
    Ok(())
}

/// Pure ranking rule: keep candidates with hole fraction in (0, max_frac],
/// sort by fraction descending, and take the first k. Ties break by candidate
/// index so the selection is deterministic.
pub fn filter_and_rank(scored: &[(usize, f64)], max_frac: f64, k: usize) -> Vec<usize> {
    let mut kept: Vec<(usize, f64)> = scored
        .iter()
        .filter(|(_, f)| *f > 0.0 && *f <= max_frac)
        .copied()
        .collect();
    kept.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    kept.into_iter().take(k).map(|(i, _)| i).collect()
}

/// Scores, filters, and ranks candidates against the cloud's renders. May
/// return an empty list when every candidate is either fully covered or too
/// exposed.
pub fn select_candidates(
    mut candidates: Vec<CandidatePose>,
    cloud: &GaussianCloud,
    raster_cfg: &RasterConfig,
    cfg: &TrajectoryConfig,
) -> Result<Vec<CandidatePose>> {
    score_candidates(&mut candidates, cloud, raster_cfg, cfg.eta_mask)?;
    let scored: Vec<(usize, f64)> =
        candidates.iter().enumerate().map(|(i, c)| (i, c.hole_fraction)).collect();
    let picked = filter_and_rank(&scored, cfg.max_hole_frac, cfg.top_k);
    let mut out = Vec::with_capacity(picked.len());
    for i in picked {
        out.push(candidates[i].clone());
    }
    Ok(out)
}

/// Shortest-arc spherical interpolation between unit quaternions.
fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, t: f64) -> UnitQuaternion<f64> {
    let qa = a.quaternion();
    let mut qb = *b.quaternion();
    let mut dot = qa.dot(&qb);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    if dot > 1.0 - 1e-10 {
        // Nearly parallel: normalized lerp avoids the 0/0 in the sine ratio.
        return UnitQuaternion::from_quaternion(qa * (1.0 - t) + qb * t);
    }
    let theta = dot.acos();
    let sin_theta = theta.sin();
    let w_a = ((1.0 - t) * theta).sin() / sin_theta;
    let w_b = (t * theta).sin() / sin_theta;
    UnitQuaternion::from_quaternion(qa * w_a + qb * w_b)
}

/// L poses from `a` to `b`: orientations slerped along the shortest arc,
/// camera centers linearly interpolated, intrinsics copied from `a`.
/// Endpoints are reproduced exactly.
pub fn interpolate_trajectory(a: &Camera, b: &Camera, l: usize) -> Result<Vec<Camera>> {
    if l < 2 {
        return Err(SplatError::invalid_input("trajectory length must be at least 2"));
    }
    let qa = a.orientation();
    let qb = b.orientation();
    let ca = a.center();
    let cb = b.center();
    let mut out = Vec::with_capacity(l);
    out.push(a.clone());
    for j in 1..l - 1 {
        let t = j as f64 / (l - 1) as f64;
        let q = slerp(&qa, &qb, t);
        let c = ca * (1.0 - t) + cb * t;
        out.push(a.with_pose(q, c));
    }
    out.push(a.with_pose(qb, cb));
    Ok(out)
}

/// Center-pixel scene depth from the cloud's render: the alpha-blended depth
/// normalized by accumulated opacity, with a fallback to the median visible
/// primitive depth when the center pixel has no coverage.
pub fn center_depth(cloud: &GaussianCloud, cam: &Camera, raster_cfg: &RasterConfig) -> f64 {
    let out = rasterize(cloud, cam, raster_cfg);
    let (cx, cy) = (cam.width / 2, cam.height / 2);
    let o = out.transmittance.get(cx, cy, 0);
    if o > 0.05 {
        return out.depth.get(cx, cy, 0) / o;
    }
    let mut depths: Vec<f64> = cloud
        .primitives
        .iter()
        .map(|p| cam.world_to_camera(&p.center).z)
        .filter(|&z| z > raster_cfg.near_plane)
        .collect();
    if depths.is_empty() {
        return 1.0;
    }
    depths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    depths[depths.len() / 2]
}

/// Builds the trajectory pool: for every input view, sample candidates around
/// it, keep the highest-hole survivors, and interpolate a fixed-length path
/// from the input pose to each. Pure given (inputs, cloud, config).
pub fn build_pool(
    inputs: &[ViewRecord],
    cloud: &GaussianCloud,
    raster_cfg: &RasterConfig,
    cfg: &TrajectoryConfig,
) -> Result<TrajectoryPool> {
    let mut pool = TrajectoryPool::default();
    for (i, view) in inputs.iter().enumerate() {
        let depth = center_depth(cloud, &view.camera, raster_cfg);
        let candidates = sample_candidates(&view.camera, i, depth, cfg)?;
        let selected = select_candidates(candidates, cloud, raster_cfg, cfg)?;
        for (c_idx, cand) in selected.iter().enumerate() {
            let poses = interpolate_trajectory(&view.camera, &cand.camera, cfg.seq_len)?;
            pool.trajectories.push(Trajectory {
                poses,
                source_input: i,
                candidate_index: c_idx,
            });
        }
    }
    Ok(pool)
}

/// Writes the pool as a text manifest: one pose per line (orientation
/// quaternion then world-to-camera translation), a blank line between
/// trajectories.
pub fn save_pool(pool: &TrajectoryPool, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("splatguide-pool v1 {}\n", pool.len()));
    for t in &pool.trajectories {
        out.push_str(&format!("# source {} candidate {}\n", t.source_input, t.candidate_index));
        for cam in &t.poses {
            let q = cam.orientation();
            let qq = q.quaternion();
            out.push_str(&format!(
                "{} {} {} {} {} {} {}\n",
                qq.w, qq.i, qq.j, qq.k, cam.translation.x, cam.translation.y, cam.translation.z
            ));
        }
        out.push('\n');
    }
    std::fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

/// Reads a pool manifest back, adopting intrinsics from a template camera.
pub fn load_pool(path: &Path, template: &Camera) -> Result<TrajectoryPool> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| SplatError::Parse("empty pool file".into()))?;
    if !header.starts_with("splatguide-pool v1") {
        return Err(SplatError::Parse("bad pool header".into()));
    }
    let mut pool = TrajectoryPool::default();
    let mut current: Vec<Camera> = Vec::new();
    let mut source = 0usize;
    let mut candidate = 0usize;
    for line in lines {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("# source") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() == 3 && parts[1] == "candidate" {
                source = parts[0].parse().map_err(|_| SplatError::Parse("bad source".into()))?;
                candidate =
                    parts[2].parse().map_err(|_| SplatError::Parse("bad candidate".into()))?;
            }
            continue;
        }
        if line.is_empty() {
            if !current.is_empty() {
                pool.trajectories.push(Trajectory {
                    poses: std::mem::take(&mut current),
                    source_input: source,
                    candidate_index: candidate,
                });
            }
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| SplatError::Parse(format!("bad float {t}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 7 {
            return Err(SplatError::Parse("pose lines need 7 fields".into()));
        }
        let q = UnitQuaternion::from_quaternion(Quaternion::new(vals[0], vals[1], vals[2], vals[3]));
        let rotation = q.to_rotation_matrix().into_inner();
        let translation = Vector3::new(vals[4], vals[5], vals[6]);
        current.push(Camera {
            fx: template.fx,
            fy: template.fy,
            cx: template.cx,
            cy: template.cy,
            width: template.width,
            height: template.height,
            rotation,
            translation,
        });
    }
    if !current.is_empty() {
        pool.trajectories.push(Trajectory {
            poses: current,
            source_input: source,
            candidate_index: candidate,
        });
    }
    Ok(pool)
}

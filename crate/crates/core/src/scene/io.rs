//! Plain-text cloud serialization.
//!
//! Format: header line `splatguide-cloud v1 <count>`, then one primitive per
//! line: `mu_x mu_y mu_z s_x s_y s_z q_w q_x q_y q_z alpha r g b`. Floats are
//! printed with the shortest representation that parses back to the same
//! value, so save/load round-trips are bit-identical.

use super::{GaussianCloud, GaussianPrimitive};
use crate::error::{Result, SplatError};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use std::io::{BufReader, Write};
use std::path::Path;

pub const CLOUD_HEADER: &str = "splatguide-cloud v1";

pub fn cloud_to_string(cloud: &GaussianCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 120 + 32);
    out.push_str(&format!("{} {}\n", CLOUD_HEADER, cloud.len()));
    for p in &cloud.primitives {
        let q = p.rotation.quaternion();
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {}\n",
            p.center.x,
            p.center.y,
            p.center.z,
            p.scale.x,
            p.scale.y,
            p.scale.z,
            q.w,
            q.i,
            q.j,
            q.k,
            p.opacity,
            p.color.x,
            p.color.y,
            p.color.z
        ));
    }
    out
}

pub fn cloud_from_str(text: &str) -> Result<GaussianCloud> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| SplatError::Parse("empty cloud file".into()))?;
    let rest = header
        .strip_prefix(CLOUD_HEADER)
        .ok_or_else(|| SplatError::Parse(format!("bad cloud header: {header}")))?;
    let count: usize = rest
        .trim()
        .parse()
        .map_err(|_| SplatError::Parse("bad primitive count in header".into()))?;
    let mut primitives = Vec::with_capacity(count);
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_ascii_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| SplatError::Parse(format!("bad float: {t}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 14 {
            return Err(SplatError::Parse(format!(
                "expected 14 fields per primitive line, got {}",
                vals.len()
            )));
        }
        primitives.push(GaussianPrimitive {
            center: Vector3::new(vals[0], vals[1], vals[2]),
            scale: Vector3::new(vals[3], vals[4], vals[5]),
            rotation: UnitQuaternion::new_unchecked(Quaternion::new(
                vals[6], vals[7], vals[8], vals[9],
            )),
            opacity: vals[10],
            color: Vector3::new(vals[11], vals[12], vals[13]),
        });
    }
    if primitives.len() != count {
        return Err(SplatError::Parse(format!(
            "header promised {count} primitives, found {}",
            primitives.len()
        )));
    }
    Ok(GaussianCloud::new(primitives))
}

pub fn save_cloud(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(cloud_to_string(cloud).as_bytes())?;
    Ok(())
}

pub fn load_cloud(path: &Path) -> Result<GaussianCloud> {
    let mut text = String::new();
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    reader.read_to_string(&mut text)?;
    cloud_from_str(&text)
}

use std::io::Read;

//! Three-channel depth encoding: horizontal disparity, height above the
//! lowest scene point, and angle between surface normal and gravity.
//!
//! Camera coordinates are right-handed with Y up: a pixel `(row v, col u)`
//! at depth `Z` back-projects to `((u − cx)·Z/f, (cy − v)·Z/f, Z)`.

use super::netpbm::DepthMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gravity in camera coordinates for an upright camera.
pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, -1.0, 0.0];

/// Percentiles of inverse depth mapped to 0 and 255.
pub const DISPARITY_PERCENTILES: (f64, f64) = (0.01, 0.99);
/// Percentile of height taken as the ground reference.
pub const GROUND_PERCENTILE: f64 = 0.05;
/// Heights above the reference are clamped to this many metres.
pub const MAX_HEIGHT_M: f64 = 2.55;

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Linear-interpolated percentile of an already sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn back_project(depth: &DepthMap, row: usize, col: usize) -> V3 {
    let k = depth.intrinsics;
    let z = depth.at(row, col) as f64;
    [
        (col as f64 - k.cx as f64) * z / k.focal as f64,
        (k.cy as f64 - row as f64) * z / k.focal as f64,
        z,
    ]
}

/// Central difference along one axis, falling back to a one-sided
/// difference next to invalid pixels or the border.
fn tangent(depth: &DepthMap, row: usize, col: usize, along_rows: bool) -> Option<V3> {
    let (len, idx) = if along_rows {
        (depth.height, row)
    } else {
        (depth.width, col)
    };
    let at = |i: usize| {
        let (r, c) = if along_rows { (i, col) } else { (row, i) };
        depth.is_valid(r, c).then(|| back_project(depth, r, c))
    };
    let prev = if idx > 0 { at(idx - 1) } else { None };
    let next = if idx + 1 < len { at(idx + 1) } else { None };
    let here = at(idx)?;
    match (prev, next) {
        (Some(p), Some(n)) => Some(sub(n, p)),
        (None, Some(n)) => Some(sub(n, here)),
        (Some(p), None) => Some(sub(here, p)),
        (None, None) => None,
    }
}

/// Unit surface normal at a valid pixel, oriented toward the camera.
pub fn surface_normal(depth: &DepthMap, row: usize, col: usize) -> Option<V3> {
    let du = tangent(depth, row, col, false)?;
    let dv = tangent(depth, row, col, true)?;
    let n = cross(du, dv);
    let len = dot(n, n).sqrt();
    if len < 1e-12 {
        return None;
    }
    let mut n = [n[0] / len, n[1] / len, n[2] / len];
    if dot(n, back_project(depth, row, col)) > 0.0 {
        n = [-n[0], -n[1], -n[2]];
    }
    Some(n)
}

pub fn encode_hha(depth: &DepthMap, gravity: [f64; 3]) -> Result<Tensor> {
    let k = depth.intrinsics;
    if !(k.focal.is_finite() && k.focal > 0.0 && k.cx.is_finite() && k.cy.is_finite()) {
        return Err(Error::param("encode_hha", format!("invalid intrinsics {k:?}")));
    }
    let norm = dot(gravity, gravity).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
        return Err(Error::param("encode_hha", format!("gravity must be a unit vector, |g| = {norm}")));
    }
    let up = [-gravity[0], -gravity[1], -gravity[2]];

    let (h, w) = (depth.height, depth.width);
    let valid: Vec<(usize, usize)> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .filter(|&(r, c)| depth.is_valid(r, c))
        .collect();
    if valid.is_empty() {
        return Err(Error::Data("depth map has no valid pixels".into()));
    }

    let mut disparity: Vec<f64> = valid.iter().map(|&(r, c)| 1.0 / depth.at(r, c) as f64).collect();
    disparity.sort_by(f64::total_cmp);
    let d_lo = percentile(&disparity, DISPARITY_PERCENTILES.0);
    let d_hi = percentile(&disparity, DISPARITY_PERCENTILES.1);

    let mut heights: Vec<f64> = valid
        .iter()
        .map(|&(r, c)| dot(back_project(depth, r, c), up))
        .collect();
    heights.sort_by(f64::total_cmp);
    let ground = percentile(&heights, GROUND_PERCENTILE);

    let plane = h * w;
    let mut out = vec![0.0f32; 3 * plane];
    for &(r, c) in &valid {
        let i = r * w + c;
        let d = 1.0 / depth.at(r, c) as f64;
        out[i] = if d_hi - d_lo > 1e-12 {
            ((d - d_lo) / (d_hi - d_lo)).clamp(0.0, 1.0) * 255.0
        } else {
            127.5
        } as f32;
        let height = dot(back_project(depth, r, c), up) - ground;
        out[plane + i] = (height.clamp(0.0, MAX_HEIGHT_M) * 100.0) as f32;
        if let Some(n) = surface_normal(depth, r, c) {
            let deg = dot(n, up).clamp(-1.0, 1.0).acos().to_degrees();
            out[2 * plane + i] = (deg / 180.0 * 255.0) as f32;
        }
    }
    Tensor::new(vec![3, h, w], out)
}

//! Segment plausibility filtering and search-based L-shape box fitting.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_pi, OrientedBox, Point3};
use crate::ground::GroundModel;

/// Floor on point-to-edge distances in the closeness criterion.
pub const CLOSENESS_MIN_DIST: f64 = 0.01;
/// Number of 1° yaw candidates covering `[0°, 90°)`.
pub const YAW_STEPS: usize = 90;
/// Fitted dims never fall below this.
const MIN_DIM: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterParams {
    pub min_points: usize,
    pub max_ground_dist_m: f64,
    pub min_height_m: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            min_points: 10,
            max_ground_dist_m: 1.0,
            min_height_m: 0.5,
        }
    }
}

/// Reference-frame points of one segment with their PP-scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCloud {
    pub segment_id: usize,
    pub frame_index: usize,
    pub points: Vec<Point3>,
    pub pp: Vec<f64>,
}

/// Enough points, lowest point near the ground, and tall enough.
pub fn keep_segment(points: &[Point3], ground: &GroundModel, params: &FilterParams) -> bool {
    if points.len() < params.min_points || points.is_empty() {
        return false;
    }
    let lowest = points
        .iter()
        .map(|&p| ground.signed_distance(p))
        .fold(f64::INFINITY, f64::min);
    let (zmin, zmax) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[2]), hi.max(p[2])));
    lowest <= params.max_ground_dist_m && zmax - zmin >= params.min_height_m
}

pub fn filter_segments(
    segments: Vec<SegmentCloud>,
    ground: &GroundModel,
    params: &FilterParams,
) -> Vec<SegmentCloud> {
    segments
        .into_iter()
        .filter(|s| keep_segment(&s.points, ground, params))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxFit {
    pub bbox: OrientedBox,
    /// Collinear footprint; yaw came from the principal axis instead of the search.
    pub degenerate: bool,
}

/// Closeness score of the rectangle aligned with `theta` around `xy`.
pub fn closeness_criterion(xy: &[[f64; 2]], theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let mut c1 = Vec::with_capacity(xy.len());
    let mut c2 = Vec::with_capacity(xy.len());
    for p in xy {
        c1.push(p[0] * c + p[1] * s);
        c2.push(-p[0] * s + p[1] * c);
    }
    axis_closeness(&c1) + axis_closeness(&c2)
}

fn axis_closeness(proj: &[f64]) -> f64 {
    let (lo, hi) = min_max(proj);
    proj.iter()
        .map(|&v| 1.0 / (hi - v).min(v - lo).max(CLOSENESS_MIN_DIST))
        .sum()
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Candidate yaw of search step `k`.
pub fn yaw_candidate(k: usize) -> f64 {
    (k as f64).to_radians()
}

/// Fits an oriented box with the closeness criterion over a 1° yaw grid.
///
/// The returned box satisfies `l ≥ w` and has yaw in `[0, π)`.
pub fn fit_lshape_box(points: &[Point3]) -> Result<BoxFit> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!(
            "box fit needs ≥ 3 points, got {}",
            points.len()
        )));
    }
    let xy: Vec<[f64; 2]> = points.iter().map(|p| [p[0], p[1]]).collect();
    let first = xy[0];
    if xy.iter().all(|p| *p == first) {
        return Err(Error::Degenerate("all points share one xy location".into()));
    }
    let degenerate = is_collinear(&xy);
    let theta = if degenerate {
        principal_axis(&xy)
    } else {
        let mut best = (0, f64::NEG_INFINITY);
        for k in 0..YAW_STEPS {
            let score = closeness_criterion(&xy, yaw_candidate(k));
            if score > best.1 {
                best = (k, score);
            }
        }
        yaw_candidate(best.0)
    };
    Ok(BoxFit {
        bbox: rectangle_at(points, &xy, theta),
        degenerate,
    })
}

/// Minimal rectangle at yaw `theta` containing all points.
fn rectangle_at(points: &[Point3], xy: &[[f64; 2]], theta: f64) -> OrientedBox {
    let (s, c) = theta.sin_cos();
    let c1: Vec<f64> = xy.iter().map(|p| p[0] * c + p[1] * s).collect();
    let c2: Vec<f64> = xy.iter().map(|p| -p[0] * s + p[1] * c).collect();
    let (lo1, hi1) = min_max(&c1);
    let (lo2, hi2) = min_max(&c2);
    let z: Vec<f64> = points.iter().map(|p| p[2]).collect();
    let (zlo, zhi) = min_max(&z);
    let m1 = 0.5 * (lo1 + hi1);
    let m2 = 0.5 * (lo2 + hi2);
    let (mut l, mut w, mut yaw) = (hi1 - lo1, hi2 - lo2, theta);
    if l < w {
        std::mem::swap(&mut l, &mut w);
        yaw += FRAC_PI_2;
    }
    OrientedBox {
        cx: m1 * c - m2 * s,
        cy: m1 * s + m2 * c,
        cz: 0.5 * (zlo + zhi),
        l: l.max(MIN_DIM),
        w: w.max(MIN_DIM),
        h: (zhi - zlo).max(MIN_DIM),
        yaw: wrap_pi(yaw),
    }
}

fn covariance(xy: &[[f64; 2]]) -> (f64, f64, f64) {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = xy.iter().map(|p| p[1]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in xy {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    (sxx / n, sxy / n, syy / n)
}

fn is_collinear(xy: &[[f64; 2]]) -> bool {
    let (sxx, sxy, syy) = covariance(xy);
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    // minor eigenvalue relative to the trace
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let minor = 0.5 * tr - disc;
    minor <= 1e-12 * tr.max(1e-300)
}

fn principal_axis(xy: &[[f64; 2]]) -> f64 {
    let (sxx, sxy, syy) = covariance(xy);
    0.5 * (2.0 * sxy).atan2(sxx - syy)
}

//! Persistence (PP) scores: how consistently a point is re-observed near the
//! same world location in adjacent frames.
//!
//! For a point `p` of frame `t` the score is the fraction of window frames
//! `j ∈ [t−H, t+H] \ {t}` (clipped at the sequence ends) that contain at least
//! `c_min` points within `radius_m` of `p`. Scores are computed in world
//! coordinates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::seqio::Sequence;
use crate::spatial::HashGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PPParams {
    pub window_h: usize,
    pub radius_m: f64,
    pub c_min: usize,
}

impl Default for PPParams {
    fn default() -> Self {
        PPParams {
            window_h: 3,
            radius_m: 0.3,
            c_min: 1,
        }
    }
}

impl PPParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_h == 0 {
            return Err(Error::Parameter("pp.window_h must be ≥ 1".into()));
        }
        if !(self.radius_m > 0.0 && self.radius_m.is_finite()) {
            return Err(Error::Parameter("pp.radius_m must be positive".into()));
        }
        if self.c_min == 0 {
            return Err(Error::Parameter("pp.c_min must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PPScoreMap {
    pub frame_index: usize,
    pub scores: Vec<f64>,
}

/// Window frames adjacent to `frame_index`, excluding the frame itself.
pub fn window_frames(frame_index: usize, num_frames: usize, h: usize) -> Vec<usize> {
    let lo = frame_index.saturating_sub(h);
    let hi = (frame_index + h).min(num_frames.saturating_sub(1));
    (lo..=hi).filter(|&j| j != frame_index).collect()
}

/// Scores frames of one sequence, reusing one neighbor grid per frame.
pub struct PPScorer<'a> {
    frames: &'a [Vec<Point3>],
    grids: Vec<HashGrid>,
    params: PPParams,
}

impl<'a> PPScorer<'a> {
    /// `frames` are world-frame point sets, one per sequence frame.
    pub fn new(frames: &'a [Vec<Point3>], params: &PPParams) -> Result<Self> {
        params.validate()?;
        let grids = frames
            .par_iter()
            .map(|pts| HashGrid::new(pts, params.radius_m))
            .collect();
        Ok(PPScorer {
            frames,
            grids,
            params: params.clone(),
        })
    }

    pub fn score_frame(&self, frame_index: usize) -> Result<PPScoreMap> {
        let points = self.frames.get(frame_index).ok_or_else(|| {
            Error::Parameter(format!(
                "frame {frame_index} out of range for {} frames",
                self.frames.len()
            ))
        })?;
        let window = window_frames(frame_index, self.frames.len(), self.params.window_h);
        let r2 = self.params.radius_m * self.params.radius_m;
        let c_min = self.params.c_min;
        let scores = points
            .iter()
            .map(|p| {
                if window.is_empty() {
                    return 0.0;
                }
                let hits = window
                    .iter()
                    .filter(|&&j| self.grids[j].count_within(&self.frames[j], p, r2, c_min) >= c_min)
                    .count();
                hits as f64 / window.len() as f64
            })
            .collect();
        Ok(PPScoreMap {
            frame_index,
            scores,
        })
    }

    pub fn score_all(&self) -> Result<Vec<PPScoreMap>> {
        (0..self.frames.len())
            .into_par_iter()
            .map(|i| self.score_frame(i))
            .collect()
    }
}

pub fn compute_pp_scores(seq: &Sequence, frame_index: usize, params: &PPParams) -> Result<PPScoreMap> {
    params.validate()?;
    if frame_index >= seq.len() {
        return Err(Error::Parameter(format!(
            "frame {frame_index} out of range for {} frames",
            seq.len()
        )));
    }
    // Only the window frames need transforming.
    let window = window_frames(frame_index, seq.len(), params.window_h);
    let mut world: Vec<Vec<Point3>> = vec![Vec::new(); seq.len()];
    for &j in window.iter().chain(std::iter::once(&frame_index)) {
        world[j] = crate::seqio::transform_to_world(&seq.frames[j]);
    }
    PPScorer::new(&world, params)?.score_frame(frame_index)
}

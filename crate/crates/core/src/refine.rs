//! Track-level refinement: label propagation with a size-prior fallback,
//! median box statistics, corner alignment for movers, a size filter for
//! static tracks, and box inflation.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_diff, wrap_pi, wrap_two_pi, OrientedBox};
use crate::track::{ClassVote, Track};
use crate::types::{MotionStatus, ObjectClass};

/// Open interval `(min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.min < v && v < self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeBounds {
    pub w: Range,
    pub l: Range,
    pub h: Range,
}

impl SizeBounds {
    pub fn contains(&self, b: &OrientedBox) -> bool {
        self.w.contains(b.w) && self.l.contains(b.l) && self.h.contains(b.h)
    }

    fn validate(&self, name: &str) -> Result<()> {
        for (dim, r) in [("w", self.w), ("l", self.l), ("h", self.h)] {
            if !(r.min < r.max) {
                return Err(Error::Parameter(format!("{name}.{dim}: min must be below max")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizePriorTable {
    pub pedestrian: SizeBounds,
    pub cyclist: SizeBounds,
    pub vehicle: SizeBounds,
}

impl Default for SizePriorTable {
    fn default() -> Self {
        SizePriorTable {
            pedestrian: SizeBounds {
                w: Range::new(0.2, 1.0),
                l: Range::new(0.2, 1.0),
                h: Range::new(0.8, 2.2),
            },
            cyclist: SizeBounds {
                w: Range::new(0.2, 1.0),
                l: Range::new(1.0, 2.5),
                h: Range::new(1.4, 2.0),
            },
            vehicle: SizeBounds {
                w: Range::new(0.5, 3.0),
                l: Range::new(0.5, 8.0),
                h: Range::new(1.0, 3.0),
            },
        }
    }
}

/// Class from box size alone. Rows are tried pedestrian, cyclist, vehicle.
pub fn size_prior_class(b: &OrientedBox, table: &SizePriorTable) -> ObjectClass {
    if table.pedestrian.contains(b) {
        ObjectClass::Pedestrian
    } else if table.cyclist.contains(b) {
        ObjectClass::Cyclist
    } else if table.vehicle.contains(b) {
        ObjectClass::Vehicle
    } else {
        ObjectClass::Background
    }
}

pub fn default_static_bounds() -> SizeBounds {
    SizeBounds {
        w: Range::new(0.2, 3.5),
        l: Range::new(0.2, 20.0),
        h: Range::new(0.5, 4.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineParams {
    /// Number of most-populated boxes feeding the median.
    pub candidates: usize,
    pub margin_m: f64,
    pub vehicle_score_thr: f64,
    pub other_score_thr: f64,
    pub agreement_thr: f64,
    /// Score given to labels assigned from the size prior.
    pub size_prior_score: f64,
    /// Entries averaged when smoothing the motion direction.
    pub heading_window: usize,
    pub size_prior: SizePriorTable,
    pub static_bounds: SizeBounds,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams {
            candidates: 5,
            margin_m: 0.3,
            vehicle_score_thr: 0.5,
            other_score_thr: 0.3,
            agreement_thr: 0.6,
            size_prior_score: 0.5,
            heading_window: 3,
            size_prior: SizePriorTable::default(),
            static_bounds: default_static_bounds(),
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 {
            return Err(Error::Parameter("refine.candidates must be ≥ 1".into()));
        }
        if !(self.margin_m >= 0.0 && self.margin_m.is_finite()) {
            return Err(Error::Parameter("refine.margin_m must be ≥ 0".into()));
        }
        for (name, v) in [
            ("vehicle_score_thr", self.vehicle_score_thr),
            ("other_score_thr", self.other_score_thr),
            ("agreement_thr", self.agreement_thr),
            ("size_prior_score", self.size_prior_score),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parameter(format!("refine.{name} must lie in [0, 1]")));
            }
        }
        if self.heading_window == 0 {
            return Err(Error::Parameter("refine.heading_window must be ≥ 1".into()));
        }
        self.size_prior.pedestrian.validate("refine.size_prior.pedestrian")?;
        self.size_prior.cyclist.validate("refine.size_prior.cyclist")?;
        self.size_prior.vehicle.validate("refine.size_prior.vehicle")?;
        self.static_bounds.validate("refine.static_bounds")
    }

    fn score_threshold(&self, class: ObjectClass) -> f64 {
        if class == ObjectClass::Vehicle {
            self.vehicle_score_thr
        } else {
            self.other_score_thr
        }
    }
}

/// Which refinement steps run; all on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineStages {
    pub boxes: bool,
    pub labels: bool,
    pub static_filter: bool,
    pub inflate: bool,
}

impl Default for RefineStages {
    fn default() -> Self {
        RefineStages {
            boxes: true,
            labels: true,
            static_filter: true,
            inflate: true,
        }
    }
}

/// Lower-middle element of the sorted values.
pub fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Entries with the most segment points, first ones on ties.
fn candidate_indices(track: &Track, m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..track.entries.len()).collect();
    idx.sort_by(|&a, &b| {
        track.entries[b]
            .point_count
            .cmp(&track.entries[a].point_count)
            .then(a.cmp(&b))
    });
    idx.truncate(m.min(idx.len()));
    idx
}

/// The yaw minimizing the summed axis distance (mod π) to all others.
fn circular_median_mod_pi(yaws: &[f64]) -> f64 {
    let axis_dist = |a: f64, b: f64| {
        let d = angle_diff(a, b);
        d.min(PI - d)
    };
    let mut best = (f64::INFINITY, yaws[0]);
    for &y in yaws {
        let cost: f64 = yaws.iter().map(|&o| axis_dist(y, o)).sum();
        if cost < best.0 {
            best = (cost, y);
        }
    }
    best.1
}

/// Motion heading per entry from smoothed finite differences of centers.
fn motion_headings(track: &Track, window: usize) -> Vec<Option<f64>> {
    let n = track.entries.len();
    let c: Vec<[f64; 2]> = track
        .entries
        .iter()
        .map(|e| [e.detection_box.cx, e.detection_box.cy])
        .collect();
    let t: Vec<f64> = track.entries.iter().map(|e| e.frame_index as f64).collect();
    let vel: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            let dt = t[b] - t[a];
            if dt <= 0.0 {
                [0.0, 0.0]
            } else {
                [(c[b][0] - c[a][0]) / dt, (c[b][1] - c[a][1]) / dt]
            }
        })
        .collect();
    let half = window / 2;
    (0..n)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(half), (i + half).min(n - 1));
            let mut v = [0.0, 0.0];
            for u in &vel[lo..=hi] {
                v[0] += u[0];
                v[1] += u[1];
            }
            (v[0] != 0.0 || v[1] != 0.0).then(|| wrap_two_pi(v[1].atan2(v[0])))
        })
        .collect()
}

/// Box with `yaw` and dims `(l, w, h)` sharing the corner nearest `ego` with
/// `original` turned about its center onto `yaw`; the bottom face is kept.
///
/// Turning first matters for near-square detections, whose fitted yaw can be
/// up to 45° off the heading: pinning a corner of the untouched box would
/// swing the refined box around that corner.
pub fn pin_nearest_corner(
    original: &OrientedBox,
    yaw: f64,
    dims: [f64; 3],
    ego: [f64; 3],
) -> OrientedBox {
    let aligned = OrientedBox {
        yaw,
        ..original.aligned_to_heading(yaw)
    };
    let signs = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
    let corners = aligned.bev_corners();
    let k = (0..4)
        .min_by(|&a, &b| {
            let da = (corners[a][0] - ego[0]).hypot(corners[a][1] - ego[1]);
            let db = (corners[b][0] - ego[0]).hypot(corners[b][1] - ego[1]);
            da.total_cmp(&db).then(a.cmp(&b))
        })
        .unwrap_or(0);
    let (su, sv) = signs[k];
    let corner = corners[k];
    let (s, c) = yaw.sin_cos();
    let (u, v) = (su * 0.5 * dims[0], sv * 0.5 * dims[1]);
    let bottom = aligned.cz - 0.5 * aligned.h;
    OrientedBox {
        cx: corner[0] - (u * c - v * s),
        cy: corner[1] - (u * s + v * c),
        cz: bottom + 0.5 * dims[2],
        l: dims[0],
        w: dims[1],
        h: dims[2],
        yaw,
    }
}

/// Median dims from the most-populated boxes; static tracks collapse to one
/// box, moving tracks follow their motion direction with the near corner pinned.
pub fn refine_track_boxes(track: &Track, params: &RefineParams) -> Result<Track> {
    if track.entries.is_empty() {
        return Err(Error::Validation(format!("track {} has no entries", track.id)));
    }
    let cand = candidate_indices(track, params.candidates);
    let boxes: Vec<OrientedBox> = cand.iter().map(|&i| track.entries[i].detection_box).collect();
    let med = |bs: &[OrientedBox], f: fn(&OrientedBox) -> f64| lower_median(&bs.iter().map(f).collect::<Vec<_>>());
    // dims are measured along the yaw each refined box will carry, so a
    // near-square candidate cannot swap length and width
    let dims_of = |aligned: &[OrientedBox]| [med(aligned, |b| b.l), med(aligned, |b| b.w), med(aligned, |b| b.h)];
    let mut out = track.clone();
    match track.motion_status {
        MotionStatus::Moving => {
            let headings = motion_headings(track, params.heading_window);
            let yaw_at = |i: usize| headings[i].unwrap_or_else(|| wrap_two_pi(track.entries[i].detection_box.yaw));
            let aligned: Vec<OrientedBox> =
                cand.iter().map(|&i| track.entries[i].detection_box.aligned_to_heading(yaw_at(i))).collect();
            let dims = dims_of(&aligned);
            for (i, entry) in out.entries.iter_mut().enumerate() {
                entry.bbox = pin_nearest_corner(&entry.detection_box, yaw_at(i), dims, entry.ego_position);
            }
        }
        MotionStatus::Static | MotionStatus::Undetermined => {
            let yaws: Vec<f64> = boxes.iter().map(|b| wrap_pi(b.yaw)).collect();
            let yaw = circular_median_mod_pi(&yaws);
            let aligned: Vec<OrientedBox> = boxes.iter().map(|b| b.aligned_to_heading(yaw)).collect();
            let dims = dims_of(&aligned);
            let b = OrientedBox {
                cx: med(&boxes, |b| b.cx),
                cy: med(&boxes, |b| b.cy),
                cz: med(&boxes, |b| b.cz),
                l: dims[0],
                w: dims[1],
                h: dims[2],
                yaw,
            };
            for entry in &mut out.entries {
                entry.bbox = b;
            }
        }
    }
    Ok(out)
}

/// Label of the highest-scoring entry; ties resolved by majority among the
/// tied entries, then class order.
fn best_label(votes: &[ClassVote]) -> ClassVote {
    let top = votes.iter().map(|v| v.score).fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<(usize, ObjectClass)> = None;
    for class in ObjectClass::ALL {
        let n = votes.iter().filter(|v| v.score == top && v.class == class).count();
        if n > 0 && best.is_none_or(|(m, _)| n > m) {
            best = Some((n, class));
        }
    }
    ClassVote {
        class: best.expect("non-empty votes").1,
        score: top,
    }
}

/// Propagates a reliable track label, falls back to the size prior for
/// moving tracks, and keeps per-frame votes for static ones.
///
/// The label of the highest-scoring entry is reliable when it matches at
/// least `agreement_thr` of the classified entries and its score exceeds the
/// class threshold.
pub fn refine_track_labels(track: &Track, params: &RefineParams) -> Result<Track> {
    if track.entries.is_empty() {
        return Err(Error::Validation(format!("track {} has no entries", track.id)));
    }
    let votes: Vec<ClassVote> = track.entries.iter().filter_map(|e| e.vote).collect();
    let mut out = track.clone();
    let assign_all = |t: &mut Track, v: ClassVote| {
        for e in &mut t.entries {
            e.vote = Some(v);
        }
        t.class_label = Some(v.class);
        t.class_score = Some(v.score);
    };
    let best = (!votes.is_empty()).then(|| best_label(&votes));
    if let Some(best) = best {
        let agree = votes.iter().filter(|v| v.class == best.class).count() as f64 / votes.len() as f64;
        if agree >= params.agreement_thr && best.score > params.score_threshold(best.class) {
            assign_all(&mut out, best);
            return Ok(out);
        }
    }
    match (track.motion_status, best) {
        (MotionStatus::Static, Some(best)) | (MotionStatus::Undetermined, Some(best)) => {
            // per-frame votes stay; unclassified entries take the best label
            for e in &mut out.entries {
                e.vote.get_or_insert(best);
            }
            out.class_label = None;
            out.class_score = None;
        }
        _ => {
            let class = size_prior_class(&track.entries[0].bbox, &params.size_prior);
            assign_all(
                &mut out,
                ClassVote {
                    class,
                    score: params.size_prior_score,
                },
            );
        }
    }
    Ok(out)
}

/// Drops static tracks whose refined box is outside the plausible size range.
pub fn filter_static_by_size(track: Track, bounds: &SizeBounds) -> Option<Track> {
    if track.motion_status == MotionStatus::Moving {
        return Some(track);
    }
    let keep = track.entries.first().is_some_and(|e| bounds.contains(&e.bbox));
    keep.then_some(track)
}

pub fn inflate_box(b: &OrientedBox, margin: f64) -> OrientedBox {
    assert!(margin >= 0.0, "inflation margin must be nonnegative");
    OrientedBox {
        l: b.l + margin,
        w: b.w + margin,
        h: b.h + margin,
        ..*b
    }
}

/// Runs the enabled stages on every track in parallel. Output keeps the
/// input order minus filtered tracks.
pub fn refine_tracks(tracks: &[Track], params: &RefineParams, stages: RefineStages) -> Result<Vec<Track>> {
    params.validate()?;
    let refined: Vec<Option<Track>> = tracks
        .par_iter()
        .map(|t| -> Result<Option<Track>> {
            let mut t = if stages.boxes { refine_track_boxes(t, params)? } else { t.clone() };
            if stages.labels {
                t = refine_track_labels(&t, params)?;
            }
            if stages.static_filter {
                match filter_static_by_size(t, &params.static_bounds) {
                    Some(kept) => t = kept,
                    None => return Ok(None),
                }
            }
            if stages.inflate {
                for e in &mut t.entries {
                    e.bbox = inflate_box(&e.bbox, params.margin_m);
                }
            }
            Ok(Some(t))
        })
        .collect::<Result<_>>()?;
    Ok(refined.into_iter().flatten().collect())
}

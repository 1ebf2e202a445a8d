//! Greedy two-pass multi-object tracking and track motion classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::bev_iou;
use crate::geometry::{bev_dist, OrientedBox, Point3};
use crate::types::{MotionStatus, ObjectClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackParams {
    pub match_radius_m: f64,
    pub relaxed_radius_m: f64,
    /// Maximum relative point-count difference for relaxed matches (exclusive).
    pub count_diff_max: f64,
    /// Tracks are terminated once they have missed more than this many frames.
    pub miss_limit: usize,
    /// Percentile of segment PP-scores tested against `delta`.
    pub alpha: f64,
    pub delta: f64,
    /// Constant-velocity fits with at least this RMS residual count as inconsistent motion.
    pub max_rms_residual_m: f64,
    /// Tracks displaced less than this count as inconsistent motion.
    pub min_displacement_m: f64,
}

impl Default for TrackParams {
    fn default() -> Self {
        TrackParams {
            match_radius_m: 1.0,
            relaxed_radius_m: 5.0,
            count_diff_max: 0.30,
            miss_limit: 3,
            alpha: 0.20,
            delta: 0.70,
            max_rms_residual_m: 0.5,
            min_displacement_m: 2.0,
        }
    }
}

impl TrackParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_radius_m > 0.0 && self.relaxed_radius_m >= self.match_radius_m) {
            return Err(Error::Parameter(
                "track radii must be positive with relaxed_radius_m ≥ match_radius_m".into(),
            ));
        }
        for (name, v) in [("count_diff_max", self.count_diff_max), ("alpha", self.alpha), ("delta", self.delta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parameter(format!("track.{name} must lie in [0, 1]")));
            }
        }
        if !(self.max_rms_residual_m > 0.0 && self.min_displacement_m >= 0.0) {
            return Err(Error::Parameter("track motion thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// A per-frame detection offered to the tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: usize,
    pub bbox: OrientedBox,
    pub point_count: usize,
    /// `alpha` percentile of the segment's PP-scores.
    pub pp_alpha: f64,
    /// Caller-side reference to the segment behind this detection.
    pub segment: usize,
    pub ego_position: Point3,
}

/// Class evidence attached to one track entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassVote {
    pub class: ObjectClass,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub frame_index: usize,
    pub bbox: OrientedBox,
    /// Box as fitted on the detection, before any refinement.
    pub detection_box: OrientedBox,
    pub segment: usize,
    pub point_count: usize,
    pub pp_alpha: f64,
    pub ego_position: Point3,
    #[serde(default)]
    pub vote: Option<ClassVote>,
}

impl TrackEntry {
    pub fn from_detection(d: &Detection) -> Self {
        TrackEntry {
            frame_index: d.frame_index,
            bbox: d.bbox,
            detection_box: d.bbox,
            segment: d.segment,
            point_count: d.point_count,
            pp_alpha: d.pp_alpha,
            ego_position: d.ego_position,
            vote: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u64,
    pub entries: Vec<TrackEntry>,
    pub motion_status: MotionStatus,
    #[serde(default)]
    pub class_label: Option<ObjectClass>,
    #[serde(default)]
    pub class_score: Option<f64>,
    pub miss_count: usize,
}

impl Track {
    fn new(id: u64, first: &Detection) -> Self {
        Track {
            id,
            entries: vec![TrackEntry::from_detection(first)],
            motion_status: MotionStatus::Undetermined,
            class_label: None,
            class_score: None,
            miss_count: 0,
        }
    }

    pub fn last(&self) -> Option<&TrackEntry> {
        self.entries.last()
    }
}

/// Constant-velocity prediction of the track box at `target_frame`.
pub fn predict_track(track: &Track, target_frame: usize) -> Result<OrientedBox> {
    let n = track.entries.len();
    let last = track
        .entries
        .last()
        .ok_or_else(|| Error::Validation(format!("track {} has no entries", track.id)))?;
    let mut out = last.bbox;
    if n >= 2 {
        let prev = &track.entries[n - 2];
        let gap = (last.frame_index - prev.frame_index) as f64;
        let ahead = target_frame as f64 - last.frame_index as f64;
        out.cx += (last.bbox.cx - prev.bbox.cx) / gap * ahead;
        out.cy += (last.bbox.cy - prev.bbox.cy) / gap * ahead;
        out.cz += (last.bbox.cz - prev.bbox.cz) / gap * ahead;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssignmentResult {
    /// `(track id, detection index)`.
    pub matched: Vec<(u64, usize)>,
    pub unmatched_tracks: Vec<u64>,
    pub unmatched_detections: Vec<usize>,
}

/// Greedy nearest-pair assignment within `match_radius_m`, then a relaxed
/// pass within `relaxed_radius_m` for pairs whose segment point counts differ
/// by less than `count_diff_max`.
pub fn associate(
    tracks: &[Track],
    detections: &[Detection],
    frame_index: usize,
    params: &TrackParams,
) -> Result<AssignmentResult> {
    let mut predicted = Vec::with_capacity(tracks.len());
    for t in tracks {
        predicted.push(predict_track(t, frame_index)?);
    }
    let mut dist = vec![0.0; tracks.len() * detections.len()];
    for (ti, p) in predicted.iter().enumerate() {
        for (di, d) in detections.iter().enumerate() {
            dist[ti * detections.len() + di] = bev_dist(p.center(), d.bbox.center());
        }
    }
    let d_at = |ti: usize, di: usize| dist[ti * detections.len() + di];

    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    let mut matched = Vec::new();

    let greedy = |pairs: &mut Vec<(f64, usize, usize)>,
                      track_used: &mut [bool],
                      det_used: &mut [bool],
                      matched: &mut Vec<(usize, usize)>| {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for &(_, ti, di) in pairs.iter() {
            if !track_used[ti] && !det_used[di] {
                track_used[ti] = true;
                det_used[di] = true;
                matched.push((ti, di));
            }
        }
    };

    let mut strict: Vec<(f64, usize, usize)> = Vec::new();
    for ti in 0..tracks.len() {
        for di in 0..detections.len() {
            let d = d_at(ti, di);
            if d <= params.match_radius_m {
                strict.push((d, ti, di));
            }
        }
    }
    greedy(&mut strict, &mut track_used, &mut det_used, &mut matched);

    let mut relaxed: Vec<(f64, usize, usize)> = Vec::new();
    for ti in (0..tracks.len()).filter(|&t| !track_used[t]) {
        let n_trk = tracks[ti].last().map_or(0, |e| e.point_count) as f64;
        for di in (0..detections.len()).filter(|&d| !det_used[d]) {
            let d = d_at(ti, di);
            let n_det = detections[di].point_count as f64;
            let denom = n_det.max(n_trk);
            if d <= params.relaxed_radius_m
                && denom > 0.0
                && (n_det - n_trk).abs() / denom < params.count_diff_max
            {
                relaxed.push((d, ti, di));
            }
        }
    }
    greedy(&mut relaxed, &mut track_used, &mut det_used, &mut matched);

    Ok(AssignmentResult {
        matched: matched.into_iter().map(|(ti, di)| (tracks[ti].id, di)).collect(),
        unmatched_tracks: (0..tracks.len())
            .filter(|&t| !track_used[t])
            .map(|t| tracks[t].id)
            .collect(),
        unmatched_detections: (0..detections.len()).filter(|&d| !det_used[d]).collect(),
    })
}

/// Active and finished tracks of one sequence.
#[derive(Debug, Clone, Default)]
pub struct TrackSet {
    pub active: Vec<Track>,
    pub finished: Vec<Track>,
    pub next_id: u64,
}

pub fn update_tracks(
    set: &mut TrackSet,
    assignment: &AssignmentResult,
    detections: &[Detection],
    params: &TrackParams,
) {
    let mut matched_det = rustc_hash::FxHashMap::default();
    for &(tid, di) in &assignment.matched {
        matched_det.insert(tid, di);
    }
    let mut still_active = Vec::with_capacity(set.active.len());
    for mut track in set.active.drain(..) {
        if let Some(&di) = matched_det.get(&track.id) {
            track.entries.push(TrackEntry::from_detection(&detections[di]));
            track.miss_count = 0;
            still_active.push(track);
        } else {
            track.miss_count += 1;
            if track.miss_count > params.miss_limit {
                set.finished.push(track);
            } else {
                still_active.push(track);
            }
        }
    }
    for &di in &assignment.unmatched_detections {
        still_active.push(Track::new(set.next_id, &detections[di]));
        set.next_id += 1;
    }
    set.active = still_active;
}

/// Sequential tracker over frames.
#[derive(Debug, Clone)]
pub struct Tracker {
    params: TrackParams,
    set: TrackSet,
}

impl Tracker {
    pub fn new(params: TrackParams) -> Self {
        Tracker {
            params,
            set: TrackSet::default(),
        }
    }

    pub fn step(&mut self, frame_index: usize, detections: &[Detection]) -> Result<AssignmentResult> {
        let assignment = associate(&self.set.active, detections, frame_index, &self.params)?;
        update_tracks(&mut self.set, &assignment, detections, &self.params);
        Ok(assignment)
    }

    pub fn active(&self) -> &[Track] {
        &self.set.active
    }

    /// Ends the sequence; returns all tracks ordered by id with motion status set.
    pub fn finish(mut self) -> Vec<Track> {
        let mut all = std::mem::take(&mut self.set.finished);
        all.append(&mut self.set.active);
        all.sort_by_key(|t| t.id);
        for t in &mut all {
            t.miss_count = 0;
            t.motion_status = classify_motion(t, &self.params);
        }
        all
    }
}

/// Nearest-rank percentile of `values` (`q` in `(0, 1]`).
pub fn nearest_rank_percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// RMS residual of a least-squares constant-velocity fit of the BEV centers.
pub fn constant_velocity_rms(track: &Track) -> f64 {
    let n = track.entries.len();
    if n < 2 {
        return 0.0;
    }
    let t: Vec<f64> = track.entries.iter().map(|e| e.frame_index as f64).collect();
    let tm = t.iter().sum::<f64>() / n as f64;
    let stt: f64 = t.iter().map(|ti| (ti - tm) * (ti - tm)).sum();
    let mut sq = 0.0;
    for axis in 0..2 {
        let y: Vec<f64> = track
            .entries
            .iter()
            .map(|e| if axis == 0 { e.bbox.cx } else { e.bbox.cy })
            .collect();
        let ym = y.iter().sum::<f64>() / n as f64;
        let sty: f64 = t.iter().zip(&y).map(|(ti, yi)| (ti - tm) * (yi - ym)).sum();
        let slope = if stt > 0.0 { sty / stt } else { 0.0 };
        for (ti, yi) in t.iter().zip(&y) {
            let r = yi - (ym + slope * (ti - tm));
            sq += r * r;
        }
    }
    (sq / n as f64).sqrt()
}

/// Static if every segment is persistent, every box overlaps the largest
/// box, or the motion is not consistent with a constant velocity.
pub fn classify_motion(track: &Track, params: &TrackParams) -> MotionStatus {
    let entries = &track.entries;
    if entries.len() < 2 {
        return MotionStatus::Static;
    }
    let persistent = entries.iter().all(|e| e.pp_alpha >= params.delta);
    if persistent {
        return MotionStatus::Static;
    }
    let largest = entries
        .iter()
        .max_by(|a, b| a.bbox.bev_area().total_cmp(&b.bbox.bev_area()))
        .map(|e| e.bbox)
        .expect("non-empty");
    if entries.iter().all(|e| bev_iou(&e.bbox, &largest) > 0.0) {
        return MotionStatus::Static;
    }
    let first = entries[0].bbox.center();
    let last = entries[entries.len() - 1].bbox.center();
    let displacement = bev_dist(first, last);
    if constant_velocity_rms(track) >= params.max_rms_residual_m
        || displacement < params.min_displacement_m
    {
        return MotionStatus::Static;
    }
    MotionStatus::Moving
}

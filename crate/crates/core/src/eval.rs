//! Rotated-box IoU, average precision and heading-weighted AP, with motion
//! and range partitions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geometry::{angle_diff, OrientedBox};
use crate::seqio::{GroundTruthLabel, PseudoLabel};
use crate::types::ObjectClass;

/// Signed area of a polygon (positive for counter-clockwise order).
fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s
}

/// Sutherland–Hodgman clipping of `subject` against the convex CCW `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

#[inline]
fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

pub fn bev_intersection_area(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if a.bev_area() <= 0.0 || b.bev_area() <= 0.0 {
        return 0.0;
    }
    // quick reject on circumscribed circles
    let ra = 0.5 * a.l.hypot(a.w);
    let rb = 0.5 * b.l.hypot(b.w);
    if (a.cx - b.cx).hypot(a.cy - b.cy) > ra + rb {
        return 0.0;
    }
    polygon_area(&clip_convex(&a.bev_corners(), &b.bev_corners())).max(0.0)
}

/// Intersection over union of the yaw-rotated footprints.
pub fn bev_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (a, b) = ordered(a, b);
    let inter = bev_intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.bev_area() + b.bev_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn iou3d(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (a, b) = ordered(a, b);
    let dz = a.z_max().min(b.z_max()) - a.z_min().max(b.z_min());
    if dz <= 0.0 || a.h <= 0.0 || b.h <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Canonical argument order so both IoUs are exactly symmetric.
fn ordered<'a>(a: &'a OrientedBox, b: &'a OrientedBox) -> (&'a OrientedBox, &'a OrientedBox) {
    let ka = [a.cx, a.cy, a.cz, a.l, a.w, a.h, a.yaw];
    let kb = [b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw];
    for (x, y) in ka.iter().zip(&kb) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return (a, b),
            std::cmp::Ordering::Greater => return (b, a),
            std::cmp::Ordering::Equal => {}
        }
    }
    (a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouMode {
    pub fn iou(self, a: &OrientedBox, b: &OrientedBox) -> f64 {
        match self {
            IouMode::Bev => bev_iou(a, b),
            IouMode::ThreeD => iou3d(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub frame_index: usize,
    pub bbox: OrientedBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    /// Precision at each distinct score threshold, descending.
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub num_tp: usize,
    pub num_fp: usize,
    pub num_gt: usize,
}

/// Outcome of greedy matching of one detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOutcome {
    /// Index into the ground-truth list, when matched.
    pub gt: Option<usize>,
    /// Heading weight `1 − Δ/π` for matched detections.
    pub heading_weight: f64,
}

/// Detection indices sorted by descending score (stable on ties).
pub fn score_order(dets: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Greedy matching in descending score order to the highest-IoU unmatched
/// ground truth of the same frame with IoU ≥ `iou_thr`.
pub fn greedy_match(
    dets: &[ScoredBox],
    gts: &[(usize, OrientedBox)],
    iou_thr: f64,
    mode: IouMode,
) -> Vec<MatchOutcome> {
    let mut by_frame: rustc_hash::FxHashMap<usize, Vec<usize>> = Default::default();
    for (i, (f, _)) in gts.iter().enumerate() {
        by_frame.entry(*f).or_default().push(i);
    }
    let mut gt_used = vec![false; gts.len()];
    let mut out = vec![
        MatchOutcome {
            gt: None,
            heading_weight: 0.0,
        };
        dets.len()
    ];
    for di in score_order(dets) {
        let d = &dets[di];
        let Some(cands) = by_frame.get(&d.frame_index) else {
            continue;
        };
        let mut best: Option<(f64, usize)> = None;
        for &gi in cands {
            if gt_used[gi] {
                continue;
            }
            let iou = mode.iou(&d.bbox, &gts[gi].1);
            if iou >= iou_thr && best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, gi));
            }
        }
        if let Some((_, gi)) = best {
            gt_used[gi] = true;
            out[di] = MatchOutcome {
                gt: Some(gi),
                heading_weight: 1.0 - angle_diff(d.bbox.yaw, gts[gi].1.yaw) / PI,
            };
        }
    }
    out
}

/// How a detection counts toward a partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    TruePositive { weight: f64 },
    FalsePositive,
    Ignored,
}

/// All-point interpolated AP from per-detection outcomes. Detections with
/// equal scores form a single threshold step. `None` without ground truth.
pub fn average_precision(
    scores: &[f64],
    outcomes: &[Outcome],
    num_gt: usize,
    heading_weighted: bool,
) -> Option<ApResult> {
    if num_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len())
        .filter(|&i| outcomes[i] != Outcome::Ignored)
        .collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (mut tp, mut tp_w, mut fp) = (0usize, 0.0f64, 0usize);
    let mut precision = Vec::new();
    let mut recall = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            match outcomes[order[i]] {
                Outcome::TruePositive { weight } => {
                    tp += 1;
                    tp_w += if heading_weighted { weight } else { 1.0 };
                }
                Outcome::FalsePositive => fp += 1,
                Outcome::Ignored => unreachable!(),
            }
            i += 1;
        }
        precision.push(tp_w / (tp + fp) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for k in 0..recall.len() {
        let p_interp = precision[k..].iter().copied().fold(0.0, f64::max);
        ap += (recall[k] - prev_r) * p_interp;
        prev_r = recall[k];
    }
    Some(ApResult {
        ap: ap.clamp(0.0, 1.0),
        precision,
        recall,
        num_tp: tp,
        num_fp: fp,
        num_gt,
    })
}

fn ap_impl(
    dets: &[ScoredBox],
    gts: &[(usize, OrientedBox)],
    iou_thr: f64,
    mode: IouMode,
    heading_weighted: bool,
) -> Option<ApResult> {
    let matches = greedy_match(dets, gts, iou_thr, mode);
    let outcomes: Vec<Outcome> = matches
        .iter()
        .map(|m| match m.gt {
            Some(_) => Outcome::TruePositive {
                weight: m.heading_weight,
            },
            None => Outcome::FalsePositive,
        })
        .collect();
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    average_precision(&scores, &outcomes, gts.len(), heading_weighted)
}

pub fn compute_ap(
    dets: &[ScoredBox],
    gts: &[(usize, OrientedBox)],
    iou_thr: f64,
    mode: IouMode,
) -> Option<ApResult> {
    ap_impl(dets, gts, iou_thr, mode, false)
}

pub fn compute_aph(
    dets: &[ScoredBox],
    gts: &[(usize, OrientedBox)],
    iou_thr: f64,
    mode: IouMode,
) -> Option<ApResult> {
    ap_impl(dets, gts, iou_thr, mode, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalParams {
    pub iou_thr: f64,
    /// Ground truth faster than this is `moving`.
    pub moving_speed_mps: f64,
    /// Range bucket edges in meters; buckets are `[0, e0), [e0, e1), …, [e_last, ∞)`.
    pub range_edges: Vec<f64>,
    /// Half extents of the evaluation crop around the ego, along and across its heading.
    pub crop_half_length_m: f64,
    pub crop_half_width_m: f64,
    /// Ground truth with fewer sensor returns is excluded.
    pub min_gt_points: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            iou_thr: 0.4,
            moving_speed_mps: 1.0,
            range_edges: vec![30.0, 50.0],
            crop_half_length_m: 50.0,
            crop_half_width_m: 20.0,
            min_gt_points: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionSplit {
    All,
    Moving,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "ap_bev")]
    ApBev,
    #[serde(rename = "ap_3d")]
    Ap3d,
    #[serde(rename = "aph_bev")]
    AphBev,
    #[serde(rename = "aph_3d")]
    Aph3d,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::ApBev, Metric::Ap3d, Metric::AphBev, Metric::Aph3d];

    fn mode(self) -> IouMode {
        match self {
            Metric::ApBev | Metric::AphBev => IouMode::Bev,
            Metric::Ap3d | Metric::Aph3d => IouMode::ThreeD,
        }
    }

    fn heading_weighted(self) -> bool {
        matches!(self, Metric::AphBev | Metric::Aph3d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    /// `movable` for the class-agnostic evaluation, else a class name.
    pub class: String,
    pub motion: MotionSplit,
    /// `all` or `[lo, hi)`.
    pub range: String,
    pub metric: Metric,
    /// Absent when the partition holds no ground truth.
    pub value: Option<f64>,
    pub num_gt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub entries: Vec<EvalEntry>,
}

impl EvalReport {
    pub fn get(&self, class: &str, motion: MotionSplit, range: &str, metric: Metric) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.class == class && e.motion == motion && e.range == range && e.metric == metric)
            .and_then(|e| e.value)
    }
}

fn range_label(edges: &[f64], bucket: usize) -> String {
    let lo = if bucket == 0 { 0.0 } else { edges[bucket - 1] };
    match edges.get(bucket) {
        Some(hi) => format!("[{lo}, {hi})"),
        None => format!("[{lo}, inf)"),
    }
}

fn range_bucket(edges: &[f64], dist: f64) -> usize {
    edges.iter().take_while(|&&e| dist >= e).count()
}

/// Ego-relative `(along, across, distance)` of a box center.
fn ego_relative(b: &OrientedBox, ego: [f64; 3]) -> (f64, f64, f64) {
    let (dx, dy) = (b.cx - ego[0], b.cy - ego[1]);
    let (s, c) = ego[2].sin_cos();
    (dx * c + dy * s, -dx * s + dy * c, dx.hypot(dy))
}

/// Evaluates detections against ground truth in every (class, motion,
/// range, metric) partition.
///
/// Both sides are cropped to the ego-centred region first. Ground truth is
/// split by speed and by BEV range; a detection matched to ground truth
/// outside a partition is ignored there, and an unmatched detection counts as
/// a false positive in each partition of its own range bucket. Ground truth
/// below the point-count gate lies outside every partition.
pub fn split_eval(dets: &[PseudoLabel], gts: &[GroundTruthLabel], params: &EvalParams) -> EvalReport {
    // ego pose per frame from the ground truth records
    let mut ego_of_frame: rustc_hash::FxHashMap<usize, [f64; 3]> = Default::default();
    for g in gts {
        ego_of_frame.entry(g.frame_index).or_insert([g.ego_x, g.ego_y, g.ego_yaw]);
    }
    let ego = |f: usize| ego_of_frame.get(&f).copied().unwrap_or([0.0; 3]);
    let in_crop = |b: &OrientedBox, f: usize| {
        let (u, v, _) = ego_relative(b, ego(f));
        u.abs() <= params.crop_half_length_m && v.abs() <= params.crop_half_width_m
    };

    // boxes with too few points still take part in matching so that a
    // detection on one is neither credited nor penalised
    let gts: Vec<&GroundTruthLabel> = gts
        .iter()
        .filter(|g| in_crop(&g.bbox(), g.frame_index))
        .collect();
    let counted = |g: &GroundTruthLabel| g.num_points.is_none_or(|n| n >= params.min_gt_points);
    let dets: Vec<&PseudoLabel> = dets
        .iter()
        .filter(|d| in_crop(&d.bbox, d.frame_index))
        .collect();

    let num_buckets = params.range_edges.len() + 1;
    let mut entries = Vec::new();
    let class_groups: [(&str, Option<ObjectClass>); 4] = [
        ("movable", None),
        ("vehicle", Some(ObjectClass::Vehicle)),
        ("pedestrian", Some(ObjectClass::Pedestrian)),
        ("cyclist", Some(ObjectClass::Cyclist)),
    ];
    for (class_name, class) in class_groups {
        let class_dets: Vec<&PseudoLabel> = dets
            .iter()
            .copied()
            .filter(|d| match class {
                None => d.class_label.is_movable(),
                Some(c) => d.class_label == c,
            })
            .collect();
        let class_gts: Vec<&GroundTruthLabel> = gts
            .iter()
            .copied()
            .filter(|g| class.is_none_or(|c| g.class == c))
            .collect();
        let scored: Vec<ScoredBox> = class_dets
            .iter()
            .map(|d| ScoredBox {
                frame_index: d.frame_index,
                bbox: d.bbox,
                score: d.score,
            })
            .collect();
        let scores: Vec<f64> = scored.iter().map(|d| d.score).collect();
        let gt_boxes: Vec<(usize, OrientedBox)> =
            class_gts.iter().map(|g| (g.frame_index, g.bbox())).collect();
        let gt_motion: Vec<MotionSplit> = class_gts
            .iter()
            .map(|g| {
                if g.speed_mps > params.moving_speed_mps {
                    MotionSplit::Moving
                } else {
                    MotionSplit::Static
                }
            })
            .collect();
        let gt_counted: Vec<bool> = class_gts.iter().map(|g| counted(g)).collect();
        let gt_bucket: Vec<usize> = class_gts
            .iter()
            .map(|g| range_bucket(&params.range_edges, ego_relative(&g.bbox(), ego(g.frame_index)).2))
            .collect();
        let det_bucket: Vec<usize> = class_dets
            .iter()
            .map(|d| range_bucket(&params.range_edges, ego_relative(&d.bbox, ego(d.frame_index)).2))
            .collect();

        for metric in Metric::ALL {
            let matches = greedy_match(&scored, &gt_boxes, params.iou_thr, metric.mode());
            for motion in [MotionSplit::All, MotionSplit::Moving, MotionSplit::Static] {
                for bucket in std::iter::once(None).chain((0..num_buckets).map(Some)) {
                    let in_part = |gi: usize| {
                        gt_counted[gi]
                            && (motion == MotionSplit::All || gt_motion[gi] == motion)
                            && bucket.is_none_or(|b| gt_bucket[gi] == b)
                    };
                    let num_gt = (0..gt_boxes.len()).filter(|&gi| in_part(gi)).count();
                    let outcomes: Vec<Outcome> = matches
                        .iter()
                        .enumerate()
                        .map(|(di, m)| match m.gt {
                            Some(gi) if in_part(gi) => Outcome::TruePositive {
                                weight: m.heading_weight,
                            },
                            Some(_) => Outcome::Ignored,
                            None if bucket.is_none_or(|b| det_bucket[di] == b) => {
                                Outcome::FalsePositive
                            }
                            None => Outcome::Ignored,
                        })
                        .collect();
                    let value = average_precision(&scores, &outcomes, num_gt, metric.heading_weighted())
                        .map(|r| r.ap);
                    entries.push(EvalEntry {
                        class: class_name.to_string(),
                        motion,
                        range: bucket.map_or("all".to_string(), |b| range_label(&params.range_edges, b)),
                        metric,
                        value,
                        num_gt,
                    });
                }
            }
        }
    }
    EvalReport { entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(x: f64, y: f64) -> OrientedBox {
        OrientedBox::new([x, y, 0.5], 1.0, 1.0, 1.0, 0.0)
    }

    #[test]
    fn iou_examples() {
        let a = unit(0.0, 0.0);
        assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-12);
        assert!((bev_iou(&a, &unit(0.5, 0.0)) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(bev_iou(&a, &unit(3.0, 0.0)), 0.0);
        let mut zero = a;
        zero.w = 0.0;
        assert_eq!(bev_iou(&a, &zero), 0.0);

        assert!((iou3d(&a, &a) - 1.0).abs() < 1e-12);
        let mut up = a;
        up.cz += 0.5;
        assert!((iou3d(&a, &up) - 1.0 / 3.0).abs() < 1e-12);
        up.cz += 1.0;
        assert_eq!(iou3d(&a, &up), 0.0);
    }

    #[test]
    fn rotated_square_overlap() {
        // unit square vs same square rotated 45°: octagon area 2(√2 − 1)
        let a = unit(0.0, 0.0);
        let mut b = a;
        b.yaw = PI / 4.0;
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        let expected = inter / (2.0 - inter);
        assert!((bev_iou(&a, &b) - expected).abs() < 1e-12);
    }

    fn sb(frame: usize, b: OrientedBox, score: f64) -> ScoredBox {
        ScoredBox {
            frame_index: frame,
            bbox: b,
            score,
        }
    }

    #[test]
    fn ap_examples() {
        let g = unit(0.0, 0.0);
        let r = compute_ap(&[sb(0, g, 1.0)], &[(0, g)], 0.4, IouMode::Bev).unwrap();
        assert_eq!(r.ap, 1.0);

        let r = compute_ap(&[sb(0, g, 0.9), sb(0, unit(9.0, 9.0), 0.8)], &[(0, g)], 0.4, IouMode::Bev)
            .unwrap();
        assert_eq!(r.recall, vec![1.0, 1.0]);
        assert_eq!(r.precision, vec![1.0, 0.5]);
        assert_eq!(r.ap, 1.0);

        let r = compute_ap(&[sb(0, g, 0.9)], &[(0, g), (0, unit(5.0, 0.0))], 0.4, IouMode::Bev).unwrap();
        assert_eq!(r.ap, 0.5);

        assert!(compute_ap(&[sb(0, g, 0.9)], &[], 0.4, IouMode::Bev).is_none());
    }

    #[test]
    fn aph_examples() {
        let g = unit(0.0, 0.0);
        let r = compute_aph(&[sb(0, g, 1.0)], &[(0, g)], 0.4, IouMode::Bev).unwrap();
        assert_eq!(r.ap, 1.0);
        let mut flipped = g;
        flipped.yaw = PI;
        let r = compute_aph(&[sb(0, flipped, 1.0)], &[(0, g)], 0.4, IouMode::Bev).unwrap();
        assert_eq!(r.ap, 0.0);
        let mut quarter = g;
        quarter.yaw = PI / 2.0;
        let ap = compute_ap(&[sb(0, quarter, 1.0)], &[(0, g)], 0.4, IouMode::Bev).unwrap().ap;
        let aph = compute_aph(&[sb(0, quarter, 1.0)], &[(0, g)], 0.4, IouMode::Bev).unwrap().ap;
        assert!((aph - 0.5 * ap).abs() < 1e-12);
    }

    #[test]
    fn tied_scores_form_one_step() {
        let g = unit(0.0, 0.0);
        let dets = [sb(0, unit(9.0, 9.0), 0.5), sb(0, g, 0.5)];
        let r = compute_ap(&dets, &[(0, g)], 0.4, IouMode::Bev).unwrap();
        assert_eq!(r.precision, vec![0.5]);
        assert_eq!(r.ap, 0.5);
    }

    fn gt(frame: usize, b: OrientedBox, speed: f64) -> GroundTruthLabel {
        GroundTruthLabel {
            frame_index: frame,
            track_id: 0,
            class: ObjectClass::Vehicle,
            cx: b.cx,
            cy: b.cy,
            cz: b.cz,
            l: b.l,
            w: b.w,
            h: b.h,
            yaw_rad: b.yaw,
            speed_mps: speed,
            num_points: Some(10),
            ego_x: 0.0,
            ego_y: 0.0,
            ego_yaw: 0.0,
        }
    }

    fn det_of(g: &GroundTruthLabel, class: ObjectClass) -> PseudoLabel {
        PseudoLabel {
            frame_index: g.frame_index,
            bbox: g.bbox(),
            class_label: class,
            score: 0.9,
            track_id: 0,
            motion_status: crate::types::MotionStatus::Static,
        }
    }

    #[test]
    fn split_partitions() {
        let gts = vec![gt(0, unit(25.0, 0.0), 1.5), gt(0, unit(40.0, 5.0), 0.0)];
        let dets: Vec<_> = gts.iter().map(|g| det_of(g, ObjectClass::Vehicle)).collect();
        let rep = split_eval(&dets, &gts, &EvalParams::default());
        let moving = rep
            .entries
            .iter()
            .find(|e| e.class == "movable" && e.motion == MotionSplit::Moving && e.range == "all")
            .unwrap();
        assert_eq!(moving.num_gt, 1);
        let near = rep
            .entries
            .iter()
            .find(|e| e.class == "movable" && e.motion == MotionSplit::All && e.range == "[0, 30)")
            .unwrap();
        assert_eq!(near.num_gt, 1);
        assert_eq!(rep.get("movable", MotionSplit::Static, "[30, 50)", Metric::ApBev), Some(1.0));
        assert_eq!(rep.get("pedestrian", MotionSplit::All, "all", Metric::ApBev), None);
    }

    #[test]
    fn background_excluded_from_movable() {
        let gts = vec![gt(0, unit(10.0, 0.0), 0.0)];
        let dets = vec![det_of(&gts[0], ObjectClass::Background)];
        let rep = split_eval(&dets, &gts, &EvalParams::default());
        assert_eq!(rep.get("movable", MotionSplit::All, "all", Metric::ApBev), Some(0.0));
    }

    #[test]
    fn crop_gates_far_objects() {
        let gts = vec![gt(0, unit(10.0, 0.0), 0.0), gt(0, unit(10.0, 30.0), 0.0)];
        let dets = vec![det_of(&gts[0], ObjectClass::Vehicle)];
        let rep = split_eval(&dets, &gts, &EvalParams::default());
        assert_eq!(rep.get("movable", MotionSplit::All, "all", Metric::ApBev), Some(1.0));
    }
}

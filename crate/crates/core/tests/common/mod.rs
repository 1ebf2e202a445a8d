//! Brute-force references and scene builders shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use lidar_pseudolabel::cluster::{AggregatedCloud, AggregatedPoint};
use lidar_pseudolabel::ephemeral::{window_frames, PPParams};
use lidar_pseudolabel::geometry::{OrientedBox, Point3};
use lidar_pseudolabel::track::{Detection, Track, TrackEntry, TrackParams};
use lidar_pseudolabel::MotionStatus;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// PP-scores of frame `t` by checking every point of every window frame.
pub fn brute_pp(frames: &[Vec<Point3>], t: usize, params: &PPParams) -> Vec<f64> {
    let window = window_frames(t, frames.len(), params.window_h);
    let r2 = params.radius_m * params.radius_m;
    frames[t]
        .iter()
        .map(|p| {
            if window.is_empty() {
                return 0.0;
            }
            let hits = window
                .iter()
                .filter(|&&j| {
                    let near = frames[j]
                        .iter()
                        .filter(|q| {
                            let d = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
                            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r2
                        })
                        .count();
                    near >= params.c_min
                })
                .count();
            hits as f64 / window.len() as f64
        })
        .collect()
}

fn d2(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    (0..5).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// Textbook O(N²) DBSCAN: cores by full neighbor lists, clusters by
/// breadth-first expansion over cores, each border point to its nearest core
/// (ties by the core's feature vector, lexicographically).
pub fn brute_dbscan(features: &[[f64; 5]], eps: f64, min_pts: usize) -> Vec<BTreeSet<usize>> {
    let n = features.len();
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| d2(&features[i], &features[j]) <= eps2).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut cluster_of = vec![usize::MAX; n];
    let mut clusters = 0;
    for s in 0..n {
        if !core[s] || cluster_of[s] != usize::MAX {
            continue;
        }
        let mut queue = vec![s];
        cluster_of[s] = clusters;
        while let Some(i) = queue.pop() {
            for &j in &neighbors[i] {
                if core[j] && cluster_of[j] == usize::MAX {
                    cluster_of[j] = clusters;
                    queue.push(j);
                }
            }
        }
        clusters += 1;
    }
    let mut out = vec![BTreeSet::new(); clusters];
    for i in 0..n {
        if core[i] {
            out[cluster_of[i]].insert(i);
            continue;
        }
        let nearest = neighbors[i].iter().copied().filter(|&j| core[j]).min_by(|&a, &b| {
            d2(&features[i], &features[a])
                .total_cmp(&d2(&features[i], &features[b]))
                .then_with(|| {
                    features[a]
                        .iter()
                        .zip(&features[b])
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
        });
        if let Some(c) = nearest {
            out[cluster_of[c]].insert(i);
        }
    }
    out
}

/// Aggregated cloud of `k` well-separated blobs over a 5-frame window plus
/// sparse clutter. Returns the cloud and the blob of each point (`None` for
/// clutter).
pub fn blob_scene(seed: u64, k: usize, per_blob: std::ops::Range<usize>) -> (AggregatedCloud, Vec<Option<usize>>) {
    let mut r = rng(seed);
    let mut centers: Vec<[f64; 2]> = Vec::new();
    while centers.len() < k {
        let c = [r.random_range(-25.0..25.0), r.random_range(-25.0..25.0)];
        if centers.iter().all(|o| (o[0] - c[0]).hypot(o[1] - c[1]) > 8.0) {
            centers.push(c);
        }
    }
    let mut points = Vec::new();
    let mut owner = Vec::new();
    for (b, c) in centers.iter().enumerate() {
        let (l, w, h) = (r.random_range(0.6..3.0), r.random_range(0.5..1.5), r.random_range(0.8..2.0));
        let pp = if r.random_bool(0.5) { 1.0 } else { 0.0 };
        for _ in 0..r.random_range(per_blob.clone()) {
            let frame = r.random_range(0..5usize);
            points.push(AggregatedPoint {
                pos: [
                    c[0] + r.random_range(-0.5..0.5) * l,
                    c[1] + r.random_range(-0.5..0.5) * w,
                    r.random_range(0.0..h),
                ],
                pp,
                dt: frame as f64 * 0.1,
                source_frame: frame,
                source_point_index: points.len(),
            });
            owner.push(Some(b));
        }
    }
    for _ in 0..60 {
        let frame = r.random_range(0..5usize);
        points.push(AggregatedPoint {
            pos: [r.random_range(-30.0..30.0), r.random_range(-30.0..30.0), r.random_range(0.0..3.0)],
            pp: r.random_range(0.0..1.0),
            dt: frame as f64 * 0.1,
            source_frame: frame,
            source_point_index: points.len(),
        });
        owner.push(None);
    }
    (
        AggregatedCloud {
            ref_frame_index: 0,
            points,
        },
        owner,
    )
}

/// Uniform BEV Monte Carlo estimate of the IoU of two boxes.
pub fn monte_carlo_bev_iou(a: &OrientedBox, b: &OrientedBox, samples: usize, seed: u64) -> f64 {
    let corners: Vec<[f64; 2]> = a.bev_corners().into_iter().chain(b.bev_corners()).collect();
    let (x0, x1) = corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c[0]), hi.max(c[0])));
    let (y0, y1) = corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c[1]), hi.max(c[1])));
    let mut r = rng(seed);
    let (ta, tb) = (BevTest::new(a), BevTest::new(b));
    let (mut both, mut either) = (0usize, 0usize);
    for _ in 0..samples {
        let p = [r.random_range(x0..x1), r.random_range(y0..y1)];
        let (ia, ib) = (ta.inside(p), tb.inside(p));
        both += (ia && ib) as usize;
        either += (ia || ib) as usize;
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

struct BevTest {
    c: [f64; 2],
    cos: f64,
    sin: f64,
    half: [f64; 2],
}

impl BevTest {
    fn new(b: &OrientedBox) -> Self {
        Self { c: [b.cx, b.cy], cos: b.yaw.cos(), sin: b.yaw.sin(), half: [0.5 * b.l, 0.5 * b.w] }
    }

    fn inside(&self, p: [f64; 2]) -> bool {
        let (dx, dy) = (p[0] - self.c[0], p[1] - self.c[1]);
        (self.cos * dx + self.sin * dy).abs() <= self.half[0] && (-self.sin * dx + self.cos * dy).abs() <= self.half[1]
    }
}

/// Random box pair with overlap more often than not.
pub fn random_box_pair(r: &mut ChaCha8Rng) -> (OrientedBox, OrientedBox) {
    let a = OrientedBox::new(
        [r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), 1.0],
        r.random_range(0.5..6.0),
        r.random_range(0.5..3.0),
        2.0,
        r.random_range(0.0..std::f64::consts::TAU),
    );
    let b = OrientedBox::new(
        [a.cx + r.random_range(-3.0..3.0), a.cy + r.random_range(-3.0..3.0), 1.0],
        r.random_range(0.5..6.0),
        r.random_range(0.5..3.0),
        2.0,
        r.random_range(0.0..std::f64::consts::TAU),
    );
    (a, b)
}

/// Points on the sensor-facing sides of a rectangle seen from the origin (an
/// L, or a single side), with noise and random heights. Returns the points
/// and the true yaw.
pub fn lshape_sample(r: &mut ChaCha8Rng) -> (Vec<Point3>, f64) {
    let yaw = r.random_range(0.0..std::f64::consts::PI);
    let (l, w) = (r.random_range(2.0..6.0), r.random_range(1.0..2.5));
    let b = OrientedBox::new([r.random_range(8.0..30.0), r.random_range(-15.0..15.0), 1.0], l, w, 2.0, yaw);
    let noise = Normal::new(0.0, 0.03).unwrap();
    // (u, v) of the side midpoint, its outward normal in local coordinates, and the half span
    let sides = [
        ([0.5 * l, 0.0], [1.0, 0.0], 0.5 * w),
        ([-0.5 * l, 0.0], [-1.0, 0.0], 0.5 * w),
        ([0.0, 0.5 * w], [0.0, 1.0], 0.5 * l),
        ([0.0, -0.5 * w], [0.0, -1.0], 0.5 * l),
    ];
    let sensor = b.to_local([0.0, 0.0, 1.0]);
    let mut pts = Vec::new();
    for (mid, n, half) in sides {
        if n[0] * (sensor[0] - mid[0]) + n[1] * (sensor[1] - mid[1]) <= 0.0 {
            continue;
        }
        for _ in 0..150 {
            let t = r.random_range(-half..half);
            let (u, v) = (mid[0] - n[1] * t, mid[1] + n[0] * t);
            let xy = b.local_to_world_xy(u, v);
            pts.push([xy[0] + noise.sample(r), xy[1] + noise.sample(r), r.random_range(0.2..1.5)]);
        }
    }
    (pts, yaw)
}

/// Constant-velocity ground-truth scenario for the tracker: `k` objects on
/// parallel lanes, `frames` frames at 10 Hz, noisy detection boxes.
pub struct TrackScenario {
    /// Per frame, `(object id, detection)`.
    pub frames: Vec<Vec<(usize, Detection)>>,
}

pub fn track_scenario(seed: u64, k: usize, frames: usize) -> TrackScenario {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let objects: Vec<([f64; 2], [f64; 2], usize)> = (0..k)
        .map(|i| {
            let lane = -27.0 + 6.0 * i as f64;
            let speed = if i % 3 == 0 { 0.0 } else { r.random_range(-1.2..1.2) };
            ([r.random_range(-20.0..20.0), lane], [speed, 0.0], r.random_range(200..2000))
        })
        .collect();
    let out = (0..frames)
        .map(|f| {
            let mut dets: Vec<(usize, Detection)> = objects
                .iter()
                .enumerate()
                .map(|(i, (p, v, n))| {
                    let x = p[0] + v[0] * f as f64 + noise.sample(&mut r);
                    let y = p[1] + v[1] * f as f64 + noise.sample(&mut r);
                    let count = (*n as f64 * r.random_range(0.9..1.1)) as usize;
                    (
                        i,
                        Detection {
                            frame_index: f,
                            bbox: OrientedBox::new([x, y, 0.8], 4.0, 1.8, 1.6, 0.0),
                            point_count: count,
                            pp_alpha: 0.0,
                            segment: i,
                            ego_position: [0.0; 3],
                        },
                    )
                })
                .collect();
            // detection order must not matter
            for i in (1..dets.len()).rev() {
                dets.swap(i, r.random_range(0..=i));
            }
            dets
        })
        .collect();
    TrackScenario { frames: out }
}

/// Greedy assignment by repeatedly taking the globally nearest feasible
/// `(track, detection)` pair, first within the strict radius and then within
/// the relaxed radius under the point-count rule.
pub fn nearest_pair_oracle(
    predicted: &[[f64; 2]],
    track_counts: &[usize],
    dets: &[([f64; 2], usize)],
    params: &TrackParams,
) -> BTreeSet<(usize, usize)> {
    let mut used_t = vec![false; predicted.len()];
    let mut used_d = vec![false; dets.len()];
    let mut out = BTreeSet::new();
    for relaxed in [false, true] {
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for t in 0..predicted.len() {
                for d in 0..dets.len() {
                    if used_t[t] || used_d[d] {
                        continue;
                    }
                    let dist = (predicted[t][0] - dets[d].0[0]).hypot(predicted[t][1] - dets[d].0[1]);
                    let feasible = if relaxed {
                        let (a, b) = (track_counts[t] as f64, dets[d].1 as f64);
                        dist <= params.relaxed_radius_m && a.max(b) > 0.0 && (a - b).abs() / a.max(b) < params.count_diff_max
                    } else {
                        dist <= params.match_radius_m
                    };
                    if feasible && best.is_none_or(|(bd, bt, bdi)| (dist, t, d) < (bd, bt, bdi)) {
                        best = Some((dist, t, d));
                    }
                }
            }
            let Some((_, t, d)) = best else { break };
            used_t[t] = true;
            used_d[d] = true;
            out.insert((t, d));
        }
    }
    out
}

/// A track whose entries sit at `centers` with the given PP percentile.
pub fn track_at(id: u64, centers: &[[f64; 2]], pp_alpha: f64, dims: [f64; 3]) -> Track {
    Track {
        id,
        entries: centers
            .iter()
            .enumerate()
            .map(|(f, c)| {
                TrackEntry::from_detection(&Detection {
                    frame_index: f,
                    bbox: OrientedBox::new([c[0], c[1], 0.5 * dims[2]], dims[0], dims[1], dims[2], 0.0),
                    point_count: 500,
                    pp_alpha,
                    segment: 0,
                    ego_position: [0.0; 3],
                })
            })
            .collect(),
        motion_status: MotionStatus::Undetermined,
        class_label: None,
        class_score: None,
        miss_count: 0,
    }
}

//! Temporal window aggregation and spatio-temporal density clustering.
//!
//! Frames `ref..ref+n` are merged in world coordinates. Points with static
//! evidence (PP-score at or above `motion_pp_threshold`) are subsampled by
//! `1/n` with a per-frame phase so that a static scene contributes roughly
//! one frame's worth of points; points with low PP-scores are all kept.
//! Clustering runs on `(x, y, z, s_pp·pp, s_t·dt)`.

use serde::{Deserialize, Serialize};

use crate::ephemeral::PPScoreMap;
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::spatial::HashGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterParams {
    pub eps_m: f64,
    pub min_pts: usize,
    pub min_cluster_size: usize,
    /// Feature scale of the PP-score, meters per unit score.
    pub s_pp: f64,
    /// Feature scale of the time offset, meters per second.
    pub s_t: f64,
    pub window_n: usize,
    pub motion_pp_threshold: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            eps_m: 0.7,
            min_pts: 15,
            min_cluster_size: 15,
            s_pp: 1.0,
            s_t: 1.0,
            window_n: 5,
            motion_pp_threshold: 0.5,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_m > 0.0 && self.eps_m.is_finite()) {
            return Err(Error::Parameter("cluster.eps_m must be positive".into()));
        }
        if self.min_pts == 0 || self.min_cluster_size == 0 {
            return Err(Error::Parameter(
                "cluster.min_pts and cluster.min_cluster_size must be ≥ 1".into(),
            ));
        }
        if self.window_n == 0 {
            return Err(Error::Parameter("cluster.window_n must be ≥ 1".into()));
        }
        if !(self.s_pp >= 0.0 && self.s_t >= 0.0) {
            return Err(Error::Parameter("cluster feature scales must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatedPoint {
    pub pos: Point3,
    pub pp: f64,
    /// Timestamp of the source frame minus the reference timestamp.
    pub dt: f64,
    pub source_frame: usize,
    pub source_point_index: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregatedCloud {
    pub ref_frame_index: usize,
    pub points: Vec<AggregatedPoint>,
}

impl AggregatedCloud {
    pub fn features(&self, params: &ClusterParams) -> Vec<[f64; 5]> {
        self.points
            .iter()
            .map(|p| feature(p.pos, p.pp, p.dt, params))
            .collect()
    }
}

#[inline]
fn feature(pos: Point3, pp: f64, dt: f64, params: &ClusterParams) -> [f64; 5] {
    [pos[0], pos[1], pos[2], params.s_pp * pp, params.s_t * dt]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: usize,
    pub ref_frame_index: usize,
    /// Indices into the aggregated cloud, ascending.
    pub members: Vec<usize>,
    pub centroid: Point3,
    pub point_count: usize,
}

/// Per-frame inputs of a window: world points, timestamps, PP-scores and
/// non-ground indices, all indexed by frame.
#[derive(Clone, Copy)]
pub struct WindowInputs<'a> {
    pub world: &'a [Vec<Point3>],
    pub timestamps: &'a [f64],
    pub pp_maps: &'a [PPScoreMap],
    pub nonground: &'a [Vec<usize>],
}

pub fn aggregate_window(
    inputs: WindowInputs<'_>,
    ref_index: usize,
    n: usize,
    motion_pp_threshold: f64,
) -> Result<AggregatedCloud> {
    if n == 0 {
        return Err(Error::Parameter("window size n must be ≥ 1".into()));
    }
    let num_frames = inputs.world.len();
    if ref_index >= num_frames {
        return Err(Error::Parameter(format!(
            "reference frame {ref_index} out of range for {num_frames} frames"
        )));
    }
    let t_ref = inputs.timestamps[ref_index];
    let end = (ref_index + n).min(num_frames);
    let mut points = Vec::new();
    for j in ref_index..end {
        let phase = (j - ref_index) % n;
        let scores = &inputs.pp_maps[j].scores;
        let mut static_seen = 0usize;
        for &i in &inputs.nonground[j] {
            let pp = scores[i];
            let keep = if pp >= motion_pp_threshold {
                let k = static_seen % n == phase;
                static_seen += 1;
                k
            } else {
                true
            };
            if keep {
                points.push(AggregatedPoint {
                    pos: inputs.world[j][i],
                    pp,
                    dt: inputs.timestamps[j] - t_ref,
                    source_frame: j,
                    source_point_index: i,
                });
            }
        }
    }
    Ok(AggregatedCloud {
        ref_frame_index: ref_index,
        points,
    })
}

/// A flat density clustering over 5-D feature vectors.
pub trait DensityClusterer {
    /// Cluster label per input; `None` for noise. Labels are dense from 0.
    fn assign(&self, features: &[[f64; 5]]) -> Vec<Option<usize>>;
}

/// DBSCAN with a deterministic border rule: core points form clusters through
/// eps-connectivity; a border point joins the cluster of its nearest core
/// (ties broken by the core's feature vector), which makes the partition
/// independent of input order.
#[derive(Debug, Clone, Copy)]
pub struct Dbscan {
    pub eps: f64,
    /// Neighborhood size for a core point, counting the point itself.
    pub min_pts: usize,
}

#[inline]
fn fdist2(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    let mut s = 0.0;
    for k in 0..5 {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

fn lex_cmp(a: &[f64; 5], b: &[f64; 5]) -> std::cmp::Ordering {
    for k in 0..5 {
        match a[k].total_cmp(&b[k]) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

impl DensityClusterer for Dbscan {
    fn assign(&self, features: &[[f64; 5]]) -> Vec<Option<usize>> {
        let n = features.len();
        if n == 0 {
            return Vec::new();
        }
        let pos: Vec<Point3> = features.iter().map(|f| [f[0], f[1], f[2]]).collect();
        let grid = HashGrid::new(&pos, self.eps);
        let eps2 = self.eps * self.eps;

        let core: Vec<bool> = features
            .iter()
            .map(|f| {
                let mut count = 0;
                grid.visit_candidates(&[f[0], f[1], f[2]], |j| {
                    if fdist2(f, &features[j]) <= eps2 {
                        count += 1;
                    }
                    count < self.min_pts
                });
                count >= self.min_pts
            })
            .collect();

        let mut sets = DisjointSet((0..n).collect());
        for i in (0..n).filter(|&i| core[i]) {
            let f = &features[i];
            grid.visit_candidates(&pos[i], |j| {
                // the root check is cheaper than the distance and skips most pairs
                if j > i && core[j] && sets.find(i) != sets.find(j) && fdist2(f, &features[j]) <= eps2 {
                    sets.union(i, j);
                }
                true
            });
        }

        let mut owner: Vec<Option<usize>> = vec![None; n];
        for i in 0..n {
            if core[i] {
                owner[i] = Some(i);
                continue;
            }
            let f = &features[i];
            let mut best: Option<(f64, usize)> = None;
            grid.visit_candidates(&pos[i], |j| {
                if core[j] {
                    let d = fdist2(f, &features[j]);
                    if d <= eps2 {
                        let better = match best {
                            None => true,
                            Some((bd, bj)) => {
                                d < bd || (d == bd && lex_cmp(&features[j], &features[bj]).is_lt())
                            }
                        };
                        if better {
                            best = Some((d, j));
                        }
                    }
                }
                true
            });
            owner[i] = best.map(|(_, j)| j);
        }

        let mut root_label = rustc_hash::FxHashMap::default();
        let mut labels = vec![None; n];
        for i in 0..n {
            if let Some(c) = owner[i] {
                let root = sets.find(c);
                let next = root_label.len();
                labels[i] = Some(*root_label.entry(root).or_insert(next));
            }
        }
        labels
    }
}

/// Groups labels into segments of at least `min_size` members.
pub fn segments_from_labels(
    agg: &AggregatedCloud,
    labels: &[Option<usize>],
    min_size: usize,
) -> Vec<Segment> {
    let num = labels.iter().flatten().map(|&l| l + 1).max().unwrap_or(0);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); num];
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            groups[*l].push(i);
        }
    }
    groups
        .into_iter()
        .filter(|g| g.len() >= min_size)
        .enumerate()
        .map(|(id, members)| {
            let mut c = [0.0; 3];
            for &m in &members {
                for k in 0..3 {
                    c[k] += agg.points[m].pos[k];
                }
            }
            let len = members.len() as f64;
            Segment {
                id,
                ref_frame_index: agg.ref_frame_index,
                centroid: [c[0] / len, c[1] / len, c[2] / len],
                point_count: members.len(),
                members,
            }
        })
        .collect()
}

pub fn cluster_segments(agg: &AggregatedCloud, params: &ClusterParams) -> Result<Vec<Segment>> {
    let dbscan = Dbscan {
        eps: params.eps_m,
        min_pts: params.min_pts,
    };
    cluster_segments_with(agg, params, &dbscan)
}

pub fn cluster_segments_with(
    agg: &AggregatedCloud,
    params: &ClusterParams,
    clusterer: &dyn DensityClusterer,
) -> Result<Vec<Segment>> {
    params.validate()?;
    if agg.points.is_empty() {
        return Ok(Vec::new());
    }
    let labels = clusterer.assign(&agg.features(params));
    Ok(segments_from_labels(agg, &labels, params.min_cluster_size))
}

/// Indices of reference-frame non-ground points belonging to each segment.
///
/// Reference points present in the aggregated cloud take their cluster label.
/// Reference points dropped by subsampling join the segment of the nearest
/// clustered aggregated point within `eps` in feature space (with `dt = 0`).
pub fn reference_members(
    agg: &AggregatedCloud,
    segments: &[Segment],
    ref_points: &[Point3],
    ref_nonground: &[usize],
    ref_pp: &[f64],
    params: &ClusterParams,
) -> Vec<Vec<usize>> {
    let ref_frame = agg.ref_frame_index;
    let mut seg_of_agg: Vec<Option<usize>> = vec![None; agg.points.len()];
    for (s, seg) in segments.iter().enumerate() {
        for &m in &seg.members {
            seg_of_agg[m] = Some(s);
        }
    }
    let mut agg_of_ref: rustc_hash::FxHashMap<usize, usize> = Default::default();
    for (a, p) in agg.points.iter().enumerate() {
        if p.source_frame == ref_frame {
            agg_of_ref.insert(p.source_point_index, a);
        }
    }
    let labeled: Vec<usize> = (0..agg.points.len()).filter(|&a| seg_of_agg[a].is_some()).collect();
    let labeled_pos: Vec<Point3> = labeled.iter().map(|&a| agg.points[a].pos).collect();
    let labeled_feat: Vec<[f64; 5]> = labeled
        .iter()
        .map(|&a| {
            let p = &agg.points[a];
            feature(p.pos, p.pp, p.dt, params)
        })
        .collect();
    let grid = HashGrid::new(&labeled_pos, params.eps_m);
    let eps2 = params.eps_m * params.eps_m;

    let mut out = vec![Vec::new(); segments.len()];
    for &i in ref_nonground {
        let seg = match agg_of_ref.get(&i) {
            Some(&a) => seg_of_agg[a],
            None => {
                let q = feature(ref_points[i], ref_pp[i], 0.0, params);
                let mut best: Option<(f64, usize)> = None;
                grid.visit_candidates(&ref_points[i], |k| {
                    let d = fdist2(&q, &labeled_feat[k]);
                    if d <= eps2 && best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, k));
                    }
                    true
                });
                best.and_then(|(_, k)| seg_of_agg[labeled[k]])
            }
        };
        if let Some(s) = seg {
            out[s].push(i);
        }
    }
    out
}

//! End-to-end orchestration: discovery (ground removal through tracking),
//! classification, refinement and export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{build_prompts, classify_views, vote_views, ClassifierBackend, MockBackend, RemoteBackend};
use crate::cluster::{aggregate_window, cluster_segments, reference_members, WindowInputs};
use crate::config::{BackendConfig, Fallback, PipelineConfig};
use crate::ephemeral::PPScorer;
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::ground::{fit_ground_plane, split_ground, GroundModel, RansacParams};
use crate::project::render_depth_views;
use crate::proposal::{fit_lshape_box, keep_segment, SegmentCloud};
use crate::refine::refine_tracks;
use crate::seqio::{load_sequence, read_jsonl, write_jsonl, write_pseudolabels, PseudoLabel, Sequence};
use crate::track::{nearest_rank_percentile, Detection, Track, Tracker};
use crate::types::{MotionStatus, ObjectClass};

pub const SEGMENTS_HEADER: &str = "# segments: reference-frame world points of each kept segment";
pub const TRACKS_HEADER: &str = "# tracks: one track per line";
pub const LABELS_FILE: &str = "pseudo_labels.jsonl";
pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub frames: usize,
    pub segments_before_filter: usize,
    pub segments_after_filter: usize,
    pub detections: usize,
    pub tracks: usize,
    pub static_tracks: usize,
    pub moving_tracks: usize,
    pub classified_entries: usize,
    pub tracks_after_refine: usize,
    pub labels: usize,
    pub classifier_backend: String,
    pub classifier_fallback: bool,
    /// Wall-clock seconds per stage.
    pub stage_seconds: BTreeMap<String, f64>,
}

impl RunReport {
    fn time(&mut self, stage: &str, start: Instant) {
        *self.stage_seconds.entry(stage.to_string()).or_default() += start.elapsed().as_secs_f64();
    }
}

/// Output of ground removal through tracking.
#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub segments: Vec<SegmentCloud>,
    pub tracks: Vec<Track>,
}

pub fn make_backend(cfg: &BackendConfig) -> Result<Box<dyn ClassifierBackend>> {
    Ok(match cfg {
        BackendConfig::Mock => Box::new(MockBackend),
        BackendConfig::Remote(r) => Box::new(RemoteBackend::new(r)?),
    })
}

/// Runs `f` on a pool with the configured worker count.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Ground removal, PP-scoring, windowed clustering, filtering, box fitting
/// and tracking.
pub fn discover(seq: &Sequence, cfg: &PipelineConfig, report: &mut RunReport) -> Result<Discovery> {
    cfg.validate()?;
    seq.validate()?;
    report.frames = seq.len();
    let world = seq.world_points();
    let timestamps = seq.timestamps();

    let t = Instant::now();
    let grounds: Vec<(GroundModel, Vec<usize>)> = (0..seq.len())
        .into_par_iter()
        .map(|f| {
            let params = RansacParams {
                rng_seed: cfg.ground.rng_seed.wrapping_add(f as u64),
                ..cfg.ground.clone()
            };
            let model = fit_ground_plane(&world[f], &params).map_err(|e| e.in_stage("ground", Some(f)))?;
            let (_, rest) = split_ground(&world[f], &model, cfg.ground.tol_m);
            Ok((model, rest))
        })
        .collect::<Result<_>>()?;
    report.time("ground", t);

    let t = Instant::now();
    let pp_maps = PPScorer::new(&world, &cfg.pp)
        .and_then(|s| s.score_all())
        .map_err(|e| e.in_stage("pp", None))?;
    report.time("pp", t);

    let t = Instant::now();
    let nonground: Vec<Vec<usize>> = grounds.iter().map(|(_, r)| r.clone()).collect();
    let inputs = WindowInputs {
        world: &world,
        timestamps: &timestamps,
        pp_maps: &pp_maps,
        nonground: &nonground,
    };
    type FrameOut = (usize, Vec<SegmentCloud>, Vec<Detection>);
    let per_frame: Vec<FrameOut> = (0..seq.len())
        .into_par_iter()
        .map(|f| -> Result<FrameOut> {
            let stage = |e: Error| e.in_stage("cluster", Some(f));
            let agg = aggregate_window(inputs, f, cfg.cluster.window_n, cfg.cluster.motion_pp_threshold).map_err(stage)?;
            let segments = cluster_segments(&agg, &cfg.cluster).map_err(stage)?;
            let members = reference_members(&agg, &segments, &world[f], &nonground[f], &pp_maps[f].scores, &cfg.cluster);
            let ground = &grounds[f].0;
            let mut kept = Vec::new();
            let mut dets = Vec::new();
            for (seg, idx) in segments.iter().zip(members) {
                let points: Vec<Point3> = idx.iter().map(|&i| world[f][i]).collect();
                if !keep_segment(&points, ground, &cfg.proposal) {
                    continue;
                }
                let Ok(fit) = fit_lshape_box(&points) else {
                    continue;
                };
                let pp: Vec<f64> = idx.iter().map(|&i| pp_maps[f].scores[i]).collect();
                dets.push(Detection {
                    frame_index: f,
                    bbox: fit.bbox,
                    point_count: points.len(),
                    pp_alpha: nearest_rank_percentile(&pp, cfg.track.alpha),
                    segment: seg.id,
                    ego_position: seq.frames[f].sensor_position(),
                });
                kept.push(SegmentCloud {
                    segment_id: seg.id,
                    frame_index: f,
                    points,
                    pp,
                });
            }
            Ok((segments.len(), kept, dets))
        })
        .collect::<Result<_>>()?;
    report.time("cluster", t);

    let t = Instant::now();
    let mut tracker = Tracker::new(cfg.track.clone());
    let mut segments_all = Vec::new();
    for (f, (before, kept, dets)) in per_frame.into_iter().enumerate() {
        report.segments_before_filter += before;
        report.segments_after_filter += kept.len();
        report.detections += dets.len();
        tracker.step(f, &dets).map_err(|e| e.in_stage("track", Some(f)))?;
        segments_all.extend(kept);
    }
    let tracks = tracker.finish();
    report.tracks = tracks.len();
    report.static_tracks = tracks.iter().filter(|t| t.motion_status == MotionStatus::Static).count();
    report.moving_tracks = tracks.iter().filter(|t| t.motion_status == MotionStatus::Moving).count();
    report.time("track", t);
    Ok(Discovery {
        segments: segments_all,
        tracks,
    })
}

/// Renders and classifies every track entry, storing the per-frame vote.
///
/// A backend failure either aborts or, with the size-prior fallback, clears
/// all votes and flags the report.
pub fn classify_tracks(
    tracks: &[Track],
    segments: &[SegmentCloud],
    cfg: &PipelineConfig,
    backend: &dyn ClassifierBackend,
    report: &mut RunReport,
) -> Result<Vec<Track>> {
    let t = Instant::now();
    let prompts = build_prompts(&cfg.classify.table(), &cfg.classify.template)?;
    let by_key: BTreeMap<(usize, usize), &SegmentCloud> =
        segments.iter().map(|s| ((s.frame_index, s.segment_id), s)).collect();
    let debug_dir = cfg.debug_depth_dir.as_ref().map(PathBuf::from);
    if let Some(d) = &debug_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    report.classifier_backend = backend.name().to_string();

    let jobs: Vec<(usize, usize)> = tracks
        .iter()
        .enumerate()
        .flat_map(|(ti, t)| (0..t.entries.len()).map(move |ei| (ti, ei)))
        .collect();
    let votes: Result<Vec<Option<crate::track::ClassVote>>> = jobs
        .par_iter()
        .map(|&(ti, ei)| {
            let track = &tracks[ti];
            let e = &track.entries[ei];
            let Some(seg) = by_key.get(&(e.frame_index, e.segment)) else {
                return Ok(None);
            };
            let stage = |err: Error| err.in_stage("classify", Some(e.frame_index));
            let maps = render_depth_views(&seg.points, &e.detection_box, e.ego_position, &cfg.project).map_err(stage)?;
            if let Some(d) = &debug_dir {
                for (v, m) in maps.iter().enumerate() {
                    let name = format!("f{:06}_t{:06}_v{v}.png", e.frame_index, track.id);
                    m.write_png(d.join(name)).map_err(stage)?;
                }
            }
            let scores = classify_views(&maps, &prompts, backend).map_err(stage)?;
            vote_views(&scores, &prompts).map(Some).map_err(stage)
        })
        .collect();
    let mut out = tracks.to_vec();
    match votes {
        Ok(votes) => {
            for (&(ti, ei), v) in jobs.iter().zip(votes) {
                out[ti].entries[ei].vote = v;
            }
        }
        Err(e) if cfg.classify.fallback == Fallback::SizePrior && is_backend_error(&e) => {
            report.classifier_fallback = true;
            for t in &mut out {
                for e in &mut t.entries {
                    e.vote = None;
                }
            }
        }
        Err(e) => return Err(e),
    }
    report.classified_entries = out.iter().flat_map(|t| &t.entries).filter(|e| e.vote.is_some()).count();
    report.time("classify", t);
    Ok(out)
}

fn is_backend_error(e: &Error) -> bool {
    match e {
        Error::Backend { .. } => true,
        Error::Stage { inner, .. } => is_backend_error(inner),
        _ => false,
    }
}

pub fn refine(tracks: &[Track], cfg: &PipelineConfig, report: &mut RunReport) -> Result<Vec<Track>> {
    let t = Instant::now();
    let out = refine_tracks(tracks, &cfg.refine, cfg.stages).map_err(|e| e.in_stage("refine", None))?;
    report.tracks_after_refine = out.len();
    report.time("refine", t);
    Ok(out)
}

/// One label per track entry, ordered by frame then track id.
pub fn export_labels(tracks: &[Track]) -> Vec<PseudoLabel> {
    let mut labels: Vec<PseudoLabel> = tracks
        .iter()
        .flat_map(|t| {
            t.entries.iter().map(move |e| {
                let vote = e.vote.unwrap_or(crate::track::ClassVote {
                    class: ObjectClass::Background,
                    score: 0.0,
                });
                PseudoLabel {
                    frame_index: e.frame_index,
                    bbox: e.bbox,
                    class_label: vote.class,
                    score: vote.score.clamp(0.0, 1.0),
                    track_id: t.id,
                    motion_status: t.motion_status,
                }
            })
        })
        .collect();
    labels.sort_by(|a, b| a.frame_index.cmp(&b.frame_index).then(a.track_id.cmp(&b.track_id)));
    labels
}

/// All stages in memory.
pub fn run_on_sequence(
    seq: &Sequence,
    cfg: &PipelineConfig,
    backend: &dyn ClassifierBackend,
) -> Result<(Vec<PseudoLabel>, RunReport)> {
    with_workers(cfg.workers, || {
        let mut report = RunReport::default();
        let d = discover(seq, cfg, &mut report)?;
        let classified = classify_tracks(&d.tracks, &d.segments, cfg, backend, &mut report)?;
        let refined = refine(&classified, cfg, &mut report)?;
        let t = Instant::now();
        let labels = export_labels(&refined);
        report.labels = labels.len();
        report.time("export", t);
        Ok((labels, report))
    })?
}

/// Loads a sequence, runs every stage and writes the labels and report into
/// `out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig, manifest: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<RunReport> {
    let out_dir = out_dir.as_ref();
    let seq = load_sequence(manifest)?;
    let backend = make_backend(&cfg.classify.backend)?;
    let (labels, report) = run_on_sequence(&seq, cfg, backend.as_ref())?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_pseudolabels(&labels, out_dir.join(LABELS_FILE))?;
    write_report(&report, out_dir.join(REPORT_FILE))?;
    Ok(report)
}

pub fn write_report(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_discovery(d: &Discovery, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join(SEGMENTS_FILE), SEGMENTS_HEADER, &d.segments)?;
    write_tracks(&d.tracks, dir.join(TRACKS_FILE))
}

pub fn read_segments(path: impl AsRef<Path>) -> Result<Vec<SegmentCloud>> {
    read_jsonl(path.as_ref())
}

pub fn write_tracks(tracks: &[Track], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(path.as_ref(), TRACKS_HEADER, tracks)
}

pub fn read_tracks(path: impl AsRef<Path>) -> Result<Vec<Track>> {
    read_jsonl(path.as_ref())
}

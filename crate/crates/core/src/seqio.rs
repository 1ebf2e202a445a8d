//! Sequence ingest and pseudo-label export.
//!
//! A sequence is described by a JSON manifest:
//!
//! ```json
//! {"frequency_hz": 10.0,
//!  "frames": [{"index": 0, "timestamp_s": 0.0,
//!              "pose_rotation": [1,0,0, 0,1,0, 0,0,1],
//!              "pose_translation": [0,0,0],
//!              "points_file": "frame_000000.bin"}]}
//! ```
//!
//! Point files are little-endian and columnar: a 16-byte header (`b"LPCF"`,
//! `u32` version, `u64` point count) followed by the x block, y block and z
//! block of `f32` values. Further channel blocks (intensity, elongation) may
//! follow and are ignored.
//!
//! Labels are JSON-lines, one object per line, after a single `#` header line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Point3, Pose};
use crate::types::{MotionStatus, ObjectClass};

pub const POINTS_MAGIC: [u8; 4] = *b"LPCF";
pub const POINTS_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const ROTATION_TOL: f64 = 1e-6;

pub const PSEUDOLABEL_HEADER: &str =
    "# pseudo-labels v1: frame_index track_id class score motion cx cy cz l w h yaw_rad";
pub const GROUND_TRUTH_HEADER: &str =
    "# ground-truth v1: frame_index track_id class cx cy cz l w h yaw_rad speed_mps num_points ego_x ego_y ego_yaw";

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudFrame {
    pub frame_index: usize,
    pub timestamp_s: f64,
    /// Sensor-frame coordinates.
    pub points: Vec<Point3>,
    /// Sensor to world.
    pub pose: Pose,
}

impl PointCloudFrame {
    pub fn sensor_position(&self) -> Point3 {
        self.pose.translation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frames: Vec<PointCloudFrame>,
    pub frequency_hz: f64,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return Err(Error::Validation(format!(
                "frequency_hz must be positive, got {}",
                self.frequency_hz
            )));
        }
        for (i, frame) in self.frames.iter().enumerate() {
            if frame.frame_index != i {
                return Err(Error::Validation(format!(
                    "frame indices must be contiguous from 0: position {i} has index {}",
                    frame.frame_index
                )));
            }
            if !frame.pose.is_valid(ROTATION_TOL) {
                return Err(Error::Validation(format!(
                    "frame {i}: pose rotation is not orthonormal with determinant +1"
                )));
            }
            if i > 0 && frame.timestamp_s <= self.frames[i - 1].timestamp_s {
                return Err(Error::Validation(format!(
                    "frame {i}: timestamp {} does not increase over previous {}",
                    frame.timestamp_s,
                    self.frames[i - 1].timestamp_s
                )));
            }
        }
        Ok(())
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp_s).collect()
    }

    pub fn world_points(&self) -> Vec<Vec<Point3>> {
        self.frames.iter().map(transform_to_world).collect()
    }
}

/// Applies the frame pose to every point.
pub fn transform_to_world(frame: &PointCloudFrame) -> Vec<Point3> {
    frame.points.iter().map(|&p| frame.pose.apply(p)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFrame {
    index: usize,
    timestamp_s: f64,
    pose_rotation: Vec<f64>,
    pose_translation: Vec<f64>,
    points_file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    frequency_hz: f64,
    frames: Vec<ManifestFrame>,
}

pub fn load_sequence(manifest_path: impl AsRef<Path>) -> Result<Sequence> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for mf in &manifest.frames {
        let pose = Pose::from_row_major(&mf.pose_rotation, &mf.pose_translation)
            .map_err(|e| Error::Validation(format!("frame {}: {e}", mf.index)))?;
        let points = read_points_file(base.join(&mf.points_file))?;
        frames.push(PointCloudFrame {
            frame_index: mf.index,
            timestamp_s: mf.timestamp_s,
            points,
            pose,
        });
    }
    let seq = Sequence {
        frames,
        frequency_hz: manifest.frequency_hz,
    };
    seq.validate()?;
    Ok(seq)
}

/// Writes `manifest.json` plus one point file per frame into `dir`.
pub fn write_sequence(seq: &Sequence, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::with_capacity(seq.frames.len());
    for frame in &seq.frames {
        let name = format!("frame_{:06}.bin", frame.frame_index);
        write_points_file(dir.join(&name), &frame.points)?;
        frames.push(ManifestFrame {
            index: frame.frame_index,
            timestamp_s: frame.timestamp_s,
            pose_rotation: frame.pose.rotation_row_major().to_vec(),
            pose_translation: frame.pose.translation.to_vec(),
            points_file: name,
        });
    }
    let manifest = Manifest {
        frequency_hz: seq.frequency_hz,
        frames,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_points_file(path: impl AsRef<Path>) -> Result<Vec<Point3>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_points(&bytes).map_err(|msg| Error::Parse {
        path: path.to_path_buf(),
        msg,
    })
}

pub fn write_points_file(path: impl AsRef<Path>, points: &[Point3]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_points(points)).map_err(|e| Error::io(path, e))
}

pub fn encode_points(points: &[Point3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + points.len() * 12);
    out.extend_from_slice(&POINTS_MAGIC);
    out.extend_from_slice(&POINTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(points.len() as u64).to_le_bytes());
    for axis in 0..3 {
        for p in points {
            out.extend_from_slice(&(p[axis] as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_points(bytes: &[u8]) -> std::result::Result<Vec<Point3>, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("file too short for header ({} bytes)", bytes.len()));
    }
    if bytes[0..4] != POINTS_MAGIC {
        return Err("bad magic".into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != POINTS_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    let block = count
        .checked_mul(4)
        .ok_or_else(|| "point count overflows".to_string())?;
    if count > 0 && (!body.len().is_multiple_of(block) || body.len() / block < 3) {
        return Err(format!(
            "body of {} bytes does not hold at least 3 channels of {count} points",
            body.len()
        ));
    }
    let read = |channel: usize, i: usize| {
        let off = channel * block + 4 * i;
        f32::from_le_bytes(body[off..off + 4].try_into().unwrap()) as f64
    };
    Ok((0..count)
        .map(|i| [read(0, i), read(1, i), read(2, i)])
        .collect())
}

/// One exported pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel {
    pub frame_index: usize,
    pub bbox: OrientedBox,
    pub class_label: ObjectClass,
    pub score: f64,
    pub track_id: u64,
    pub motion_status: MotionStatus,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PseudoLabelRecord {
    frame_index: usize,
    track_id: u64,
    class: ObjectClass,
    score: f64,
    motion: MotionStatus,
    cx: f64,
    cy: f64,
    cz: f64,
    l: f64,
    w: f64,
    h: f64,
    yaw_rad: f64,
}

impl From<&PseudoLabel> for PseudoLabelRecord {
    fn from(p: &PseudoLabel) -> Self {
        PseudoLabelRecord {
            frame_index: p.frame_index,
            track_id: p.track_id,
            class: p.class_label,
            score: p.score,
            motion: p.motion_status,
            cx: p.bbox.cx,
            cy: p.bbox.cy,
            cz: p.bbox.cz,
            l: p.bbox.l,
            w: p.bbox.w,
            h: p.bbox.h,
            yaw_rad: p.bbox.yaw,
        }
    }
}

impl PseudoLabelRecord {
    fn into_label(self) -> std::result::Result<PseudoLabel, String> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        let bbox = OrientedBox {
            cx: self.cx,
            cy: self.cy,
            cz: self.cz,
            l: self.l,
            w: self.w,
            h: self.h,
            yaw: self.yaw_rad,
        };
        if !bbox.has_positive_dims() {
            return Err("box dims must be strictly positive".into());
        }
        Ok(PseudoLabel {
            frame_index: self.frame_index,
            bbox,
            class_label: self.class,
            score: self.score,
            track_id: self.track_id,
            motion_status: self.motion,
        })
    }
}

pub fn write_pseudolabels(labels: &[PseudoLabel], path: impl AsRef<Path>) -> Result<()> {
    let records: Vec<PseudoLabelRecord> = labels.iter().map(PseudoLabelRecord::from).collect();
    write_jsonl(path.as_ref(), PSEUDOLABEL_HEADER, &records)
}

pub fn read_pseudolabels(path: impl AsRef<Path>) -> Result<Vec<PseudoLabel>> {
    let path = path.as_ref();
    read_jsonl::<PseudoLabelRecord>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.into_label().map_err(|msg| Error::Parse {
                path: path.to_path_buf(),
                msg: format!("record {i}: {msg}"),
            })
        })
        .collect()
}

/// Ground-truth box with the fields evaluation needs beyond a pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthLabel {
    pub frame_index: usize,
    pub track_id: u64,
    pub class: ObjectClass,
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw_rad: f64,
    pub speed_mps: f64,
    /// Sensor returns inside the box; `None` when the source does not provide it.
    #[serde(default)]
    pub num_points: Option<usize>,
    #[serde(default)]
    pub ego_x: f64,
    #[serde(default)]
    pub ego_y: f64,
    #[serde(default)]
    pub ego_yaw: f64,
}

impl GroundTruthLabel {
    pub fn bbox(&self) -> OrientedBox {
        OrientedBox {
            cx: self.cx,
            cy: self.cy,
            cz: self.cz,
            l: self.l,
            w: self.w,
            h: self.h,
            yaw: self.yaw_rad,
        }
    }
}

pub fn write_ground_truth(labels: &[GroundTruthLabel], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(path.as_ref(), GROUND_TRUTH_HEADER, labels)
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthLabel>> {
    read_jsonl(path.as_ref())
}

/// Writes `header` followed by one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, header: &str, records: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let res = (|| -> std::io::Result<()> {
        writeln!(out, "{header}")?;
        for r in records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Reads JSON-lines, skipping blank lines and `#` comments.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let rec = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: format!("line {}: {e}", lineno + 1),
        })?;
        out.push(rec);
    }
    Ok(out)
}

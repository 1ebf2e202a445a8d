//! Synthetic 2.5D LiDAR sequences with ground truth.
//!
//! Objects are made of planar rectangles, vertical cylinders and discs.
//! Only surface patches facing the sensor are sampled, with an expected
//! density that falls off with the squared range and a keep probability equal
//! to the cosine of the incidence angle. Rays blocked by another object's
//! bounding box are dropped. The ground is a fixed world grid around the
//! sensor.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, norm, sub, OrientedBox, Point3, Pose};
use crate::seqio::{GroundTruthLabel, PointCloudFrame, Sequence};
use crate::types::ObjectClass;

/// Body radius of a pedestrian relative to half its box footprint.
const PEDESTRIAN_BODY_FRACTION: f64 = 0.75;
/// Rider radius relative to the cyclist box width.
const RIDER_RADIUS_FRACTION: f64 = 0.3;
/// Bike frame thickness and its share of the cyclist height.
const BIKE_WIDTH_M: f64 = 0.15;
const BIKE_HEIGHT_FRACTION: f64 = 0.55;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityModel {
    /// Expected points per m² of surface facing the sensor at 1 m range.
    pub k_per_m2: f64,
    /// Density ceiling at short range.
    pub max_per_m2: f64,
}

impl Default for DensityModel {
    fn default() -> Self {
        DensityModel {
            k_per_m2: 30_000.0,
            max_per_m2: 1_000.0,
        }
    }
}

impl DensityModel {
    pub fn at_range(&self, r: f64) -> f64 {
        (self.k_per_m2 / (r * r).max(1e-12)).min(self.max_per_m2)
    }
}

/// Ego pose at a given frame; poses between waypoints are interpolated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoWaypoint {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// An object moving at constant velocity from its pose at frame 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub class: ObjectClass,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    #[serde(default)]
    pub vx: f64,
    #[serde(default)]
    pub vy: f64,
}

impl ObjectSpec {
    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn box_at(&self, t: f64) -> OrientedBox {
        OrientedBox::new([self.x + self.vx * t, self.y + self.vy * t, 0.5 * self.h], self.l, self.w, self.h, self.yaw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub num_frames: usize,
    #[serde(default = "default_frequency")]
    pub frequency_hz: f64,
    pub seed: u64,
    #[serde(default = "default_sensor_height")]
    pub sensor_height_m: f64,
    pub ego: Vec<EgoWaypoint>,
    pub objects: Vec<ObjectSpec>,
    #[serde(default = "default_noise")]
    pub noise_sigma_m: f64,
    #[serde(default)]
    pub density: DensityModel,
    #[serde(default = "default_ground_spacing")]
    pub ground_spacing_m: f64,
    #[serde(default = "default_ground_radius")]
    pub ground_radius_m: f64,
    /// Probability of discarding each generated point.
    #[serde(default)]
    pub dropout: f64,
}

fn default_frequency() -> f64 {
    10.0
}
fn default_sensor_height() -> f64 {
    1.8
}
fn default_noise() -> f64 {
    0.02
}
fn default_ground_spacing() -> f64 {
    0.5
}
fn default_ground_radius() -> f64 {
    50.0
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.num_frames == 0 {
            return bad("scene needs at least one frame".into());
        }
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return bad("frequency_hz must be positive".into());
        }
        if self.ego.is_empty() {
            return bad("ego trajectory needs at least one waypoint".into());
        }
        if self.ego.windows(2).any(|w| w[0].frame >= w[1].frame) {
            return bad("ego waypoints must have strictly increasing frames".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.l > 0.0 && o.w > 0.0 && o.h > 0.0) {
                return bad(format!("object {i}: dims must be positive"));
            }
            if ![o.x, o.y, o.yaw, o.vx, o.vy].iter().all(|v| v.is_finite()) {
                return bad(format!("object {i}: pose and velocity must be finite"));
            }
        }
        if !(self.noise_sigma_m >= 0.0 && self.noise_sigma_m.is_finite()) {
            return bad("noise_sigma_m must be ≥ 0".into());
        }
        if !(self.density.k_per_m2 > 0.0 && self.density.max_per_m2 > 0.0) {
            return bad("density parameters must be positive".into());
        }
        if !(self.ground_spacing_m > 0.0) || !(self.ground_radius_m >= 0.0) {
            return bad("ground_spacing_m must be positive and ground_radius_m ≥ 0".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        if !(self.sensor_height_m > 0.0) {
            return bad("sensor_height_m must be positive".into());
        }
        Ok(())
    }

    /// Ego `(x, y, yaw)` at `frame`, clamped to the first and last waypoint.
    pub fn ego_at(&self, frame: usize) -> (f64, f64, f64) {
        let first = self.ego[0];
        if frame <= first.frame {
            return (first.x, first.y, first.yaw);
        }
        for w in self.ego.windows(2) {
            if frame <= w[1].frame {
                let s = (frame - w[0].frame) as f64 / (w[1].frame - w[0].frame) as f64;
                let dyaw = (w[1].yaw - w[0].yaw + PI).rem_euclid(2.0 * PI) - PI;
                return (
                    w[0].x + s * (w[1].x - w[0].x),
                    w[0].y + s * (w[1].y - w[0].y),
                    w[0].yaw + s * dyaw,
                );
            }
        }
        let last = self.ego[self.ego.len() - 1];
        (last.x, last.y, last.yaw)
    }

    pub fn pose_at(&self, frame: usize) -> Pose {
        let (x, y, yaw) = self.ego_at(frame);
        Pose::from_yaw(yaw, [x, y, self.sensor_height_m])
    }
}

/// Generated sequence plus per-point provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub sequence: Sequence,
    pub ground_truth: Vec<GroundTruthLabel>,
    /// Object index of each point per frame; `None` for ground.
    pub point_objects: Vec<Vec<Option<usize>>>,
    /// Outward surface normal (world frame) of each point before noise.
    pub point_normals: Vec<Vec<Point3>>,
}

enum Surface {
    /// Center, two half-extent vectors and the outward normal.
    Rect { c: Point3, a: Point3, b: Point3, n: Point3 },
    Cylinder { c: [f64; 2], z0: f64, z1: f64, r: f64 },
    /// Upward-facing disc.
    Disc { c: Point3, r: f64 },
}

impl Surface {
    fn area(&self) -> f64 {
        match self {
            Surface::Rect { a, b, .. } => 4.0 * norm(*a) * norm(*b),
            Surface::Cylinder { z0, z1, r, .. } => 2.0 * PI * r * (z1 - z0),
            Surface::Disc { r, .. } => PI * r * r,
        }
    }

    fn center(&self) -> Point3 {
        match self {
            Surface::Rect { c, .. } | Surface::Disc { c, .. } => *c,
            Surface::Cylinder { c, z0, z1, .. } => [c[0], c[1], 0.5 * (z0 + z1)],
        }
    }

    /// A uniform sample and its outward normal.
    fn sample(&self, rng: &mut ChaCha8Rng) -> (Point3, Point3) {
        match self {
            Surface::Rect { c, a, b, n } => {
                let (u, v): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                ([c[0] + u * a[0] + v * b[0], c[1] + u * a[1] + v * b[1], c[2] + u * a[2] + v * b[2]], *n)
            }
            Surface::Cylinder { c, z0, z1, r } => {
                let phi: f64 = rng.random_range(0.0..2.0 * PI);
                let z: f64 = rng.random_range(*z0..*z1);
                let (s, co) = phi.sin_cos();
                ([c[0] + r * co, c[1] + r * s, z], [co, s, 0.0])
            }
            Surface::Disc { c, r } => {
                let rad = r * rng.random::<f64>().sqrt();
                let phi: f64 = rng.random_range(0.0..2.0 * PI);
                let (s, co) = phi.sin_cos();
                ([c[0] + rad * co, c[1] + rad * s, c[2]], [0.0, 0.0, 1.0])
            }
        }
    }
}

/// Side faces and top of a box; the bottom rests on the ground and is never seen.
fn box_faces(b: &OrientedBox, out: &mut Vec<Surface>) {
    let (e1, e2) = b.axes();
    let (hl, hw, hh) = (0.5 * b.l, 0.5 * b.w, 0.5 * b.h);
    let ex = [e1[0], e1[1], 0.0];
    let ey = [e2[0], e2[1], 0.0];
    let up = [0.0, 0.0, 1.0];
    let c = b.center();
    let scale = |v: Point3, s: f64| [v[0] * s, v[1] * s, v[2] * s];
    let at = |v: Point3, s: f64| [c[0] + v[0] * s, c[1] + v[1] * s, c[2] + v[2] * s];
    for (n, d, a, bb) in [
        (ex, hl, scale(ey, hw), scale(up, hh)),
        (scale(ex, -1.0), hl, scale(ey, hw), scale(up, hh)),
        (ey, hw, scale(ex, hl), scale(up, hh)),
        (scale(ey, -1.0), hw, scale(ex, hl), scale(up, hh)),
        (up, hh, scale(ex, hl), scale(ey, hw)),
    ] {
        out.push(Surface::Rect { c: at(n, d), a, b: bb, n });
    }
}

fn object_surfaces(o: &ObjectSpec, b: &OrientedBox) -> Vec<Surface> {
    let mut s = Vec::new();
    match o.class {
        ObjectClass::Pedestrian => {
            let r = PEDESTRIAN_BODY_FRACTION * 0.5 * o.l.min(o.w);
            s.push(Surface::Cylinder { c: [b.cx, b.cy], z0: 0.0, z1: o.h, r });
            s.push(Surface::Disc { c: [b.cx, b.cy, o.h], r });
        }
        ObjectClass::Cyclist => {
            let bike_h = BIKE_HEIGHT_FRACTION * o.h;
            let bike = OrientedBox::new([b.cx, b.cy, 0.5 * bike_h], o.l, BIKE_WIDTH_M.min(o.w), bike_h, o.yaw);
            box_faces(&bike, &mut s);
            let r = RIDER_RADIUS_FRACTION * o.w;
            s.push(Surface::Cylinder { c: [b.cx, b.cy], z0: bike_h, z1: o.h, r });
            s.push(Surface::Disc { c: [b.cx, b.cy, o.h], r });
        }
        ObjectClass::Vehicle | ObjectClass::Background => box_faces(b, &mut s),
    }
    s
}

/// Whether the segment `from → to` passes through `b` before reaching `to`.
fn ray_blocked(from: Point3, to: Point3, b: &OrientedBox) -> bool {
    let p = b.to_local(from);
    let q = b.to_local(to);
    let half = [0.5 * b.l, 0.5 * b.w, 0.5 * b.h];
    let (mut t0, mut t1): (f64, f64) = (0.0, 1.0 - 1e-6);
    for k in 0..3 {
        let d = q[k] - p[k];
        if d.abs() < 1e-15 {
            if p[k].abs() > half[k] {
                return false;
            }
            continue;
        }
        let (mut a, mut c) = ((-half[k] - p[k]) / d, (half[k] - p[k]) / d);
        if a > c {
            std::mem::swap(&mut a, &mut c);
        }
        t0 = t0.max(a);
        t1 = t1.min(c);
        if t0 > t1 {
            return false;
        }
    }
    true
}

struct RawPoint {
    world: Point3,
    normal: Point3,
    object: Option<usize>,
}

pub fn generate_scene(spec: &SceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    let dt = 1.0 / spec.frequency_hz;
    let frames: Vec<(PointCloudFrame, Vec<Option<usize>>, Vec<Point3>, Vec<GroundTruthLabel>)> = (0..spec
        .num_frames)
        .into_par_iter()
        .map(|f| generate_frame(spec, f, f as f64 * dt))
        .collect();
    let mut sequence = Sequence {
        frames: Vec::with_capacity(frames.len()),
        frequency_hz: spec.frequency_hz,
    };
    let mut ground_truth = Vec::new();
    let mut point_objects = Vec::new();
    let mut point_normals = Vec::new();
    for (frame, objs, normals, gt) in frames {
        sequence.frames.push(frame);
        point_objects.push(objs);
        point_normals.push(normals);
        ground_truth.extend(gt);
    }
    Ok(SynthScene {
        sequence,
        ground_truth,
        point_objects,
        point_normals,
    })
}

fn generate_frame(
    spec: &SceneSpec,
    frame: usize,
    t: f64,
) -> (PointCloudFrame, Vec<Option<usize>>, Vec<Point3>, Vec<GroundTruthLabel>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(frame as u64);
    let pose = spec.pose_at(frame);
    let sensor = pose.translation;
    let boxes: Vec<OrientedBox> = spec.objects.iter().map(|o| o.box_at(t)).collect();
    let mut raw: Vec<RawPoint> = Vec::new();

    // ground grid in world coordinates
    let r = spec.ground_radius_m;
    let g = spec.ground_spacing_m;
    let (i0, i1) = (((sensor[0] - r) / g).ceil() as i64, ((sensor[0] + r) / g).floor() as i64);
    let (j0, j1) = (((sensor[1] - r) / g).ceil() as i64, ((sensor[1] + r) / g).floor() as i64);
    for i in i0..=i1 {
        for j in j0..=j1 {
            let (x, y) = (i as f64 * g, j as f64 * g);
            if (x - sensor[0]).hypot(y - sensor[1]) <= r {
                raw.push(RawPoint {
                    world: [x, y, 0.0],
                    normal: [0.0, 0.0, 1.0],
                    object: None,
                });
            }
        }
    }

    for (k, (o, b)) in spec.objects.iter().zip(&boxes).enumerate() {
        for surf in object_surfaces(o, b) {
            let range = norm(sub(surf.center(), sensor));
            let lambda = spec.density.at_range(range) * surf.area();
            if lambda <= 0.0 {
                continue;
            }
            let count = Poisson::new(lambda).map(|d| d.sample(&mut rng) as usize).unwrap_or(0);
            for _ in 0..count {
                let (p, n) = surf.sample(&mut rng);
                let to_sensor = sub(sensor, p);
                if dot(n, to_sensor) > 0.0 {
                    raw.push(RawPoint {
                        world: p,
                        normal: n,
                        object: Some(k),
                    });
                }
            }
        }
    }

    let noise = Normal::new(0.0, spec.noise_sigma_m.max(0.0)).expect("valid sigma");
    let mut points = Vec::with_capacity(raw.len());
    let mut objects = Vec::with_capacity(raw.len());
    let mut normals = Vec::with_capacity(raw.len());
    let mut counts = vec![0usize; spec.objects.len()];
    for p in raw {
        let occluded = boxes
            .iter()
            .enumerate()
            .any(|(k, b)| Some(k) != p.object && ray_blocked(sensor, p.world, b));
        // draws happen for every point so dropout does not shift the noise stream
        let drop: f64 = rng.random();
        let n: [f64; 3] = [noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)];
        if occluded || drop < spec.dropout {
            continue;
        }
        let w = [p.world[0] + n[0], p.world[1] + n[1], p.world[2] + n[2]];
        points.push(pose.apply_inverse(w));
        objects.push(p.object);
        normals.push(p.normal);
        if let Some(k) = p.object {
            counts[k] += 1;
        }
    }

    let (ex, ey, eyaw) = spec.ego_at(frame);
    let gt = spec
        .objects
        .iter()
        .zip(&boxes)
        .enumerate()
        .map(|(k, (o, b))| GroundTruthLabel {
            frame_index: frame,
            track_id: k as u64,
            class: o.class,
            cx: b.cx,
            cy: b.cy,
            cz: b.cz,
            l: b.l,
            w: b.w,
            h: b.h,
            yaw_rad: b.yaw,
            speed_mps: o.speed(),
            num_points: Some(counts[k]),
            ego_x: ex,
            ego_y: ey,
            ego_yaw: eyaw,
        })
        .collect();
    let frame_record = PointCloudFrame {
        frame_index: frame,
        timestamp_s: t,
        points,
        pose,
    };
    (frame_record, objects, normals, gt)
}

fn vehicle(x: f64, y: f64, yaw: f64, vx: f64, vy: f64) -> ObjectSpec {
    ObjectSpec {
        class: ObjectClass::Vehicle,
        l: 4.5,
        w: 1.9,
        h: 1.6,
        x,
        y,
        yaw,
        vx,
        vy,
    }
}

fn pedestrian(x: f64, y: f64, vx: f64, vy: f64) -> ObjectSpec {
    ObjectSpec {
        class: ObjectClass::Pedestrian,
        l: 0.8,
        w: 0.8,
        h: 1.75,
        x,
        y,
        yaw: vy.atan2(vx),
        vx,
        vy,
    }
}

fn cyclist(x: f64, y: f64, vx: f64, vy: f64) -> ObjectSpec {
    ObjectSpec {
        class: ObjectClass::Cyclist,
        l: 1.8,
        w: 0.8,
        h: 1.8,
        x,
        y,
        yaw: vy.atan2(vx),
        vx,
        vy,
    }
}

/// Street scene behind the end-to-end benchmark: 40 frames at 10 Hz, the ego
/// driving along `+x` at 3 m/s, six vehicles (three parked), four pedestrians
/// (two standing) and two cyclists. Object centers stay more than 5 m apart.
pub fn benchmark_scene(seed: u64, dropout: f64) -> SceneSpec {
    let objects = vec![
        vehicle(15.0, 10.0, 0.0, 0.0, 0.0),
        vehicle(-14.0, -9.0, 0.3, 0.0, 0.0),
        vehicle(36.0, -12.0, FRAC_PI_2, 0.0, 0.0),
        vehicle(-10.0, -3.5, 0.0, 8.0, 0.0),
        vehicle(40.0, 4.0, PI, -7.0, 0.0),
        vehicle(30.0, -18.0, FRAC_PI_2, 0.0, 6.0),
        pedestrian(2.0, -10.0, 1.5, 0.0),
        pedestrian(24.0, 6.0, 0.0, 1.5),
        pedestrian(-2.0, 14.5, 0.0, 0.0),
        pedestrian(-6.0, -11.0, 0.0, 0.0),
        cyclist(-5.0, 8.5, 3.5, 0.0),
        cyclist(-2.0, -16.0, 4.0, 0.0),
    ];
    SceneSpec {
        num_frames: 40,
        frequency_hz: 10.0,
        seed,
        sensor_height_m: default_sensor_height(),
        ego: vec![
            EgoWaypoint { frame: 0, x: 0.0, y: 0.0, yaw: 0.0 },
            EgoWaypoint { frame: 39, x: 11.7, y: 0.0, yaw: 0.0 },
        ],
        objects,
        noise_sigma_m: default_noise(),
        density: DensityModel::default(),
        ground_spacing_m: default_ground_spacing(),
        ground_radius_m: default_ground_radius(),
        dropout,
    }
}

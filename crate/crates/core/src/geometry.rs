//! Points, rigid transforms and oriented boxes.
//!
//! Conventions: meters, z-up, yaw measured counter-clockwise from +x.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

#[inline]
pub fn bev_dist(a: Point3, b: Point3) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_two_pi(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wraps an angle into `[0, π)`.
pub fn wrap_pi(a: f64) -> f64 {
    let r = a.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// Absolute angular difference in `[0, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Rigid sensor-to-world transform `p_world = R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Row-major rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: Point3,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Rotation about +z followed by translation.
    pub fn from_yaw(yaw: f64, translation: Point3) -> Self {
        let (s, c) = yaw.sin_cos();
        Pose {
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            translation,
        }
    }

    pub fn from_row_major(rot: &[f64], translation: &[f64]) -> Result<Self> {
        if rot.len() != 9 || translation.len() != 3 {
            return Err(Error::Validation(format!(
                "pose needs 9 rotation and 3 translation values, got {} and {}",
                rot.len(),
                translation.len()
            )));
        }
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            row.copy_from_slice(&rot[3 * i..3 * i + 3]);
        }
        Ok(Pose {
            rotation,
            translation: [translation[0], translation[1], translation[2]],
        })
    }

    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        ]
    }

    /// Checks that the rotation is orthonormal with determinant +1 within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        if r.iter().flatten().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return false;
        }
        for i in 0..3 {
            for j in 0..3 {
                let rtr: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (rtr - expected).abs() > tol {
                    return false;
                }
            }
        }
        let det = dot(r[0], cross(r[1], r[2]));
        (det - 1.0).abs() <= tol
    }

    #[inline]
    pub fn apply(&self, p: Point3) -> Point3 {
        let r = &self.rotation;
        [
            dot(r[0], p) + self.translation[0],
            dot(r[1], p) + self.translation[1],
            dot(r[2], p) + self.translation[2],
        ]
    }

    /// World-to-sensor, assuming an orthonormal rotation.
    pub fn apply_inverse(&self, p: Point3) -> Point3 {
        let r = &self.rotation;
        let d = sub(p, self.translation);
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    /// Heading of the sensor's +x axis in the world xy plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[1][0].atan2(self.rotation[0][0])
    }
}

/// Seven-parameter box: center, length (along heading), width, height, yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
}

impl OrientedBox {
    pub fn new(center: Point3, l: f64, w: f64, h: f64, yaw: f64) -> Self {
        OrientedBox {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            l,
            w,
            h,
            yaw,
        }
    }

    pub fn center(&self) -> Point3 {
        [self.cx, self.cy, self.cz]
    }

    pub fn dims(&self) -> [f64; 3] {
        [self.l, self.w, self.h]
    }

    pub fn bev_area(&self) -> f64 {
        self.l * self.w
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn z_min(&self) -> f64 {
        self.cz - 0.5 * self.h
    }

    pub fn z_max(&self) -> f64 {
        self.cz + 0.5 * self.h
    }

    pub fn has_positive_dims(&self) -> bool {
        self.l > 0.0 && self.w > 0.0 && self.h > 0.0
    }

    /// Heading unit vector and its left normal.
    pub fn axes(&self) -> ([f64; 2], [f64; 2]) {
        let (s, c) = self.yaw.sin_cos();
        ([c, s], [-s, c])
    }

    /// Coordinates of `p` in the box frame (x along heading), relative to center.
    pub fn to_local(&self, p: Point3) -> Point3 {
        let (e1, e2) = self.axes();
        let dx = p[0] - self.cx;
        let dy = p[1] - self.cy;
        [
            dx * e1[0] + dy * e1[1],
            dx * e2[0] + dy * e2[1],
            p[2] - self.cz,
        ]
    }

    pub fn local_to_world_xy(&self, u: f64, v: f64) -> [f64; 2] {
        let (e1, e2) = self.axes();
        [
            self.cx + u * e1[0] + v * e2[0],
            self.cy + u * e1[1] + v * e2[1],
        ]
    }

    /// BEV corners in counter-clockwise order.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let hl = 0.5 * self.l;
        let hw = 0.5 * self.w;
        [
            self.local_to_world_xy(hl, hw),
            self.local_to_world_xy(-hl, hw),
            self.local_to_world_xy(-hl, -hw),
            self.local_to_world_xy(hl, -hw),
        ]
    }

    pub fn contains(&self, p: Point3, tol: f64) -> bool {
        let q = self.to_local(p);
        q[0].abs() <= 0.5 * self.l + tol
            && q[1].abs() <= 0.5 * self.w + tol
            && q[2].abs() <= 0.5 * self.h + tol
    }

    /// The same box expressed with `yaw + k·π/2` for the `k` whose yaw is
    /// closest to `target` (mod 2π); dims swap for odd `k`.
    pub fn aligned_to_heading(&self, target: f64) -> OrientedBox {
        let mut best = *self;
        let mut best_diff = f64::INFINITY;
        for k in 0..4 {
            let yaw = self.yaw + k as f64 * 0.5 * PI;
            let diff = angle_diff(yaw, target);
            if diff < best_diff {
                best_diff = diff;
                best = *self;
                best.yaw = yaw;
                if k % 2 == 1 {
                    best.l = self.w;
                    best.w = self.l;
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_yaw_rotation() {
        let pose = Pose::from_yaw(PI / 2.0, [0.0; 3]);
        let p = pose.apply([1.0, 0.0, 0.0]);
        assert!((p[0]).abs() < 1e-9 && (p[1] - 1.0).abs() < 1e-9 && p[2].abs() < 1e-9);
        assert!(pose.is_valid(1e-9));
        let back = pose.apply_inverse(p);
        assert!(dist2(back, [1.0, 0.0, 0.0]) < 1e-18);
    }

    #[test]
    fn invalid_rotation_detected() {
        let mut pose = Pose::identity();
        pose.rotation[0][0] = 1.1;
        assert!(!pose.is_valid(1e-6));
        let mut mirror = Pose::identity();
        mirror.rotation[2][2] = -1.0;
        assert!(!mirror.is_valid(1e-6));
    }

    #[test]
    fn wrap_ranges() {
        assert_eq!(wrap_pi(PI), 0.0);
        assert!((wrap_pi(-0.25) - (PI - 0.25)).abs() < 1e-12);
        assert!((wrap_two_pi(-PI / 2.0) - 1.5 * PI).abs() < 1e-12);
        assert!((angle_diff(0.1, TAU - 0.1) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn corners_and_containment() {
        let b = OrientedBox::new([1.0, 2.0, 0.5], 4.0, 2.0, 1.0, 0.0);
        let c = b.bev_corners();
        assert_eq!(c[0], [3.0, 3.0]);
        assert_eq!(c[2], [-1.0, 1.0]);
        assert!(b.contains([2.9, 2.9, 0.9], 0.0));
        assert!(!b.contains([3.1, 2.0, 0.5], 0.0));
    }

    #[test]
    fn heading_alignment_swaps_dims() {
        let b = OrientedBox::new([0.0; 3], 4.0, 2.0, 1.0, 0.0);
        let a = b.aligned_to_heading(PI / 2.0 + 0.05);
        assert!((a.yaw - PI / 2.0).abs() < 1e-12);
        assert_eq!((a.l, a.w), (2.0, 4.0));
        // same footprint
        let mut ca = a.bev_corners().to_vec();
        let mut cb = b.bev_corners().to_vec();
        let key = |p: &[f64; 2]| ((p[0] * 1e6).round() as i64, (p[1] * 1e6).round() as i64);
        ca.sort_by_key(key);
        cb.sort_by_key(key);
        for (p, q) in ca.iter().zip(&cb) {
            assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
        }
    }
}

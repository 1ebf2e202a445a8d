//! Ground plane fitting with RANSAC and ground / non-ground splitting.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cross, dot, norm, sub, Point3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacParams {
    pub iterations: usize,
    /// Inlier distance to the plane.
    pub tol_m: f64,
    /// Hypotheses are sampled only from points whose z is at or below this quantile.
    pub seed_quantile: f64,
    /// Fits with fewer inliers than this fraction of all points are rejected.
    pub min_inlier_ratio: f64,
    pub rng_seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            iterations: 200,
            tol_m: 0.2,
            seed_quantile: 0.4,
            min_inlier_ratio: 0.2,
            rng_seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Parameter("ground.iterations must be ≥ 1".into()));
        }
        if !(self.tol_m > 0.0) {
            return Err(Error::Parameter("ground.tol_m must be positive".into()));
        }
        if !(self.seed_quantile > 0.0 && self.seed_quantile <= 1.0) {
            return Err(Error::Parameter("ground.seed_quantile must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.min_inlier_ratio) {
            return Err(Error::Parameter("ground.min_inlier_ratio must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Plane `normal·p + offset_d = 0` with an upward unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundModel {
    pub normal: Point3,
    pub offset_d: f64,
    pub inlier_count: usize,
}

impl GroundModel {
    pub fn flat(height: f64) -> Self {
        GroundModel {
            normal: [0.0, 0.0, 1.0],
            offset_d: -height,
            inlier_count: 0,
        }
    }

    #[inline]
    pub fn signed_distance(&self, p: Point3) -> f64 {
        dot(self.normal, p) + self.offset_d
    }
}

pub fn fit_ground_plane(points: &[Point3], params: &RansacParams) -> Result<GroundModel> {
    ransac(points, params).map(|(model, _)| model)
}

/// Runs RANSAC; also returns the inlier count of every non-degenerate hypothesis.
pub(crate) fn ransac(points: &[Point3], params: &RansacParams) -> Result<(GroundModel, Vec<usize>)> {
    params.validate()?;
    let candidates = seed_candidates(points, params.seed_quantile);
    if candidates.len() < 3 {
        return Err(Error::Degenerate(format!(
            "ground fit needs ≥ 3 candidate points, got {}",
            candidates.len()
        )));
    }
    if all_collinear(points, &candidates) {
        return Err(Error::Degenerate("ground candidates are collinear".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut best: Option<GroundModel> = None;
    let mut hypotheses = Vec::with_capacity(params.iterations);
    for _ in 0..params.iterations {
        let idx = sample(&mut rng, candidates.len(), 3);
        let (a, b, c) = (
            points[candidates[idx.index(0)]],
            points[candidates[idx.index(1)]],
            points[candidates[idx.index(2)]],
        );
        let Some((normal, offset_d)) = plane_through(a, b, c) else {
            continue;
        };
        let inlier_count = count_inliers(points, normal, offset_d, params.tol_m);
        hypotheses.push(inlier_count);
        if best.is_none_or(|m| inlier_count > m.inlier_count) {
            best = Some(GroundModel {
                normal,
                offset_d,
                inlier_count,
            });
        }
    }
    let Some(mut model) = best else {
        return Err(Error::Degenerate("no non-degenerate plane hypothesis sampled".into()));
    };

    // Least-squares refit on the consensus set, kept only if it does not lose inliers.
    let inliers: Vec<Point3> = points
        .iter()
        .copied()
        .filter(|&p| model.signed_distance(p).abs() <= params.tol_m)
        .collect();
    if let Some((normal, offset_d)) = least_squares_plane(&inliers) {
        let inlier_count = count_inliers(points, normal, offset_d, params.tol_m);
        if inlier_count >= model.inlier_count {
            model = GroundModel {
                normal,
                offset_d,
                inlier_count,
            };
        }
    }

    let required = (params.min_inlier_ratio * points.len() as f64).ceil() as usize;
    if model.inlier_count < required {
        return Err(Error::Degenerate(format!(
            "best plane has {} inliers, below the required {required}",
            model.inlier_count
        )));
    }
    Ok((model, hypotheses))
}

/// Indices of points with z at or below the `quantile` z value.
fn seed_candidates(points: &[Point3], quantile: f64) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut zs: Vec<f64> = points.iter().map(|p| p[2]).collect();
    zs.sort_by(f64::total_cmp);
    let k = ((quantile * points.len() as f64).ceil() as usize).clamp(1, points.len());
    let z_cut = zs[k - 1];
    (0..points.len()).filter(|&i| points[i][2] <= z_cut).collect()
}

fn all_collinear(points: &[Point3], idx: &[usize]) -> bool {
    let p0 = points[idx[0]];
    let far = |from: Point3| {
        idx.iter()
            .copied()
            .max_by(|&a, &b| {
                crate::geometry::dist2(points[a], from).total_cmp(&crate::geometry::dist2(points[b], from))
            })
            .unwrap()
    };
    let p1 = points[far(p0)];
    let dir = sub(p1, p0);
    let len = norm(dir);
    if len < 1e-12 {
        return true;
    }
    let max_off = idx
        .iter()
        .map(|&i| norm(cross(dir, sub(points[i], p0))) / len)
        .fold(0.0, f64::max);
    max_off < 1e-9
}

fn plane_through(a: Point3, b: Point3, c: Point3) -> Option<(Point3, f64)> {
    let n = cross(sub(b, a), sub(c, a));
    let len = norm(n);
    if len < 1e-12 {
        return None;
    }
    orient_up([n[0] / len, n[1] / len, n[2] / len], a)
}

fn orient_up(mut n: Point3, on_plane: Point3) -> Option<(Point3, f64)> {
    if n[2] < 0.0 {
        n = [-n[0], -n[1], -n[2]];
    }
    if n[2] <= 0.0 {
        return None;
    }
    Some((n, -dot(n, on_plane)))
}

fn least_squares_plane(points: &[Point3]) -> Option<(Point3, f64)> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let mean = points
        .iter()
        .fold(Vector3::zeros(), |acc: Vector3<f64>, p| acc + Vector3::from(*p))
        / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = Vector3::from(*p) - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let v = eig.eigenvectors.column(imin);
    let len = v.norm();
    if !(len > 0.0) {
        return None;
    }
    orient_up([v[0] / len, v[1] / len, v[2] / len], [mean[0], mean[1], mean[2]])
}

fn count_inliers(points: &[Point3], normal: Point3, d: f64, tol: f64) -> usize {
    points
        .iter()
        .filter(|&&p| (dot(normal, p) + d).abs() <= tol)
        .count()
}

/// Partitions point indices into `(ground, non_ground)`; ground iff `|n·p + d| ≤ tol`.
pub fn split_ground(points: &[Point3], model: &GroundModel, tol: f64) -> (Vec<usize>, Vec<usize>) {
    let mut ground = Vec::new();
    let mut rest = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        if model.signed_distance(p).abs() <= tol {
            ground.push(i);
        } else {
            rest.push(i);
        }
    }
    (ground, rest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn grid_plane(n: usize) -> Vec<Point3> {
        (0..n * n)
            .map(|i| [(i % n) as f64 * 0.5, (i / n) as f64 * 0.5, 0.0])
            .collect()
    }

    #[test]
    fn exact_plane_recovered() {
        let pts = grid_plane(20);
        let m = fit_ground_plane(&pts, &RansacParams::default()).unwrap();
        assert!((m.normal[2] - 1.0).abs() < 1e-12);
        assert!(m.offset_d.abs() < 1e-12);
        assert_eq!(m.inlier_count, pts.len());
    }

    #[test]
    fn too_few_points_is_degenerate() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert!(matches!(
            fit_ground_plane(&pts, &RansacParams::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn collinear_candidates_are_degenerate() {
        let pts: Vec<Point3> = (0..50).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(matches!(
            fit_ground_plane(&pts, &RansacParams::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn low_inlier_ratio_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3> = (0..500)
            .map(|_| {
                [
                    rng.random_range(0.0..10.0),
                    rng.random_range(0.0..10.0),
                    rng.random_range(0.0..10.0),
                ]
            })
            .collect();
        let params = RansacParams {
            min_inlier_ratio: 0.5,
            ..Default::default()
        };
        assert!(matches!(fit_ground_plane(&pts, &params), Err(Error::Degenerate(_))));
    }

    #[test]
    fn best_so_far_dominates_hypotheses_and_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let pts: Vec<Point3> = (0..2000)
            .map(|i| {
                if i % 4 == 0 {
                    [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(0.0..3.0)]
                } else {
                    let x: f64 = rng.random_range(-20.0..20.0);
                    [x, rng.random_range(-20.0..20.0), 0.05 * x + noise.sample(&mut rng)]
                }
            })
            .collect();
        let params = RansacParams::default();
        let (model, hyps) = ransac(&pts, &params).unwrap();
        assert!(!hyps.is_empty());
        assert!(hyps.iter().all(|&h| model.inlier_count >= h));
        let (again, _) = ransac(&pts, &params).unwrap();
        assert_eq!(model, again);
        assert!((dot(model.normal, model.normal) - 1.0).abs() < 1e-9);
        assert!(model.normal[2] > 0.0);
    }

    #[test]
    fn split_examples() {
        let model = GroundModel::flat(0.0);
        let mut pts = grid_plane(5);
        let box_start = pts.len();
        for i in 0..10 {
            pts.push([1.0 + 0.1 * i as f64, 1.0, 1.0]);
        }
        let (ground, rest) = split_ground(&pts, &model, 0.2);
        assert_eq!(ground.len(), box_start);
        assert_eq!(rest, (box_start..pts.len()).collect::<Vec<_>>());

        let (g, r) = split_ground(&[], &model, 0.2);
        assert!(g.is_empty() && r.is_empty());

        let model = GroundModel::flat(-0.25);
        let (g, _) = split_ground(&[[0.0, 0.0, 0.0], [0.0, 0.0, -0.5]], &model, 0.25);
        assert_eq!(g, vec![0, 1]);
    }
}

//! Uniform hash grid over 3D positions for fixed-radius neighbor queries.

use rustc_hash::FxHashMap;

use crate::geometry::Point3;

/// Cells are slightly larger than the query radius so that any pair within
/// the radius lands in adjacent cells despite rounding in the cell division.
const CELL_SLACK: f64 = 1.0 + 1e-9;

pub struct HashGrid {
    inv_cell: f64,
    cells: FxHashMap<[i64; 3], Vec<u32>>,
}

impl HashGrid {
    /// Builds a grid over `points` for queries of radius at most `radius`.
    pub fn new(points: &[Point3], radius: f64) -> Self {
        assert!(radius > 0.0, "grid radius must be positive");
        let inv_cell = 1.0 / (radius * CELL_SLACK);
        let mut cells: FxHashMap<[i64; 3], Vec<u32>> = FxHashMap::default();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(p, inv_cell)).or_default().push(i as u32);
        }
        HashGrid { inv_cell, cells }
    }

    /// Calls `f` with the index of every point in the 27 cells around `p`.
    /// `f` returns `false` to stop early.
    #[inline]
    pub fn visit_candidates(&self, p: &Point3, mut f: impl FnMut(usize) -> bool) {
        let c = cell_of(p, self.inv_cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &i in ids {
                            if !f(i as usize) {
                                return;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Number of `points` within `radius2` (squared) of `p`, stopping at `limit`.
    pub fn count_within(&self, points: &[Point3], p: &Point3, radius2: f64, limit: usize) -> usize {
        let mut count = 0;
        if limit == 0 {
            return 0;
        }
        self.visit_candidates(p, |i| {
            let q = &points[i];
            let dx = q[0] - p[0];
            let dy = q[1] - p[1];
            let dz = q[2] - p[2];
            if dx * dx + dy * dy + dz * dz <= radius2 {
                count += 1;
            }
            count < limit
        });
        count
    }
}

#[inline]
fn cell_of(p: &Point3, inv_cell: f64) -> [i64; 3] {
    [
        (p[0] * inv_cell).floor() as i64,
        (p[1] * inv_cell).floor() as i64,
        (p[2] * inv_cell).floor() as i64,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn counts_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Point3> = (0..2000)
            .map(|_| {
                [
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let r = 0.4;
        let grid = HashGrid::new(&pts, r);
        for p in pts.iter().take(300) {
            let brute = pts
                .iter()
                .filter(|q| {
                    let d = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
                    d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r * r
                })
                .count();
            assert_eq!(grid.count_within(&pts, p, r * r, usize::MAX), brute);
        }
    }

    #[test]
    fn boundary_distance_counts() {
        let pts = vec![[0.0, 0.0, 0.0], [0.3, 0.0, 0.0], [0.6, 0.0, 0.0]];
        let grid = HashGrid::new(&pts, 0.3);
        assert_eq!(grid.count_within(&pts, &[0.3, 0.0, 0.0], 0.09, usize::MAX), 3);
        assert_eq!(grid.count_within(&pts, &[0.3, 0.0, 0.0], 0.09, 2), 2);
    }
}

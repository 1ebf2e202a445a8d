//! Multi-view orthographic depth maps of a segment for image-based
//! classification.
//!
//! Points are centred on the box and expressed in the box frame, then turned
//! so that the sensor lies along `+x`. Each view applies an extra yaw about
//! `z` and a pitch about `y` before projecting onto the `y`/`z` plane, seen
//! from `+x`. Pixel values encode closeness to the virtual camera.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Point3};

/// Depth values span `[1 − DEPTH_SPAN, 1]` over the segment's depth extent,
/// keeping the farthest surface distinguishable from empty background.
const DEPTH_SPAN: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub yaw_deg: f64,
    pub pitch_deg: f64,
}

impl ViewSpec {
    pub const fn new(yaw_deg: f64, pitch_deg: f64) -> Self {
        ViewSpec { yaw_deg, pitch_deg }
    }
}

pub fn default_views() -> Vec<ViewSpec> {
    vec![
        ViewSpec::new(0.0, 0.0),
        ViewSpec::new(18.0, 0.0),
        ViewSpec::new(-18.0, 0.0),
        ViewSpec::new(0.0, 6.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectParams {
    /// Square image side in pixels.
    pub image_size: usize,
    /// Fraction of the image side covered by the larger point extent.
    pub fill_fraction: f64,
    pub views: Vec<ViewSpec>,
    /// Side of the max-splat neighborhood (odd).
    pub splat_kernel: usize,
    /// Side of the Gaussian smoothing kernel (odd).
    pub gauss_kernel: usize,
    pub gauss_sigma: f64,
}

impl Default for ProjectParams {
    fn default() -> Self {
        ProjectParams {
            image_size: 224,
            fill_fraction: 0.4,
            views: default_views(),
            splat_kernel: 3,
            gauss_kernel: 7,
            gauss_sigma: 1.5,
        }
    }
}

impl ProjectParams {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::Parameter("project.image_size must be ≥ 8".into()));
        }
        if !(self.fill_fraction > 0.0 && self.fill_fraction <= 1.0) {
            return Err(Error::Parameter("project.fill_fraction must lie in (0, 1]".into()));
        }
        if self.views.is_empty() {
            return Err(Error::Parameter("project.views must not be empty".into()));
        }
        if self
            .views
            .iter()
            .any(|v| !v.yaw_deg.is_finite() || !v.pitch_deg.is_finite())
        {
            return Err(Error::Parameter("project.views angles must be finite".into()));
        }
        for (name, k) in [("splat_kernel", self.splat_kernel), ("gauss_kernel", self.gauss_kernel)] {
            if k % 2 == 0 {
                return Err(Error::Parameter(format!("project.{name} must be odd")));
            }
        }
        if !(self.gauss_sigma > 0.0 && self.gauss_sigma.is_finite()) {
            return Err(Error::Parameter("project.gauss_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Row-major single-channel image with values in `[0, 1]`; 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl DepthMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    /// Inclusive `(row_min, row_max, col_min, col_max)` of nonzero pixels.
    pub fn nonzero_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) > 0.0 {
                    b = Some(match b {
                        None => (r, r, c, c),
                        Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
                    });
                }
            }
        }
        b
    }

    /// Writes the map as an 8-bit grayscale PNG.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let bytes: Vec<u8> = self
            .values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let to_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
        enc.write_header()
            .map_err(to_err)?
            .write_image_data(&bytes)
            .map_err(to_err)
    }
}

/// Renders one depth map per view of `points` around `bbox`, looking from
/// the side that faces `sensor`.
pub fn render_depth_views(
    points: &[Point3],
    bbox: &OrientedBox,
    sensor: Point3,
    params: &ProjectParams,
) -> Result<Vec<DepthMap>> {
    params.validate()?;
    if points.is_empty() {
        return Err(Error::Degenerate("cannot render an empty point set".into()));
    }
    if !bbox.has_positive_dims() {
        return Err(Error::Degenerate(format!(
            "box dims must be positive, got l={} w={} h={}",
            bbox.l, bbox.w, bbox.h
        )));
    }
    let local: Vec<Point3> = points.iter().map(|&p| bbox.to_local(p)).collect();
    let s = bbox.to_local(sensor);
    let facing = if s[0] == 0.0 && s[1] == 0.0 { 0.0 } else { s[1].atan2(s[0]) };
    Ok(params
        .views
        .iter()
        .map(|v| render_view(&local, facing + v.yaw_deg.to_radians(), v.pitch_deg.to_radians(), params))
        .collect())
}

fn render_view(local: &[Point3], yaw: f64, pitch: f64, params: &ProjectParams) -> DepthMap {
    // Rotate by −yaw about z, then pitch about y so that higher points move
    // toward the camera at +x.
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let view: Vec<Point3> = local
        .iter()
        .map(|p| {
            let x = p[0] * cy + p[1] * sy;
            let y = -p[0] * sy + p[1] * cy;
            [x * cp + p[2] * sp, y, -x * sp + p[2] * cp]
        })
        .collect();

    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &view {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let n = params.image_size;
    let extent = (hi[1] - lo[1]).max(hi[2] - lo[2]);
    let scale = if extent > 0.0 {
        params.fill_fraction * n as f64 / extent
    } else {
        0.0
    };
    let mid_u = 0.5 * (lo[1] + hi[1]);
    let mid_v = 0.5 * (lo[2] + hi[2]);
    let center = 0.5 * (n as f64 - 1.0);
    let depth_extent = hi[0] - lo[0];

    let mut raw = vec![0.0f64; n * n];
    for p in &view {
        let col = (center + (p[1] - mid_u) * scale).round();
        let row = (center - (p[2] - mid_v) * scale).round();
        if !(0.0..n as f64).contains(&col) || !(0.0..n as f64).contains(&row) {
            continue;
        }
        let value = if depth_extent > 0.0 {
            1.0 - DEPTH_SPAN * (hi[0] - p[0]) / depth_extent
        } else {
            1.0
        };
        let idx = row as usize * n + col as usize;
        raw[idx] = raw[idx].max(value);
    }

    let splat = max_splat(&raw, n, params.splat_kernel / 2);
    let mut smooth = gaussian_blur(&splat, n, params.gauss_kernel / 2, params.gauss_sigma);
    let peak = smooth.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        for v in &mut smooth {
            *v = (*v / peak).clamp(0.0, 1.0);
        }
    }
    DepthMap {
        width: n,
        height: n,
        values: smooth.into_iter().map(|v| v as f32).collect(),
    }
}

/// Each occupied pixel writes its value into its `(2r+1)²` neighborhood,
/// overlapping writes keep the maximum.
fn max_splat(img: &[f64], n: usize, r: usize) -> Vec<f64> {
    let mut out = img.to_vec();
    for row in 0..n {
        for col in 0..n {
            let v = img[row * n + col];
            if v <= 0.0 {
                continue;
            }
            for rr in row.saturating_sub(r)..=(row + r).min(n - 1) {
                for cc in col.saturating_sub(r)..=(col + r).min(n - 1) {
                    let o = &mut out[rr * n + cc];
                    *o = o.max(v);
                }
            }
        }
    }
    out
}

/// Separable normalized Gaussian convolution with zero padding.
fn gaussian_blur(img: &[f64], n: usize, r: usize, sigma: f64) -> Vec<f64> {
    let mut kernel: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let ri = r as isize;
    let ni = n as isize;
    let mut tmp = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..ni {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let c = col + k as isize - ri;
                if (0..ni).contains(&c) {
                    acc += w * img[row * n + c as usize];
                }
            }
            tmp[row * n + col as usize] = acc;
        }
    }
    let mut out = vec![0.0; n * n];
    for row in 0..ni {
        for col in 0..n {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let r2 = row + k as isize - ri;
                if (0..ni).contains(&r2) {
                    acc += w * tmp[r2 as usize * n + col];
                }
            }
            out[row as usize * n + col] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> OrientedBox {
        OrientedBox::new([0.0, 0.0, 0.0], 1.0, 1.0, 1.0, 0.0)
    }

    #[test]
    fn default_views_give_four_maps() {
        let pts = vec![[0.1, 0.2, 0.3], [0.4, -0.2, 0.1], [0.0, 0.0, -0.3]];
        let maps = render_depth_views(&pts, &unit_box(), [10.0, 0.0, 0.0], &ProjectParams::default()).unwrap();
        assert_eq!(maps.len(), 4);
        for m in &maps {
            assert_eq!((m.width, m.height), (224, 224));
            assert!(m.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn single_point_blob_peaks_at_projection() {
        let maps = render_depth_views(
            &[[0.0, 0.0, 0.0]],
            &unit_box(),
            [10.0, 0.0, 0.0],
            &ProjectParams::default(),
        )
        .unwrap();
        let m = &maps[0];
        let peak = m.values.iter().copied().fold(0.0f32, f32::max);
        assert_eq!(peak, 1.0);
        // a lone point lands on the rounded image center
        assert_eq!(m.get(112, 112), 1.0);
        let (r0, r1, c0, c1) = m.nonzero_bounds().unwrap();
        assert_eq!((r0, r1, c0, c1), (108, 116, 108, 116));
    }

    #[test]
    fn errors_on_empty_or_flat_box() {
        let p = ProjectParams::default();
        assert!(render_depth_views(&[], &unit_box(), [1.0, 0.0, 0.0], &p).is_err());
        let mut b = unit_box();
        b.h = 0.0;
        assert!(render_depth_views(&[[0.0; 3]], &b, [1.0, 0.0, 0.0], &p).is_err());
    }

    #[test]
    fn nearer_points_are_brighter() {
        // two points on the same pixel ray, sensor at +x
        let pts = vec![[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0], [0.0, 0.5, 0.5]];
        let p = ProjectParams {
            views: vec![ViewSpec::new(0.0, 0.0)],
            splat_kernel: 1,
            gauss_kernel: 1,
            ..Default::default()
        };
        let m = &render_depth_views(&pts, &unit_box(), [10.0, 0.0, 0.0], &p).unwrap()[0];
        let (r0, r1, c0, c1) = m.nonzero_bounds().unwrap();
        assert_eq!(m.nonzero_count(), 2);
        // the ray through (y=0, z=0) keeps the front point at depth 1
        let front = m.get(r1, c0);
        assert_eq!(front, 1.0);
        assert!(m.get(r0, c1) > 0.0 && m.get(r0, c1) < 1.0);
    }

    #[test]
    fn wall_facing_camera_is_densely_covered() {
        // 2 m × 1 m wall in the y/z plane, one point every 4 cm
        let mut pts = Vec::new();
        for i in 0..=50 {
            for j in 0..=25 {
                pts.push([0.0, -1.0 + 0.04 * i as f64, -0.5 + 0.04 * j as f64]);
            }
        }
        let b = OrientedBox::new([0.0; 3], 0.2, 2.0, 1.0, 0.0);
        let p = ProjectParams {
            views: vec![ViewSpec::new(0.0, 0.0)],
            ..Default::default()
        };
        let m = &render_depth_views(&pts, &b, [10.0, 0.0, 0.0], &p).unwrap()[0];
        let scale = 0.4 * 224.0 / 2.0;
        let half_u = (1.0 * scale) as usize;
        let half_v = (0.5 * scale) as usize;
        let (c, r) = (112usize, 112usize);
        let mut inside = 0;
        let mut filled = 0;
        for row in r - half_v + 1..r + half_v {
            for col in c - half_u + 1..c + half_u {
                inside += 1;
                if m.get(row, col) > 0.0 {
                    filled += 1;
                }
            }
        }
        assert!(filled as f64 >= 0.95 * inside as f64, "{filled}/{inside}");
    }

    #[test]
    fn pitch_raises_top_points() {
        // with the camera tilted from above, the top point becomes nearest
        let pts = vec![[0.0, 0.0, 0.5], [0.0, 0.0, -0.5], [0.0, 0.3, 0.0]];
        let p = ProjectParams {
            views: vec![ViewSpec::new(0.0, 6.0)],
            splat_kernel: 1,
            gauss_kernel: 1,
            ..Default::default()
        };
        let m = &render_depth_views(&pts, &unit_box(), [10.0, 0.0, 0.0], &p).unwrap()[0];
        let (r0, r1, _, _) = m.nonzero_bounds().unwrap();
        let top = (0..224).map(|c| m.get(r0, c)).fold(0.0f32, f32::max);
        let bottom = (0..224).map(|c| m.get(r1, c)).fold(0.0f32, f32::max);
        assert!(top > bottom);
    }

    #[test]
    fn png_dump_roundtrip_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("view.png");
        let m = DepthMap::zeros(16, 8);
        m.write_png(&path).unwrap();
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
    }
}

//! Spherical range images.
//!
//! A point `(x, y, z)` at range `r` maps to continuous pixel coordinates
//!
//! ```text
//! u = ½ · (1 − atan2(y, x) / π) · W
//! v = (1 − (asin(z / r) + fov_down) / fov) · H
//! ```
//!
//! and lands in pixel `(floor(v), floor(u) mod W)`. Azimuth wraps; rows outside
//! `[0, H)` are outside the field of view. Each pixel keeps the closest
//! in-range return, and the image remembers which pixel every source point
//! fell into so that per-pixel predictions can be copied back to points.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::Label;

/// Range value stored in pixels without a return.
pub const EMPTY_RANGE: f64 = 0.0;
/// Index value stored in pixels without a return.
pub const NO_POINT: u32 = u32::MAX;
/// Pixel value recorded for points that fall outside the image.
pub const NO_PIXEL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub height: usize,
    pub width: usize,
    /// Vertical field of view, degrees.
    pub fov_deg: f64,
    /// Part of the vertical field of view below the horizon, degrees.
    pub fov_down_deg: f64,
    /// Returns beyond this range (metres) are dropped.
    pub max_range: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ProjectionConfig {
    /// 32 × 256 raster used for desk-scale work.
    pub fn desk() -> Self {
        Self {
            height: 32,
            width: 256,
            fov_deg: 25.0,
            fov_down_deg: 12.5,
            max_range: 10.0,
        }
    }

    /// 64 × 1024 raster over a 25° × 360° field of view.
    pub fn full() -> Self {
        Self {
            height: 64,
            width: 1024,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return invalid("projection raster must be at least 1x1");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg <= 180.0) {
            return invalid(format!("fov must lie in (0, 180], got {}", self.fov_deg));
        }
        if !(self.fov_down_deg >= 0.0 && self.fov_down_deg <= self.fov_deg) {
            return invalid(format!("fov_down must lie in [0, fov], got {}", self.fov_down_deg));
        }
        if !(self.max_range > 0.0) {
            return invalid(format!("max_range must be positive, got {}", self.max_range));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Unit ray through the centre of pixel `(row, col)`, in the sensor frame.
    pub fn pixel_ray(&self, row: usize, col: usize) -> [f64; 3] {
        let (fov, fov_down) = (self.fov_deg.to_radians(), self.fov_down_deg.to_radians());
        let elevation = (1.0 - (row as f64 + 0.5) / self.height as f64) * fov - fov_down;
        let azimuth = std::f64::consts::PI * (1.0 - 2.0 * (col as f64 + 0.5) / self.width as f64);
        let (se, ce) = elevation.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        [ce * ca, ce * sa, se]
    }
}

/// Continuous image coordinates of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageCoord {
    pub u: f64,
    pub v: f64,
    pub r: f64,
}

pub fn project_point(p: &Point3, cfg: &ProjectionConfig) -> Result<ImageCoord> {
    let r = (p.x * p.x + p.y * p.y + p.z * p.z).sqrt();
    if !(r > 0.0) {
        return Err(Error::DegeneratePoint);
    }
    let (fov, fov_down) = (cfg.fov_deg.to_radians(), cfg.fov_down_deg.to_radians());
    let u = 0.5 * (1.0 - p.y.atan2(p.x) / std::f64::consts::PI) * cfg.width as f64;
    let v = (1.0 - ((p.z / r).asin() + fov_down) / fov) * cfg.height as f64;
    Ok(ImageCoord { u, v, r })
}

/// Pixel (row, col) that a continuous coordinate falls into, if inside the fov.
pub fn pixel_of(c: &ImageCoord, cfg: &ProjectionConfig) -> Option<(usize, usize)> {
    if !(c.v >= 0.0) {
        return None;
    }
    let row = c.v.floor() as usize;
    if row >= cfg.height {
        return None;
    }
    let w = cfg.width as i64;
    let col = (c.u.floor() as i64).rem_euclid(w) as usize;
    Some((row, col))
}

/// Dense H × W grid stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return invalid(format!("raster data has {} cells, expected {}x{}", data.len(), height, width));
        }
        Ok(Self { height, width, data })
    }

    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }
}

/// Closest-return range raster plus the pixel ↔ point correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    /// Range per pixel, [`EMPTY_RANGE`] where no return landed.
    pub ranges: Raster<f64>,
    /// Index of the winning point per pixel, [`NO_POINT`] where empty.
    pub index: Raster<u32>,
    /// Flat pixel index each source point projects into, [`NO_PIXEL`] if
    /// the point is outside the field of view or degenerate.
    pub point_pixel: Vec<u32>,
}

impl RangeImage {
    pub fn height(&self) -> usize {
        self.ranges.height
    }

    pub fn width(&self) -> usize {
        self.ranges.width
    }

    pub fn populated(&self) -> usize {
        self.index.data.iter().filter(|&&i| i != NO_POINT).count()
    }
}

/// Renders `cloud` (sensor-aligned frame) into a range image.
pub fn render(cloud: &PointCloud, cfg: &ProjectionConfig) -> RangeImage {
    let (h, w) = (cfg.height, cfg.width);
    let mut ranges = Raster::filled(h, w, EMPTY_RANGE);
    let mut index = Raster::filled(h, w, NO_POINT);
    let mut point_pixel = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points().iter().enumerate() {
        let Ok(c) = project_point(p, cfg) else {
            point_pixel.push(NO_PIXEL);
            continue;
        };
        let Some((row, col)) = pixel_of(&c, cfg) else {
            point_pixel.push(NO_PIXEL);
            continue;
        };
        let flat = row * w + col;
        point_pixel.push(flat as u32);
        if c.r > cfg.max_range {
            continue;
        }
        let cur = ranges.data[flat];
        // strict comparison: equal ranges keep the lower index
        if cur == EMPTY_RANGE || c.r < cur {
            ranges.data[flat] = c.r;
            index.data[flat] = i as u32;
        }
    }
    RangeImage {
        ranges,
        index,
        point_pixel,
    }
}

/// Copies a per-pixel value to every point, `default` for points whose pixel
/// is unpopulated or who fall outside the image.
pub fn backproject<T: Copy>(values: &Raster<T>, img: &RangeImage, n: usize, default: T) -> Result<Vec<T>> {
    if values.height != img.height() || values.width != img.width() {
        return invalid(format!(
            "label raster is {}x{}, range image is {}x{}",
            values.height,
            values.width,
            img.height(),
            img.width()
        ));
    }
    if img.point_pixel.len() != n {
        return invalid(format!("range image was rendered from {} points, not {n}", img.point_pixel.len()));
    }
    Ok(img
        .point_pixel
        .iter()
        .map(|&px| {
            if px != NO_PIXEL && img.index.data[px as usize] != NO_POINT {
                values.data[px as usize]
            } else {
                default
            }
        })
        .collect())
}

/// Per-point labels from a per-pixel class raster.
///
/// Points occluded inside a populated pixel inherit that pixel's label;
/// points outside the fov or in empty pixels are [`Label::Consistent`].
pub fn backproject_labels(labels: &Raster<Label>, img: &RangeImage, n: usize) -> Result<Vec<Label>> {
    backproject(labels, img, n, Label::Consistent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SENSOR_FRAME;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg64() -> ProjectionConfig {
        ProjectionConfig::full()
    }

    #[test]
    fn forward_axis_hits_centre() {
        let c = project_point(&Point3::new(1.0, 0.0, 0.0), &cfg64()).unwrap();
        assert!((c.u - 512.0).abs() < 1e-12);
        assert!((c.v - 32.0).abs() < 1e-12);
        assert_eq!(c.r, 1.0);
    }

    #[test]
    fn left_axis_quarter_width() {
        let c = project_point(&Point3::new(0.0, 1.0, 0.0), &cfg64()).unwrap();
        assert!((c.u - 256.0).abs() < 1e-12);
    }

    #[test]
    fn zero_point_is_degenerate() {
        assert!(matches!(project_point(&Point3::origin(), &cfg64()), Err(Error::DegeneratePoint)));
    }

    #[test]
    fn random_points_inside_fov_land_in_image() {
        let cfg = cfg64();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let az = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let el = rng.random_range(-12.4f64..12.4).to_radians();
            let r = rng.random_range(0.5..50.0);
            let p = Point3::new(r * el.cos() * az.cos(), r * el.cos() * az.sin(), r * el.sin());
            let c = project_point(&p, &cfg).unwrap();
            // direct re-evaluation
            let r2 = (p.x.powi(2) + p.y.powi(2) + p.z.powi(2)).sqrt();
            assert!((c.r - r2).abs() < 1e-9);
            let u = (1.0 - p.y.atan2(p.x) / std::f64::consts::PI) * 0.5 * 1024.0;
            let v = (1.0 - ((p.z / r2).asin() + 12.5f64.to_radians()) / 25f64.to_radians()) * 64.0;
            assert!((c.u - u).abs() < 1e-9 && (c.v - v).abs() < 1e-9);
            assert!(c.u >= 0.0 && c.u < 1024.0, "u={}", c.u);
            assert!(c.v >= 0.0 && c.v < 64.0, "v={}", c.v);
        }
    }

    #[test]
    fn pixel_rays_project_into_their_pixel() {
        let cfg = ProjectionConfig::desk();
        for row in 0..cfg.height {
            for col in 0..cfg.width {
                let d = cfg.pixel_ray(row, col);
                let c = project_point(&Point3::new(d[0] * 3.0, d[1] * 3.0, d[2] * 3.0), &cfg).unwrap();
                assert_eq!(pixel_of(&c, &cfg), Some((row, col)));
            }
        }
    }

    #[test]
    fn nearer_point_on_ray_wins() {
        let cfg = ProjectionConfig::desk();
        let d = cfg.pixel_ray(10, 40);
        let far = Point3::new(d[0] * 5.0, d[1] * 5.0, d[2] * 5.0);
        let near = Point3::new(d[0] * 2.0, d[1] * 2.0, d[2] * 2.0);
        let img = render(&PointCloud::new(SENSOR_FRAME, vec![far, near]), &cfg);
        assert!((img.ranges.get(10, 40) - 2.0).abs() < 1e-12);
        assert_eq!(*img.index.get(10, 40), 1);
        assert_eq!(img.populated(), 1);
    }

    #[test]
    fn empty_cloud_is_all_sentinel() {
        let img = render(&PointCloud::new(SENSOR_FRAME, vec![]), &ProjectionConfig::desk());
        assert!(img.ranges.data.iter().all(|&r| r == EMPTY_RANGE));
        assert!(img.index.data.iter().all(|&i| i == NO_POINT));
    }

    #[test]
    fn out_of_range_and_fov_are_dropped() {
        let cfg = ProjectionConfig::desk();
        let pts = vec![Point3::new(20.0, 0.0, 0.0), Point3::new(1.0, 0.0, 1.0), Point3::new(3.0, 0.0, 0.0)];
        let img = render(&PointCloud::new(SENSOR_FRAME, pts), &cfg);
        assert_eq!(img.populated(), 1);
        assert_eq!(img.point_pixel[1], NO_PIXEL);
        assert_ne!(img.point_pixel[0], NO_PIXEL);
    }

    #[test]
    fn sphere_reads_constant_range() {
        let cfg = ProjectionConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // uniform over the sphere, restricted to the elevation band in view
        let zmax = 12.5f64.to_radians().sin();
        let pts: Vec<Point3> = (0..40_000)
            .map(|_| {
                let z: f64 = rng.random_range(-zmax..zmax);
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let s = (1.0 - z * z).sqrt();
                Point3::new(4.0 * s * a.cos(), 4.0 * s * a.sin(), 4.0 * z)
            })
            .collect();
        let img = render(&PointCloud::new(SENSOR_FRAME, pts), &cfg);
        assert!(img.populated() > cfg.pixels() / 2);
        for &r in img.ranges.data.iter().filter(|&&r| r != EMPTY_RANGE) {
            assert!((r - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn labels_follow_winner_and_default_outside() {
        let cfg = ProjectionConfig::desk();
        let d = cfg.pixel_ray(5, 7);
        let pts = vec![
            Point3::new(d[0] * 2.0, d[1] * 2.0, d[2] * 2.0),
            Point3::new(d[0] * 6.0, d[1] * 6.0, d[2] * 6.0),
            Point3::new(0.0, 0.0, 3.0),
        ];
        let img = render(&PointCloud::new(SENSOR_FRAME, pts), &cfg);
        let mut labels = Raster::filled(cfg.height, cfg.width, Label::Consistent);
        labels.set(5, 7, Label::Changed);
        let out = backproject_labels(&labels, &img, 3).unwrap();
        assert_eq!(out, vec![Label::Changed, Label::Changed, Label::Consistent]);
        let bad = Raster::filled(2, 2, Label::Consistent);
        assert!(backproject_labels(&bad, &img, 3).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_and_coverage(
            pts in prop::collection::vec((-9.0..9.0f64, -9.0..9.0f64, -2.0..2.0f64), 1..300),
            near in (0.05..0.95f64),
        ) {
            let cfg = ProjectionConfig::desk();
            let cloud = PointCloud::new(SENSOR_FRAME, pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect());
            let img = render(&cloud, &cfg);
            for (flat, &idx) in img.index.data.iter().enumerate() {
                if idx == NO_POINT { continue; }
                let p = &cloud.points()[idx as usize];
                let c = project_point(p, &cfg).unwrap();
                let (row, col) = pixel_of(&c, &cfg).unwrap();
                prop_assert_eq!(row * cfg.width + col, flat);
                prop_assert_eq!(img.ranges.data[flat], c.r);
            }
            // every in-fov in-range point is covered by a populated pixel
            for (i, p) in cloud.points().iter().enumerate() {
                if let Ok(c) = project_point(p, &cfg) {
                    if pixel_of(&c, &cfg).is_some() && c.r <= cfg.max_range {
                        let px = img.point_pixel[i];
                        prop_assert!(px != NO_PIXEL && img.index.data[px as usize] != NO_POINT);
                    }
                }
            }
            // inserting a nearer point on an occupied ray never increases range
            if let Some(flat) = img.index.data.iter().position(|&i| i != NO_POINT) {
                let p = cloud.points()[img.index.data[flat] as usize];
                let mut more = cloud.points().to_vec();
                more.push(Point3::from(p.coords * near));
                let img2 = render(&PointCloud::new(SENSOR_FRAME, more), &cfg);
                prop_assert!(img2.ranges.data[flat] <= img.ranges.data[flat]);
            }
        }
    }
}

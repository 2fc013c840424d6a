//! Nearest-neighbour distance threshold detector.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{PointCloud, SpatialIndex};
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Points farther than this (metres) from the map are Changed.
    pub distance_threshold: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { distance_threshold: 0.3 }
    }
}

impl BaselineConfig {
    pub fn new(distance_threshold: f64) -> Result<Self> {
        if !(distance_threshold > 0.0) || !distance_threshold.is_finite() {
            return invalid(format!("baseline threshold must be positive, got {distance_threshold}"));
        }
        Ok(Self { distance_threshold })
    }
}

pub fn nn_classify(scan: &PointCloud, map: &SpatialIndex, cfg: &BaselineConfig) -> Result<Vec<Label>> {
    Ok(classify_distances(&map.nearest_distances(scan.points())?, cfg.distance_threshold))
}

/// Labels from precomputed nearest-neighbour distances.
pub fn classify_distances(distances: &[f64], threshold: f64) -> Vec<Label> {
    distances.iter().map(|&d| Label::from_bool(d > threshold)).collect()
}

/// Thresholds examined by best-threshold sweeps: 0.05 m to 1.0 m in 0.05 m steps.
pub fn default_sweep() -> Vec<f64> {
    (1..=20).map(|i| i as f64 * 0.05).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point3, WORLD_FRAME};

    #[test]
    fn scan_equal_to_map_is_consistent() {
        let pts: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let cloud = PointCloud::new(WORLD_FRAME, pts.clone());
        let labels = nn_classify(&cloud, &SpatialIndex::from_points(pts), &BaselineConfig::default()).unwrap();
        assert!(labels.iter().all(|l| !l.is_changed()));
    }

    #[test]
    fn isolated_point_is_changed() {
        let map = SpatialIndex::from_points(vec![Point3::origin()]);
        let scan = PointCloud::new(WORLD_FRAME, vec![Point3::new(10.0, 0.0, 0.0)]);
        assert_eq!(nn_classify(&scan, &map, &BaselineConfig::default()).unwrap(), vec![Label::Changed]);
    }

    #[test]
    fn empty_map_and_bad_threshold() {
        let scan = PointCloud::new(WORLD_FRAME, vec![Point3::origin()]);
        assert!(nn_classify(&scan, &SpatialIndex::from_points(vec![]), &BaselineConfig::default()).is_err());
        assert!(BaselineConfig::new(0.0).is_err());
    }
}

//! Per-frame preprocessing shared by training, inference and evaluation.

use serde::{Deserialize, Serialize};

use super::{map_view, Sequence};
use crate::error::{invalid, Result};
use crate::geometry::{
    transform, voxel_downsample, voxel_downsample_with_membership, Point3, PointCloud, RigidTransform, SpatialIndex,
    WORLD_FRAME,
};
use crate::projection::{render, ProjectionConfig, RangeImage};
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    /// Range-image geometry; `max_range` also crops live scans and map views.
    pub projection: ProjectionConfig,
    pub map_voxel: f64,
    pub live_voxel: f64,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            projection: ProjectionConfig::desk(),
            map_voxel: 0.2,
            live_voxel: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub index: usize,
    pub pose: RigidTransform,
    pub odometer: f64,
    /// Downsampled live scan within `max_range`, sensor frame, no intensity.
    pub live: PointCloud,
    /// The same points in the world frame.
    pub live_world: PointCloud,
    /// Downsampled map within `max_range` of the sensor, sensor frame.
    pub map_view: PointCloud,
    pub live_image: RangeImage,
    pub map_image: RangeImage,
    /// Per downsampled point: strict majority of its members' truth.
    pub truth: Vec<Label>,
    /// Nearest-map-point distance per downsampled point.
    pub map_distances: Vec<f64>,
    /// Raw in-range live points (sensor frame) and their truth.
    pub raw: PointCloud,
    pub raw_truth: Vec<Label>,
    /// Downsampled point representing each raw point.
    pub raw_membership: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PreparedSequence {
    pub config: PrepareConfig,
    pub frames: Vec<PreparedFrame>,
    pub taught_path: Vec<[f64; 2]>,
}

/// Crops, downsamples and renders every frame of `seq`.
pub fn prepare(seq: &Sequence, cfg: &PrepareConfig) -> Result<PreparedSequence> {
    cfg.projection.validate()?;
    if seq.map.is_empty() {
        return Err(crate::Error::EmptyMap);
    }
    let map = voxel_downsample(&seq.map, cfg.map_voxel)?;
    let index = SpatialIndex::new(&map);
    let mut frames = Vec::with_capacity(seq.frames.len());
    for f in &seq.frames {
        if f.truth.len() != f.live.len() {
            return invalid(format!("frame {} has {} labels for {} points", f.index, f.truth.len(), f.live.len()));
        }
        let keep: Vec<usize> = f
            .live
            .points()
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                let r = p.coords.norm();
                r > 0.0 && r <= cfg.projection.max_range
            })
            .map(|(i, _)| i)
            .collect();
        let raw = f.live.select(&keep).without_intensity();
        let raw_truth: Vec<Label> = keep.iter().map(|&i| f.truth[i]).collect();
        let ds = voxel_downsample_with_membership(&raw, cfg.live_voxel)?;
        let mut votes = vec![0isize; ds.cloud.len()];
        for (&m, l) in ds.membership.iter().zip(&raw_truth) {
            votes[m] += if l.is_changed() { 1 } else { -1 };
        }
        let truth = votes.iter().map(|&v| Label::from_bool(v > 0)).collect();
        let mut live_world = transform(&ds.cloud, &f.pose);
        live_world.set_frame_id(WORLD_FRAME);
        let map_distances = if live_world.is_empty() {
            Vec::new()
        } else {
            index.nearest_distances(live_world.points())?
        };
        let view = map_view(&map, &f.pose, cfg.projection.max_range);
        frames.push(PreparedFrame {
            index: f.index,
            pose: f.pose.clone(),
            odometer: f.odometer,
            live_image: render(&ds.cloud, &cfg.projection),
            map_image: render(&view, &cfg.projection),
            live: ds.cloud,
            live_world,
            map_view: view,
            truth,
            map_distances,
            raw,
            raw_truth,
            raw_membership: ds.membership,
        });
    }
    Ok(PreparedSequence {
        config: *cfg,
        frames,
        taught_path: seq.taught_path.clone(),
    })
}

impl PreparedFrame {
    /// Sensor position in the world frame.
    pub fn sensor_position(&self) -> Point3 {
        let t = self.pose.translation();
        Point3::new(t.x, t.y, t.z)
    }
}

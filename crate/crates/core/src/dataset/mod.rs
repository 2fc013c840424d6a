//! Synthetic teach-and-repeat sequences with ground truth.
//!
//! A sequence is a world-frame map built from a teach pass without change
//! objects, plus repeat-pass frames recorded every `frame_spacing` metres of
//! travel with change objects inserted and vegetation displaced. Truth for
//! every live point comes from the generator; [`reflective_label`] recovers
//! it from intensity alone when change objects are retroreflective.
//!
//! On disk a sequence directory holds
//!
//! - `map.ply`: world-frame map points;
//! - `frames/NNNN.ply`: sensor-frame live points with intensity;
//! - `poses.csv`: `frame`, the sensor-to-world transform as 12 row-major
//!   `[R | t]` values, `odometer` (metres);
//! - `truth/NNNN.csv`: `index,label` with label 0 = Consistent, 1 = Changed;
//! - `teach_path.csv`: `x,y` vertices of the taught path.

mod generate;
mod io;
mod prepare;
mod raycast;
mod scene;

pub use generate::{generate_sequence, live_in_world};
pub use io::{read_sequence, write_sequence};
pub use prepare::{prepare, PrepareConfig, PreparedFrame, PreparedSequence};
pub use scene::{ChangeObject, PathSpec, SceneSpec, SensorSpec, Solid, VegetationPatch};

use crate::error::{invalid, Result};
use crate::geometry::{transform, PointCloud, RigidTransform, SENSOR_FRAME};
use crate::Label;

/// One repeat-pass scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    /// Sensor-to-world transform.
    pub pose: RigidTransform,
    /// Metres travelled along the repeat path.
    pub odometer: f64,
    /// Sensor-frame points with intensity.
    pub live: PointCloud,
    pub truth: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    /// World-frame map of the permanent scene.
    pub map: PointCloud,
    pub frames: Vec<Frame>,
    /// Taught path vertices (world x, y).
    pub taught_path: Vec<[f64; 2]>,
}

impl Sequence {
    /// Map points within `range` of the frame's sensor, in the sensor frame.
    pub fn map_view(&self, frame: &Frame, range: f64) -> PointCloud {
        map_view(&self.map, &frame.pose, range)
    }
}

pub(crate) fn map_view(map: &PointCloud, pose: &RigidTransform, range: f64) -> PointCloud {
    let t = pose.translation();
    let centre = crate::geometry::Point3::new(t.x, t.y, t.z);
    let near = map.select(&map.indices_within(&centre, range));
    let mut view = transform(&near, &pose.inverse());
    view.set_frame_id(SENSOR_FRAME);
    view
}

/// Two frames `spacing` steps apart.
#[derive(Debug)]
pub struct TemporalBatch<'a, F> {
    pub first: &'a F,
    pub second: &'a F,
    /// Positions of the two frames in the source slice.
    pub indices: (usize, usize),
}

impl<F> Clone for TemporalBatch<'_, F> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<F> Copy for TemporalBatch<'_, F> {}

/// Sliding-window pairs `(i, i + spacing)` for every `i` with a partner.
///
/// A spacing as long as the sequence yields no pairs.
pub fn pair_frames<F>(frames: &[F], spacing: usize) -> Result<Vec<TemporalBatch<'_, F>>> {
    if frames.len() < 2 {
        return invalid(format!("pairing needs at least two frames, got {}", frames.len()));
    }
    if spacing == 0 {
        return invalid("pair spacing must be positive");
    }
    Ok((0..frames.len().saturating_sub(spacing))
        .map(|i| TemporalBatch {
            first: &frames[i],
            second: &frames[i + spacing],
            indices: (i, i + spacing),
        })
        .collect())
}

/// Changed iff intensity ≥ `threshold`.
pub fn reflective_label(cloud: &PointCloud, threshold: f64) -> Result<Vec<Label>> {
    if !(0.0..=1.0).contains(&threshold) {
        return invalid(format!("intensity threshold must lie in [0, 1], got {threshold}"));
    }
    let Some(intensity) = cloud.intensity() else {
        return invalid("cloud has no intensity channel");
    };
    Ok(intensity.iter().map(|&v| Label::from_bool(v >= threshold)).collect())
}

/// Default intensity threshold separating retroreflective returns.
pub const REFLECTIVE_THRESHOLD: f64 = 0.8;

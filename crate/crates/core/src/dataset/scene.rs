//! Scene description read from TOML.
//!
//! ```toml
//! # Ground plane z = 0 over [x_min, x_max] × [y_min, y_max].
//! ground = [-5.0, 30.0, -12.0, 12.0]
//!
//! # Permanent structures, present in the map and in every repeat.
//! [[structures]]
//! shape = "box"            # centre (x, y, z), size (sx, sy, sz), yaw (rad)
//! centre = [10.0, 6.0, 1.0]
//! size = [4.0, 0.5, 2.0]
//! yaw = 0.0
//!
//! [[structures]]
//! shape = "cylinder"       # vertical; centre (x, y), base z, radius, height
//! centre = [6.0, -4.0]
//! radius = 0.3
//! height = 2.5
//!
//! # Clutter patches. Leaves are small spheres; each repeat displaces every
//! # leaf by isotropic Gaussian `jitter` (global, below) and each frame adds
//! # `flutter` on top.
//! [[vegetation]]
//! centre = [8.0, 4.0]      # patch centre (x, y)
//! size = [3.0, 2.0]        # patch extent (x, y)
//! height = [0.0, 1.2]      # leaf centre z range
//! density = 40.0           # leaves per m² of patch footprint
//! leaf_radius = 0.04
//!
//! # Objects added for the repeat pass only.
//! [[changes]]
//! shape = "box"
//! centre = [12.0, 0.5, 0.5]
//! size = [0.5, 0.5, 1.0]
//! reflective = true
//!
//! jitter = 0.05            # per-repeat leaf displacement σ, metres
//! flutter = 0.0            # per-frame leaf displacement σ, metres
//!
//! [path]
//! waypoints = [[0.0, 0.0], [25.0, 0.0]]
//! sensor_height = 0.9
//! frame_spacing = 0.3      # repeat frames, metres of travel
//! teach_spacing = 0.1      # teach (mapping) frames, metres of travel
//! repeat_offset = 0.1      # lateral offset of the repeat pass, metres (left positive)
//!
//! [sensor]
//! height = 32              # rows
//! width = 256              # columns
//! fov_deg = 25.0
//! fov_down_deg = 12.5
//! range = 20.0             # returns beyond this are not recorded
//! range_noise = 0.01       # Gaussian σ on range, metres
//! outlier_rate = 0.0       # probability that a repeat-pass return is a spurious short echo
//! background_intensity = [0.0, 0.4]
//! reflective_intensity = [0.9, 1.0]
//! map_voxel = 0.05         # storage voxel of the teach map
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::projection::ProjectionConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Solid {
    Box {
        centre: [f64; 3],
        size: [f64; 3],
        #[serde(default)]
        yaw: f64,
    },
    Cylinder {
        centre: [f64; 2],
        radius: f64,
        height: f64,
        #[serde(default)]
        base: f64,
    },
}

impl Solid {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Solid::Box { centre, size, yaw } => {
                size.iter().all(|&s| s > 0.0) && centre.iter().chain(size).all(|v| v.is_finite()) && yaw.is_finite()
            }
            Solid::Cylinder {
                centre,
                radius,
                height,
                base,
            } => *radius > 0.0 && *height > 0.0 && centre.iter().chain([radius, height, base]).all(|v| v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("degenerate solid {self:?}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeObject {
    #[serde(flatten)]
    pub solid: Solid,
    #[serde(default = "yes")]
    pub reflective: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VegetationPatch {
    pub centre: [f64; 2],
    pub size: [f64; 2],
    pub height: [f64; 2],
    pub density: f64,
    #[serde(default = "default_leaf_radius")]
    pub leaf_radius: f64,
}

fn default_leaf_radius() -> f64 {
    0.04
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathSpec {
    pub waypoints: Vec<[f64; 2]>,
    pub sensor_height: f64,
    pub frame_spacing: f64,
    pub teach_spacing: f64,
    pub repeat_offset: f64,
}

impl Default for PathSpec {
    fn default() -> Self {
        Self {
            waypoints: Vec::new(),
            sensor_height: 0.9,
            frame_spacing: 0.3,
            teach_spacing: 0.1,
            repeat_offset: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSpec {
    pub height: usize,
    pub width: usize,
    pub fov_deg: f64,
    pub fov_down_deg: f64,
    pub range: f64,
    pub range_noise: f64,
    pub outlier_rate: f64,
    pub background_intensity: [f64; 2],
    pub reflective_intensity: [f64; 2],
    pub map_voxel: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        let p = ProjectionConfig::desk();
        Self {
            height: p.height,
            width: p.width,
            fov_deg: p.fov_deg,
            fov_down_deg: p.fov_down_deg,
            range: 20.0,
            range_noise: 0.01,
            outlier_rate: 0.0,
            background_intensity: [0.0, 0.4],
            reflective_intensity: [0.9, 1.0],
            map_voxel: 0.05,
        }
    }
}

impl SensorSpec {
    /// Ray pattern of the simulated sensor.
    pub fn projection(&self) -> ProjectionConfig {
        ProjectionConfig {
            height: self.height,
            width: self.width,
            fov_deg: self.fov_deg,
            fov_down_deg: self.fov_down_deg,
            max_range: self.range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub ground: [f64; 4],
    #[serde(default)]
    pub structures: Vec<Solid>,
    #[serde(default)]
    pub vegetation: Vec<VegetationPatch>,
    #[serde(default)]
    pub changes: Vec<ChangeObject>,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default)]
    pub flutter: f64,
    pub path: PathSpec,
    #[serde(default)]
    pub sensor: SensorSpec,
}

fn default_jitter() -> f64 {
    0.05
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.ground;
        if !(g[0] < g[1] && g[2] < g[3]) || g.iter().any(|v| !v.is_finite()) {
            return invalid("ground extent must be [x_min, x_max, y_min, y_max] with min < max");
        }
        for s in self.structures.iter().chain(self.changes.iter().map(|c| &c.solid)) {
            s.validate()?;
        }
        for v in &self.vegetation {
            if !(v.density >= 0.0 && v.leaf_radius > 0.0 && v.size[0] > 0.0 && v.size[1] > 0.0 && v.height[0] <= v.height[1]) {
                return invalid(format!("bad vegetation patch {v:?}"));
            }
        }
        if !(self.jitter >= 0.0 && self.flutter >= 0.0) {
            return invalid("jitter and flutter must be non-negative");
        }
        let p = &self.path;
        if p.waypoints.len() < 2 {
            return invalid("path needs at least two waypoints");
        }
        if !(p.frame_spacing > 0.0 && p.teach_spacing > 0.0 && p.sensor_height > 0.0) {
            return invalid("path spacing and sensor height must be positive");
        }
        let s = &self.sensor;
        s.projection().validate()?;
        if !(s.range_noise >= 0.0 && (0.0..=1.0).contains(&s.outlier_rate) && s.map_voxel > 0.0) {
            return invalid("sensor noise, outlier rate or map voxel out of range");
        }
        let range_ok = |r: &[f64; 2]| 0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0;
        if !range_ok(&s.background_intensity) || !range_ok(&s.reflective_intensity) {
            return invalid("intensity ranges must lie in [0, 1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example_parses() {
        let doc = include_str!("scene.rs");
        let start = doc.find("//! ```toml").unwrap();
        let end = doc[start + 10..].find("//! ```").unwrap() + start + 10;
        let text: String = doc[start..end]
            .lines()
            .skip(1)
            .map(|l| l.strip_prefix("//!").unwrap_or(l).strip_prefix(' ').unwrap_or(""))
            .collect::<Vec<_>>()
            .join("\n");
        let spec = SceneSpec::from_toml(&text).unwrap();
        assert_eq!(spec.structures.len(), 2);
        assert!(spec.changes[0].reflective);
        assert_eq!(spec.sensor.height, 32);
        let again = SceneSpec::from_toml(&spec.to_toml()).unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn rejects_degenerate_path() {
        let text = "ground = [0.0, 1.0, 0.0, 1.0]\n[path]\nwaypoints = [[0.0, 0.0]]\n";
        assert!(SceneSpec::from_toml(text).is_err());
    }
}

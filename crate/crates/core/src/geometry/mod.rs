//! Point-cloud primitives shared by every other module.

mod kdtree;
mod ply;
mod voxel;

pub use kdtree::{Neighbour, SpatialIndex};
pub use ply::{read_ply, write_ply};
pub use voxel::{voxel_downsample, voxel_downsample_with_membership, Downsampled};

use nalgebra::{Matrix3, Vector3};

use crate::error::{invalid, Result};

/// A position in metres.
pub type Point3 = nalgebra::Point3<f64>;

/// Frame tag used for clouds expressed in the world (map) frame.
pub const WORLD_FRAME: &str = "world";
/// Frame tag used for clouds expressed in the sensor-aligned frame.
pub const SENSOR_FRAME: &str = "sensor";

/// Positions with an optional per-point intensity channel and a frame tag.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
    intensity: Option<Vec<f64>>,
    frame_id: String,
}

impl PointCloud {
    pub fn new(frame_id: impl Into<String>, points: Vec<Point3>) -> Self {
        Self {
            points,
            intensity: None,
            frame_id: frame_id.into(),
        }
    }

    /// Builds a cloud carrying an intensity channel; the channel must hold
    /// exactly one value per point.
    pub fn with_intensity(
        frame_id: impl Into<String>,
        points: Vec<Point3>,
        intensity: Vec<f64>,
    ) -> Result<Self> {
        if intensity.len() != points.len() {
            return invalid(format!(
                "intensity has {} values for {} points",
                intensity.len(),
                points.len()
            ));
        }
        Ok(Self {
            points,
            intensity: Some(intensity),
            frame_id: frame_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f64]> {
        self.intensity.as_deref()
    }

    pub fn frame_id(&self) -> &str {
        &self.frame_id
    }

    pub fn set_frame_id(&mut self, frame_id: impl Into<String>) {
        self.frame_id = frame_id.into();
    }

    /// Returns a copy with the intensity channel removed.
    pub fn without_intensity(&self) -> Self {
        Self::new(self.frame_id.clone(), self.points.clone())
    }

    /// Sub-cloud made of the given point indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            intensity: self
                .intensity
                .as_ref()
                .map(|inten| indices.iter().map(|&i| inten[i]).collect()),
            frame_id: self.frame_id.clone(),
        }
    }

    /// Indices of the points lying within `radius` of `centre`.
    pub fn indices_within(&self, centre: &Point3, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| (*p - centre).norm_squared() <= r2)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ORTHONORMAL_TOL: f64 = 1e-9;

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates that `rotation` is orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.iter().any(|v| v.abs() > ORTHONORMAL_TOL) {
            return invalid("rotation matrix is not orthonormal");
        }
        if (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return invalid("rotation matrix has determinant != +1");
        }
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return invalid("transform has non-finite entries");
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Rotation about +z by `yaw` radians, then translation.
    pub fn from_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation: Vector3::new(x, y, z),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Yaw angle of the rotation's x axis projected on the ground plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Row-major 3×4 `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Self::new(rotation, Vector3::new(v[3], v[7], v[11]))
    }
}

/// Applies `t` to every point; intensity and point order are preserved.
pub fn transform(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    if t.is_identity() {
        return cloud.clone();
    }
    PointCloud {
        points: cloud.points.iter().map(|p| t.apply(p)).collect(),
        intensity: cloud.intensity.clone(),
        frame_id: cloud.frame_id.clone(),
    }
}

/// Euclidean distance computed as `sqrt(dx² + dy² + dz²)` in that order.
///
/// Every nearest-neighbour code path uses this exact expression so that
/// results can be compared bit for bit.
#[inline]
pub fn distance(a: &Point3, b: &Point3) -> f64 {
    squared_distance(a, b).sqrt()
}

#[inline]
pub(crate) fn squared_distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_is_bit_identical() {
        let cloud = PointCloud::with_intensity(
            SENSOR_FRAME,
            vec![Point3::new(-0.0, 1.5, 1e-300), Point3::new(3.0, -2.0, 7.25)],
            vec![0.1, 0.9],
        )
        .unwrap();
        assert_eq!(transform(&cloud, &RigidTransform::identity()), cloud);
    }

    #[test]
    fn translation_moves_origin() {
        let cloud = PointCloud::new(WORLD_FRAME, vec![Point3::origin()]);
        let out = transform(&cloud, &RigidTransform::from_translation(1.0, 0.0, 0.0));
        assert_eq!(out.points()[0], Point3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let t = RigidTransform::from_yaw(0.0, 0.0, 0.0, FRAC_PI_2);
        let p = t.apply(&Point3::new(1.0, 0.0, 0.0));
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
        let m = Matrix3::new(2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
    }

    #[test]
    fn intensity_length_checked() {
        assert!(PointCloud::with_intensity(WORLD_FRAME, vec![Point3::origin()], vec![]).is_err());
    }

    #[test]
    fn row_major_round_trip() {
        let t = RigidTransform::from_yaw(1.0, -2.0, 0.5, 0.3);
        let back = RigidTransform::from_row_major(&t.to_row_major()).unwrap();
        assert_eq!(back, t);
        assert!((t.yaw() - 0.3).abs() < 1e-15);
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            -10.0..10.0f64,
            -10.0..10.0f64,
            -10.0..10.0f64,
            -3.2..3.2f64,
            -1.5..1.5f64,
        )
            .prop_map(|(x, y, z, yaw, pitch)| {
                let (s, c) = pitch.sin_cos();
                let pitch = RigidTransform::new(
                    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
                    Vector3::zeros(),
                )
                .unwrap();
                RigidTransform::from_yaw(x, y, z, yaw).compose(&pitch)
            })
    }

    proptest! {
        #[test]
        fn preserves_pairwise_distances(
            t in arb_transform(),
            pts in prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64, -5.0..5.0f64), 2..20),
        ) {
            let cloud = PointCloud::new(WORLD_FRAME, pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect());
            let out = transform(&cloud, &t);
            for i in 0..cloud.len() {
                for j in 0..i {
                    let before = distance(&cloud.points()[i], &cloud.points()[j]);
                    let after = distance(&out.points()[i], &out.points()[j]);
                    prop_assert!((before - after).abs() <= 1e-9 * before.max(1.0));
                }
            }
        }

        #[test]
        fn composition_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
            let left = a.compose(&b).compose(&c).to_row_major();
            let right = a.compose(&b.compose(&c)).to_row_major();
            for (l, r) in left.iter().zip(right.iter()) {
                prop_assert!((l - r).abs() < 1e-9);
            }
            let round = a.compose(&a.inverse()).to_row_major();
            let id = RigidTransform::identity().to_row_major();
            for (l, r) in round.iter().zip(id.iter()) {
                prop_assert!((l - r).abs() < 1e-9);
            }
        }
    }
}

//! Voxel-grid downsampling.

use std::collections::HashMap;

use super::{Point3, PointCloud};
use crate::error::{invalid, Result};

/// Output of [`voxel_downsample_with_membership`].
#[derive(Debug, Clone)]
pub struct Downsampled {
    pub cloud: PointCloud,
    /// For each input point, the index of the output point that represents it.
    pub membership: Vec<usize>,
    /// Number of input points merged into each output point.
    pub counts: Vec<usize>,
}

/// Replaces the points of every occupied voxel by their centroid.
///
/// Voxel keys are `floor(coord / voxel)` per axis. Output order follows the
/// first occurrence of each voxel in the input, so the result is
/// deterministic for a fixed input order. Intensity, when present, is
/// averaged the same way.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    voxel_downsample_with_membership(cloud, voxel).map(|d| d.cloud)
}

pub fn voxel_downsample_with_membership(cloud: &PointCloud, voxel: f64) -> Result<Downsampled> {
    if !(voxel > 0.0) || !voxel.is_finite() {
        return invalid(format!("voxel size must be positive, got {voxel}"));
    }
    let mut slots: HashMap<(i64, i64, i64), usize> = HashMap::with_capacity(cloud.len());
    let mut sums: Vec<[f64; 4]> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut membership = Vec::with_capacity(cloud.len());
    let intensity = cloud.intensity();
    for (i, p) in cloud.points().iter().enumerate() {
        let key = (
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        );
        let slot = *slots.entry(key).or_insert_with(|| {
            sums.push([0.0; 4]);
            counts.push(0);
            sums.len() - 1
        });
        let s = &mut sums[slot];
        s[0] += p.x;
        s[1] += p.y;
        s[2] += p.z;
        if let Some(inten) = intensity {
            s[3] += inten[i];
        }
        counts[slot] += 1;
        membership.push(slot);
    }
    let points = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| {
            let c = c as f64;
            Point3::new(s[0] / c, s[1] / c, s[2] / c)
        })
        .collect();
    let out = match intensity {
        Some(_) => {
            let inten = sums.iter().zip(&counts).map(|(s, &c)| s[3] / c as f64).collect();
            PointCloud::with_intensity(cloud.frame_id(), points, inten)?
        }
        None => PointCloud::new(cloud.frame_id(), points),
    };
    Ok(Downsampled {
        cloud: out,
        membership,
        counts,
    })
}

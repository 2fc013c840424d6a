//! Planar obstacle cost maps built from Changed points.
//!
//! A [`CostMap`] is a square grid centred on the robot and aligned with the
//! robot's heading. Costs are binary: a cell is 1 if it lies within the robot
//! radius of a cell containing a Changed point, 0 otherwise. A short queue of
//! recent maps is merged by cellwise maximum after re-registering older maps
//! into the newest one's frame.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::PointCloud;
use crate::pgm;

/// Planar pose of a cost map centre in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn to_world(&self, lx: f64, ly: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (self.x + c * lx - s * ly, self.y + s * lx + c * ly)
    }

    pub fn to_local(&self, wx: f64, wy: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (wx - self.x, wy - self.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostMapConfig {
    /// Cell edge, metres.
    pub cell: f64,
    /// The grid reaches at least this far (metres) from its centre.
    pub half_extent: f64,
}

impl Default for CostMapConfig {
    fn default() -> Self {
        Self {
            cell: 0.1,
            half_extent: 10.0,
        }
    }
}

impl CostMapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell > 0.0 && self.cell.is_finite()) || !(self.half_extent > 0.0 && self.half_extent.is_finite()) {
            return invalid("cost map cell and extent must be positive");
        }
        Ok(())
    }

    /// Cells per side (always odd, so the centre cell sits on the robot).
    pub fn size(&self) -> usize {
        2 * (self.half_extent / self.cell - 1e-9).ceil() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMap {
    pub cell: f64,
    pub size: usize,
    pub origin: Pose2,
    /// Row-major, row = local y index, column = local x index.
    pub data: Vec<f64>,
}

impl CostMap {
    pub fn empty(cfg: &CostMapConfig, origin: Pose2) -> Self {
        let size = cfg.size();
        Self {
            cell: cfg.cell,
            size,
            origin,
            data: vec![0.0; size * size],
        }
    }

    fn centre(&self) -> isize {
        (self.size / 2) as isize
    }

    /// Cell containing a point in the map's local frame.
    pub fn cell_of(&self, lx: f64, ly: f64) -> Option<(usize, usize)> {
        let c = self.centre();
        let col = (lx / self.cell).round() as isize + c;
        let row = (ly / self.cell).round() as isize + c;
        let n = self.size as isize;
        (row >= 0 && row < n && col >= 0 && col < n).then_some((row as usize, col as usize))
    }

    /// Local-frame centre of a cell.
    pub fn cell_centre(&self, row: usize, col: usize) -> (f64, f64) {
        let c = self.centre();
        ((col as isize - c) as f64 * self.cell, (row as isize - c) as f64 * self.cell)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    pub fn occupied(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    /// True when every cell of `self` is at least the matching cell of `other`.
    pub fn covers(&self, other: &CostMap) -> bool {
        self.data.len() == other.data.len() && self.data.iter().zip(&other.data).all(|(a, b)| a >= b)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = (0..self.size)
            .rev()
            .flat_map(|row| (0..self.size).map(move |col| (row, col)))
            .map(|(r, c)| (self.get(r, c) * 255.0).round() as u8)
            .collect();
        pgm::write_pgm8(path, self.size, self.size, &bytes)
    }

    /// Occupied cells as `row,col,x,y,cost` with world-frame cell centres.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "row,col,x,y,cost")?;
        for row in 0..self.size {
            for col in 0..self.size {
                let v = self.get(row, col);
                if v > 0.0 {
                    let (lx, ly) = self.cell_centre(row, col);
                    let (x, y) = self.origin.to_world(lx, ly);
                    writeln!(w, "{row},{col},{x},{y},{v}")?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Marks the cells of `points` (robot-local frame, z ignored) and dilates
/// them by `robot_radius`. Points outside the grid are ignored.
pub fn inflate(points: &PointCloud, robot_radius: f64, cfg: &CostMapConfig, origin: Pose2) -> Result<CostMap> {
    cfg.validate()?;
    if !(robot_radius > 0.0) || !robot_radius.is_finite() {
        return invalid(format!("robot radius must be positive, got {robot_radius}"));
    }
    let mut map = CostMap::empty(cfg, origin);
    let n = map.size;
    let mut marked = vec![false; n * n];
    for p in points.points() {
        if let Some((r, c)) = map.cell_of(p.x, p.y) {
            marked[r * n + c] = true;
        }
    }
    let reach = robot_radius / cfg.cell;
    let limit = (reach * reach + 1e-9).floor() as isize;
    let k = reach.floor() as isize;
    let offsets: Vec<(isize, isize)> = (-k..=k)
        .flat_map(|dy| (-k..=k).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= limit)
        .collect();
    for (idx, _) in marked.iter().enumerate().filter(|(_, &m)| m) {
        let (r, c) = ((idx / n) as isize, (idx % n) as isize);
        for &(dy, dx) in &offsets {
            let (rr, cc) = (r + dy, c + dx);
            if rr >= 0 && cc >= 0 && (rr as usize) < n && (cc as usize) < n {
                map.data[rr as usize * n + cc as usize] = 1.0;
            }
        }
    }
    Ok(map)
}

/// Cellwise maximum of the newest `depth` maps (last element newest), each
/// re-registered into the newest map's frame by nearest-cell lookup.
pub fn queue_merge(queue: &[CostMap], depth: usize) -> Result<CostMap> {
    if depth == 0 {
        return invalid("queue depth must be at least 1");
    }
    let Some(newest) = queue.last() else {
        return invalid("cost-map queue is empty");
    };
    let mut out = newest.clone();
    let start = queue.len().saturating_sub(depth);
    for old in &queue[start..queue.len() - 1] {
        for row in 0..out.size {
            for col in 0..out.size {
                let (lx, ly) = out.cell_centre(row, col);
                let (wx, wy) = out.origin.to_world(lx, ly);
                let (ox, oy) = old.origin.to_local(wx, wy);
                if let Some((r, c)) = old.cell_of(ox, oy) {
                    let v = old.get(r, c);
                    let cell = &mut out.data[row * out.size + col];
                    if v > *cell {
                        *cell = v;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Rolling window of recent cost maps.
#[derive(Debug, Clone)]
pub struct CostMapQueue {
    depth: usize,
    maps: VecDeque<CostMap>,
}

impl CostMapQueue {
    pub const DEFAULT_DEPTH: usize = 5;

    pub fn new(depth: usize) -> Result<Self> {
        if depth == 0 {
            return invalid("queue depth must be at least 1");
        }
        Ok(Self {
            depth,
            maps: VecDeque::with_capacity(depth),
        })
    }

    pub fn push(&mut self, map: CostMap) {
        if self.maps.len() == self.depth {
            self.maps.pop_front();
        }
        self.maps.push_back(map);
    }

    pub fn merged(&self) -> Result<CostMap> {
        let maps: Vec<CostMap> = self.maps.iter().cloned().collect();
        queue_merge(&maps, self.depth)
    }
}

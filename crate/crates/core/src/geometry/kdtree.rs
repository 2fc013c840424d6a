//! Exact k-d tree nearest-neighbour search.

use super::{squared_distance, Point3, PointCloud};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

/// Result of a nearest-neighbour query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbour {
    /// Euclidean distance in metres.
    pub distance: f64,
    /// Index of the minimiser in the indexed cloud.
    pub index: usize,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        dim: u8,
        value: f64,
        left: u32,
        right: u32,
    },
}

/// Immutable k-d tree over a cloud's positions.
///
/// Queries are exact: distances and indices match a brute-force scan, with
/// ties broken towards the lowest point index.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Point3>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl SpatialIndex {
    pub fn new(cloud: &PointCloud) -> Self {
        Self::from_points(cloud.points().to_vec())
    }

    pub fn from_points(points: Vec<Point3>) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            let n = order.len();
            build(&points, &mut order, 0, n, &mut nodes);
        }
        Self {
            points,
            order,
            nodes,
        }
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

    pub fn nearest(&self, query: &Point3) -> Result<Neighbour> {
        if self.points.is_empty() {
            return Err(Error::EmptyMap);
        }
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(0, query, &mut best);
        Ok(Neighbour {
            distance: best.0,
            index: best.1,
        })
    }

    /// Nearest-neighbour distance for each query point.
    pub fn nearest_distances(&self, queries: &[Point3]) -> Result<Vec<f64>> {
        queries
            .iter()
            .map(|q| self.nearest(q).map(|n| n.distance))
            .collect()
    }

    fn search(&self, node: usize, q: &Point3, best: &mut (f64, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &idx in &self.order[start as usize..end as usize] {
                    // Ties are decided on the rounded distance, not its square.
                    let d = squared_distance(&self.points[idx as usize], q).sqrt();
                    let idx = idx as usize;
                    if d < best.0 || (d == best.0 && idx < best.1) {
                        *best = (d, idx);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim as usize] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near as usize, q, best);
                // Slack keeps equidistant candidates reachable for the tie rule.
                if diff.abs() <= best.0 * (1.0 + 1e-12) {
                    self.search(far as usize, q, best);
                }
            }
        }
    }
}

fn build(points: &[Point3], order: &mut [u32], start: usize, end: usize, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    let slice = &mut order[start..end];
    if slice.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: start as u32,
            end: end as u32,
        });
        return id;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in slice.iter() {
        let p = &points[i as usize];
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let dim = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    if hi[dim] - lo[dim] == 0.0 {
        // All points coincide.
        nodes.push(Node::Leaf {
            start: start as u32,
            end: end as u32,
        });
        return id;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points[a as usize][dim].total_cmp(&points[b as usize][dim]));
    let value = points[slice[mid] as usize][dim];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    // left holds coordinates <= value, right holds coordinates >= value
    let left = build(points, order, start, start + mid, nodes);
    let right = build(points, order, start + mid, end, nodes);
    nodes[id as usize] = Node::Split {
        dim: dim as u8,
        value,
        left,
        right,
    };
    id
}

//! Ray casting of the synthetic scene.
//!
//! Every sensor pixel casts one ray through its centre. Solids are found per
//! frame by projecting their bounding spheres into the image and testing only
//! the pixels those spheres cover, so cost scales with what is visible rather
//! than with the scene size.

use std::f64::consts::PI;

use nalgebra::Vector3;

use super::scene::Solid;
use crate::projection::ProjectionConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Shape {
    Box {
        centre: Vector3<f64>,
        half: Vector3<f64>,
        cos: f64,
        sin: f64,
    },
    Cylinder {
        cx: f64,
        cy: f64,
        radius: f64,
        z0: f64,
        z1: f64,
    },
    Sphere {
        centre: Vector3<f64>,
        radius: f64,
    },
}

impl Shape {
    pub fn from_solid(s: &Solid) -> Self {
        match *s {
            Solid::Box { centre, size, yaw } => Shape::Box {
                centre: Vector3::from(centre),
                half: Vector3::from(size) * 0.5,
                cos: yaw.cos(),
                sin: yaw.sin(),
            },
            Solid::Cylinder {
                centre,
                radius,
                height,
                base,
            } => Shape::Cylinder {
                cx: centre[0],
                cy: centre[1],
                radius,
                z0: base,
                z1: base + height,
            },
        }
    }

    pub fn bounding_sphere(&self) -> (Vector3<f64>, f64) {
        match *self {
            Shape::Box { centre, half, .. } => (centre, half.norm()),
            Shape::Cylinder { cx, cy, radius, z0, z1 } => {
                let hh = 0.5 * (z1 - z0);
                (Vector3::new(cx, cy, z0 + hh), (radius * radius + hh * hh).sqrt())
            }
            Shape::Sphere { centre, radius } => (centre, radius),
        }
    }

    /// Smallest positive ray parameter of an intersection (unit `d`).
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match *self {
            Shape::Sphere { centre, radius } => {
                let oc = o - centre;
                let b = oc.dot(d);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [-b - sq, -b + sq].into_iter().find(|&t| t > EPS)
            }
            Shape::Box { centre, half, cos, sin } => {
                // into the box frame (rotate by -yaw)
                let rel = o - centre;
                let lo = Vector3::new(cos * rel.x + sin * rel.y, -sin * rel.x + cos * rel.y, rel.z);
                let ld = Vector3::new(cos * d.x + sin * d.y, -sin * d.x + cos * d.y, d.z);
                let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    if ld[a].abs() < 1e-15 {
                        if lo[a].abs() > half[a] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-half[a] - lo[a]) / ld[a];
                    let t2 = (half[a] - lo[a]) / ld[a];
                    tmin = tmin.max(t1.min(t2));
                    tmax = tmax.min(t1.max(t2));
                }
                if tmax < tmin || tmax <= EPS {
                    return None;
                }
                Some(if tmin > EPS { tmin } else { tmax })
            }
            Shape::Cylinder { cx, cy, radius, z0, z1 } => {
                let mut best: Option<f64> = None;
                let mut take = |t: f64| {
                    if t > EPS && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                let (ox, oy) = (o.x - cx, o.y - cy);
                let a = d.x * d.x + d.y * d.y;
                if a > 1e-15 {
                    let b = ox * d.x + oy * d.y;
                    let c = ox * ox + oy * oy - radius * radius;
                    let disc = b * b - a * c;
                    if disc >= 0.0 {
                        let sq = disc.sqrt();
                        for t in [(-b - sq) / a, (-b + sq) / a] {
                            let z = o.z + t * d.z;
                            if z >= z0 && z <= z1 {
                                take(t);
                            }
                        }
                    }
                }
                if d.z.abs() > 1e-15 {
                    for zc in [z0, z1] {
                        let t = (zc - o.z) / d.z;
                        let (x, y) = (ox + t * d.x, oy + t * d.y);
                        if x * x + y * y <= radius * radius {
                            take(t);
                        }
                    }
                }
                best
            }
        }
    }
}

/// Nearest intersection per pixel: `(t, body)` with `body = None` for ground.
pub(crate) type HitImage = Vec<Option<(f64, Option<usize>)>>;

pub(crate) struct Caster<'a> {
    pub proj: &'a ProjectionConfig,
    /// Unit ray directions in the sensor frame, row-major.
    pub rays: Vec<Vector3<f64>>,
    pub ground: [f64; 4],
    pub range: f64,
}

impl<'a> Caster<'a> {
    pub fn new(proj: &'a ProjectionConfig, ground: [f64; 4], range: f64) -> Self {
        let rays = (0..proj.height)
            .flat_map(|r| (0..proj.width).map(move |c| (r, c)))
            .map(|(r, c)| Vector3::from(proj.pixel_ray(r, c)))
            .collect();
        Self {
            proj,
            rays,
            ground,
            range,
        }
    }

    /// Casts all rays from `origin` with sensor heading `yaw` against the
    /// ground and `bodies`.
    pub fn cast(&self, origin: &Vector3<f64>, yaw: f64, bodies: &[Shape]) -> HitImage {
        let (h, w) = (self.proj.height, self.proj.width);
        let (s, c) = yaw.sin_cos();
        let to_world = |d: &Vector3<f64>| Vector3::new(c * d.x - s * d.y, s * d.x + c * d.y, d.z);
        let mut hits: HitImage = vec![None; h * w];
        let g = &self.ground;
        for (px, d) in self.rays.iter().enumerate() {
            let dw = to_world(d);
            if dw.z < -1e-12 {
                let t = -origin.z / dw.z;
                let (x, y) = (origin.x + t * dw.x, origin.y + t * dw.y);
                if t <= self.range && x >= g[0] && x <= g[1] && y >= g[2] && y <= g[3] {
                    hits[px] = Some((t, None));
                }
            }
        }
        for (bi, body) in bodies.iter().enumerate() {
            let (centre, radius) = body.bounding_sphere();
            let rel = centre - origin;
            let dist = rel.norm();
            if dist - radius > self.range {
                continue;
            }
            // bounding-sphere centre in the sensor frame
            let v = Vector3::new(c * rel.x + s * rel.y, -s * rel.x + c * rel.y, rel.z);
            let Some((rows, cols)) = self.window(&v, dist, radius) else {
                continue;
            };
            for row in rows.0..=rows.1 {
                for k in 0..cols.1 {
                    let col = (cols.0 + k) % w;
                    let px = row * w + col;
                    let dw = to_world(&self.rays[px]);
                    if let Some(t) = body.intersect(origin, &dw) {
                        if t <= self.range && hits[px].is_none_or(|(bt, _)| t < bt) {
                            hits[px] = Some((t, Some(bi)));
                        }
                    }
                }
            }
        }
        hits
    }

    /// Pixel rows `(first, last)` and columns `(first, count)` whose rays
    /// may hit a sphere of `radius` centred at sensor-frame `v`.
    fn window(&self, v: &Vector3<f64>, dist: f64, radius: f64) -> Option<((usize, usize), (usize, usize))> {
        let (h, w) = (self.proj.height, self.proj.width);
        let fov = self.proj.fov_deg.to_radians();
        let fd = self.proj.fov_down_deg.to_radians();
        let row_of = |el: f64| (1.0 - (el + fd) / fov) * h as f64;
        if dist <= radius * 1.0001 {
            return Some(((0, h - 1), (0, w)));
        }
        let alpha = (radius / dist).asin();
        let el = (v.z / dist).asin();
        let (el_lo, el_hi) = (el - alpha, el + alpha);
        let (top, bottom) = (row_of(el_hi), row_of(el_lo));
        if bottom < 0.0 || top >= h as f64 {
            return None;
        }
        let rows = ((top.floor().max(0.0)) as usize, (bottom.floor() as usize).min(h - 1));
        let max_abs_el = el_lo.clamp(-fd, fov - fd).abs().max(el_hi.clamp(-fd, fov - fd).abs());
        let cos_el = max_abs_el.cos();
        let sin_a = alpha.sin();
        if cos_el <= sin_a {
            return Some((rows, (0, w)));
        }
        let beta = (sin_a / cos_el).asin();
        let az = v.y.atan2(v.x);
        let col_of = |a: f64| 0.5 * (1.0 - a / PI) * w as f64;
        let first = col_of(az + beta).floor() as isize - 1;
        let last = col_of(az - beta).floor() as isize + 1;
        let count = (last - first + 1) as usize;
        if count >= w {
            return Some((rows, (0, w)));
        }
        Some((rows, (first.rem_euclid(w as isize) as usize, count)))
    }
}

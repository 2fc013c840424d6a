//! Teach-and-repeat sequence synthesis.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::raycast::{Caster, Shape};
use super::scene::SceneSpec;
use super::{Frame, Sequence};
use crate::error::{invalid, Result};
use crate::geometry::{transform, voxel_downsample, Point3, PointCloud, RigidTransform, SENSOR_FRAME, WORLD_FRAME};
use crate::Label;

const LEAVES_STREAM: u64 = 1;
const TEACH_STREAM: u64 = 2;
const REPEAT_STREAM: u64 = 3;

/// Sensor stations along a polyline.
#[derive(Debug, Clone)]
pub(crate) struct Polyline {
    pts: Vec<[f64; 2]>,
    cum: Vec<f64>,
}

impl Polyline {
    pub fn new(pts: &[[f64; 2]]) -> Self {
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            let l = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            cum.push(cum.last().unwrap() + l);
        }
        Self { pts: pts.to_vec(), cum }
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Position and heading at arc length `s`, shifted `lateral` metres to the left.
    pub fn at(&self, s: f64, lateral: f64) -> (f64, f64, f64) {
        let mut seg = 0;
        while seg + 2 < self.cum.len() && self.cum[seg + 1] <= s {
            seg += 1;
        }
        let (a, b) = (self.pts[seg], self.pts[seg + 1]);
        let len = self.cum[seg + 1] - self.cum[seg];
        let f = if len > 0.0 { ((s - self.cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let yaw = (b[1] - a[1]).atan2(b[0] - a[0]);
        let (x, y) = (a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]));
        (x - lateral * yaw.sin(), y + lateral * yaw.cos(), yaw)
    }

    pub fn stations(&self, spacing: f64) -> Vec<f64> {
        let n = (self.length() / spacing + 1e-9).floor() as usize;
        (0..=n).map(|k| k as f64 * spacing).collect()
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Material {
    Background,
    Change { reflective: bool },
}

struct World {
    static_bodies: Vec<Shape>,
    leaves: Vec<(Vector3<f64>, f64)>,
    changes: Vec<(Shape, bool)>,
}

fn build_world(spec: &SceneSpec, seed: u64) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(LEAVES_STREAM);
    let mut leaves = Vec::new();
    for v in &spec.vegetation {
        let n = (v.density * v.size[0] * v.size[1]).round() as usize;
        for _ in 0..n {
            let x = v.centre[0] + (rng.random::<f64>() - 0.5) * v.size[0];
            let y = v.centre[1] + (rng.random::<f64>() - 0.5) * v.size[1];
            let z = v.height[0] + rng.random::<f64>() * (v.height[1] - v.height[0]);
            leaves.push((Vector3::new(x, y, z), v.leaf_radius));
        }
    }
    World {
        static_bodies: spec.structures.iter().map(Shape::from_solid).collect(),
        leaves,
        changes: spec.changes.iter().map(|c| (Shape::from_solid(&c.solid), c.reflective)).collect(),
    }
}

struct Scan {
    points: Vec<Point3>,
    intensity: Vec<f64>,
    truth: Vec<Label>,
}

struct Sampler<'a> {
    spec: &'a SceneSpec,
    caster: Caster<'a>,
    noise: Normal<f64>,
}

impl Sampler<'_> {
    fn scan(
        &self,
        rng: &mut ChaCha8Rng,
        origin: &Vector3<f64>,
        yaw: f64,
        bodies: &[Shape],
        materials: &[Material],
        outlier_rate: f64,
    ) -> Scan {
        let s = &self.spec.sensor;
        let hits = self.caster.cast(origin, yaw, bodies);
        let mut out = Scan {
            points: Vec::new(),
            intensity: Vec::new(),
            truth: Vec::new(),
        };
        let uniform = |rng: &mut ChaCha8Rng, r: [f64; 2]| r[0] + rng.random::<f64>() * (r[1] - r[0]);
        for (px, hit) in hits.iter().enumerate() {
            let Some((t, body)) = *hit else {
                continue;
            };
            let material = body.map_or(Material::Background, |b| materials[b]);
            let d = &self.caster.rays[px];
            if outlier_rate > 0.0 && rng.random::<f64>() < outlier_rate {
                // spurious short echo somewhere along the ray
                let r = 0.5 + rng.random::<f64>() * (t - 0.5).max(0.0);
                out.points.push(Point3::from(d * r));
                out.intensity.push(uniform(rng, s.background_intensity));
                out.truth.push(Label::Consistent);
                continue;
            }
            let r = (t + self.noise.sample(rng)).max(0.05);
            out.points.push(Point3::from(d * r));
            let (inten, label) = match material {
                Material::Background => (uniform(rng, s.background_intensity), Label::Consistent),
                Material::Change { reflective } => {
                    let range = if reflective { s.reflective_intensity } else { s.background_intensity };
                    (uniform(rng, range), Label::Changed)
                }
            };
            out.intensity.push(inten);
            out.truth.push(label);
        }
        out
    }
}

/// Runs the teach pass (map) and the repeat pass (frames) over the scene.
///
/// Each stop dithers the sensor heading by up to half a column so that
/// successive scans do not resample identical directions.
pub fn generate_sequence(spec: &SceneSpec, seed: u64) -> Result<Sequence> {
    spec.validate()?;
    let path = Polyline::new(&spec.path.waypoints);
    if !(path.length() > 0.0) {
        return invalid("sensor path has zero length");
    }
    let world = build_world(spec, seed);
    let proj = spec.sensor.projection();
    let sampler = Sampler {
        spec,
        caster: Caster::new(&proj, spec.ground, spec.sensor.range),
        noise: Normal::new(0.0, spec.sensor.range_noise).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?,
    };
    let half_col = std::f64::consts::PI / proj.width as f64;
    let h = spec.path.sensor_height;

    // teach: permanent scene, leaves at rest, no spurious echoes
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TEACH_STREAM);
    let mut bodies = world.static_bodies.clone();
    bodies.extend(world.leaves.iter().map(|&(c, r)| Shape::Sphere { centre: c, radius: r }));
    let materials = vec![Material::Background; bodies.len()];
    let mut map_points = Vec::new();
    for s in path.stations(spec.path.teach_spacing) {
        let (x, y, heading) = path.at(s, 0.0);
        let yaw = heading + (rng.random::<f64>() * 2.0 - 1.0) * half_col;
        let scan = sampler.scan(&mut rng, &Vector3::new(x, y, h), yaw, &bodies, &materials, 0.0);
        let pose = RigidTransform::from_yaw(x, y, h, yaw);
        map_points.extend(scan.points.iter().map(|p| pose.apply(p)));
    }
    let map = voxel_downsample(&PointCloud::new(WORLD_FRAME, map_points), spec.sensor.map_voxel)?;

    // repeat: leaves displaced once for the pass, fluttering per frame, change objects present
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(REPEAT_STREAM);
    let jitter = Normal::new(0.0, spec.jitter).expect("validated jitter");
    let flutter = Normal::new(0.0, spec.flutter).expect("validated flutter");
    let displaced: Vec<(Vector3<f64>, f64)> = world
        .leaves
        .iter()
        .map(|&(c, r)| {
            let off = Vector3::new(jitter.sample(&mut rng), jitter.sample(&mut rng), jitter.sample(&mut rng));
            (c + off, r)
        })
        .collect();
    let n_static = world.static_bodies.len();
    let mut materials = vec![Material::Background; n_static + displaced.len()];
    materials.extend(world.changes.iter().map(|&(_, reflective)| Material::Change { reflective }));

    let mut frames = Vec::new();
    for (index, s) in path.stations(spec.path.frame_spacing).into_iter().enumerate() {
        let (x, y, heading) = path.at(s, spec.path.repeat_offset);
        let yaw = heading + (rng.random::<f64>() * 2.0 - 1.0) * half_col;
        let mut bodies = world.static_bodies.clone();
        for &(c, r) in &displaced {
            let centre = if spec.flutter > 0.0 {
                c + Vector3::new(flutter.sample(&mut rng), flutter.sample(&mut rng), flutter.sample(&mut rng))
            } else {
                c
            };
            bodies.push(Shape::Sphere { centre, radius: r });
        }
        bodies.extend(world.changes.iter().map(|&(shape, _)| shape));
        let scan = sampler.scan(&mut rng, &Vector3::new(x, y, h), yaw, &bodies, &materials, spec.sensor.outlier_rate);
        frames.push(Frame {
            index,
            pose: RigidTransform::from_yaw(x, y, h, yaw),
            odometer: s,
            live: PointCloud::with_intensity(SENSOR_FRAME, scan.points, scan.intensity)?,
            truth: scan.truth,
        });
    }
    Ok(Sequence {
        map: map.without_intensity(),
        frames,
        taught_path: spec.path.waypoints.clone(),
    })
}

/// Live points of `frame` in the world frame.
pub fn live_in_world(frame: &Frame) -> PointCloud {
    let mut c = transform(&frame.live, &frame.pose);
    c.set_frame_id(WORLD_FRAME);
    c
}

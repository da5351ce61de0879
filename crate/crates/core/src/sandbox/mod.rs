//! Procedural scene generation: primitive surfaces moved by rigid motions.

mod io;

pub use io::{read_dataset, write_dataset, DatasetManifest, SampleRecord, FORMAT_NAME, FORMAT_VERSION};

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{FlowField, Mechanism, PointCloud, SceneMeta, ScenePair};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Attempts per object before placement gives up.
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    /// Unit sphere.
    Sphere,
    /// Cube of side 2.
    Box,
    /// Radius 1, height 2, with caps.
    Cylinder,
    /// One of the above, drawn per object.
    Mixed,
}

impl ShapeFamily {
    const CONCRETE: [ShapeFamily; 3] = [ShapeFamily::Sphere, ShapeFamily::Box, ShapeFamily::Cylinder];

    /// Radius of the smallest origin-centred ball holding the unit-scale shape.
    pub fn bounding_radius(self) -> f64 {
        match self {
            ShapeFamily::Sphere => 1.0,
            ShapeFamily::Box | ShapeFamily::Mixed => 3f64.sqrt(),
            ShapeFamily::Cylinder => 2f64.sqrt(),
        }
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sphere" => Ok(ShapeFamily::Sphere),
            "box" | "cube" => Ok(ShapeFamily::Box),
            "cylinder" => Ok(ShapeFamily::Cylinder),
            "mixed" => Ok(ShapeFamily::Mixed),
            other => Err(Error::config(format!("unknown shape family `{other}`"))),
        }
    }
}

/// Rotation about the object centre followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMotion {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidMotion {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rodrigues rotation about a unit `axis`.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64, translation: [f64; 3]) -> Self {
        let [x, y, z] = axis;
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Self {
            rotation: [
                [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
                [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
                [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
            ],
            translation,
        }
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }

    /// `max |RᵀR − I|` over entries.
    pub fn orthonormality_residual(&self) -> f64 {
        let r = &self.rotation;
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        let r = &self.rotation;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionBounds {
    /// Largest rotation angle in radians.
    pub max_rotation: f64,
    /// Largest translation length in meters.
    pub max_translation: f64,
}

impl Default for MotionBounds {
    fn default() -> Self {
        Self {
            max_rotation: 30f64.to_radians(),
            max_translation: 0.5,
        }
    }
}

/// Everything needed to generate one scene pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub n_objects: usize,
    pub points_per_cloud: usize,
    pub mechanism: Mechanism,
    pub shape_family: ShapeFamily,
    pub motion: MotionBounds,
    /// Side of the cube the objects are placed in, meters.
    pub workspace: f64,
    /// Range of the uniform object scale factor.
    pub object_scale: (f64, f64),
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_objects: 1,
            points_per_cloud: 256,
            mechanism: Mechanism::Resampling,
            shape_family: ShapeFamily::Mixed,
            motion: MotionBounds::default(),
            workspace: 4.0,
            object_scale: (0.25, 0.5),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_objects == 0 {
            return Err(Error::config("a scene needs at least one object"));
        }
        if self.points_per_cloud < self.n_objects {
            return Err(Error::config(format!(
                "{} points cannot cover {} objects",
                self.points_per_cloud, self.n_objects
            )));
        }
        let MotionBounds {
            max_rotation,
            max_translation,
        } = self.motion;
        if !(max_rotation >= 0.0 && max_translation >= 0.0)
            || !max_rotation.is_finite()
            || !max_translation.is_finite()
        {
            return Err(Error::config("motion bounds must be finite and nonnegative"));
        }
        if !(self.workspace > 0.0 && self.workspace.is_finite()) {
            return Err(Error::config("workspace side must be positive"));
        }
        let (lo, hi) = self.object_scale;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::config("object scale range must satisfy 0 < min <= max"));
        }
        Ok(())
    }

    /// Frame-1 point count per object: an even split with the remainder on the first object.
    pub fn object_sizes(&self) -> Vec<usize> {
        let base = self.points_per_cloud / self.n_objects;
        let mut sizes = vec![base; self.n_objects];
        sizes[0] += self.points_per_cloud % self.n_objects;
        sizes
    }
}

/// SplitMix64 step, used to derive independent seeds from `(seed, tag)`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng_for(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

fn shape_points(family: ShapeFamily, n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let family = match family {
        ShapeFamily::Mixed => ShapeFamily::CONCRETE[rng.gen_range(0..3)],
        f => f,
    };
    (0..n)
        .map(|_| match family {
            ShapeFamily::Sphere => {
                let z: f64 = rng.gen_range(-1.0..=1.0);
                let phi = rng.gen_range(0.0..2.0 * PI);
                let r = (1.0 - z * z).max(0.0).sqrt();
                let v = [r * phi.cos(), r * phi.sin(), z];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                v.map(|c| c / norm)
            }
            ShapeFamily::Box => {
                let face = rng.gen_range(0..6);
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut v = [0; 3].map(|_| rng.gen_range(-1.0..=1.0));
                v[axis] = sign;
                v
            }
            ShapeFamily::Cylinder => {
                // lateral area 4π, caps 2π together
                if rng.gen_bool(2.0 / 3.0) {
                    let phi = rng.gen_range(0.0..2.0 * PI);
                    [phi.cos(), phi.sin(), rng.gen_range(-1.0..=1.0)]
                } else {
                    let phi = rng.gen_range(0.0..2.0 * PI);
                    let r = rng.gen_range(0.0f64..=1.0).sqrt();
                    let z = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    [r * phi.cos(), r * phi.sin(), z]
                }
            }
            ShapeFamily::Mixed => unreachable!(),
        })
        .collect()
}

/// Points uniformly distributed on a unit-scale primitive centred at the origin.
pub fn sample_shape<T: Scalar>(family: ShapeFamily, n_points: usize, seed: u64) -> Result<PointCloud<T>> {
    if n_points == 0 {
        return Err(Error::contract("sample_shape needs n_points >= 1"));
    }
    let mut rng = rng_for(seed, 0);
    let pts = shape_points(family, n_points, &mut rng);
    PointCloud::new(pts.into_iter().map(|p| p.map(T::of)).collect())
}

/// Random axis, angle uniform in `[0, max_rotation]`, translation uniform in the ball.
pub fn sample_motion(bounds: &MotionBounds, seed: u64) -> RigidMotion {
    let mut rng = rng_for(seed, 1);
    motion_from_rng(bounds, &mut rng)
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

fn motion_from_rng(bounds: &MotionBounds, rng: &mut ChaCha8Rng) -> RigidMotion {
    let axis = unit_vector(rng);
    let angle = bounds.max_rotation * rng.gen::<f64>();
    let dir = unit_vector(rng);
    let radius = bounds.max_translation * rng.gen::<f64>().cbrt();
    let translation = dir.map(|d| d * radius);
    if angle == 0.0 {
        RigidMotion::translation(translation)
    } else {
        RigidMotion::from_axis_angle(axis, angle, translation)
    }
}

struct PlacedObject {
    family: ShapeFamily,
    scale: f64,
    centre: [f64; 3],
}

fn place_objects(spec: &SceneSpec) -> Result<Vec<PlacedObject>> {
    let mut rng = rng_for(spec.seed, 2);
    let half = spec.workspace / 2.0;
    let mut placed: Vec<(PlacedObject, f64)> = Vec::new();
    for _ in 0..spec.n_objects {
        let family = match spec.shape_family {
            ShapeFamily::Mixed => ShapeFamily::CONCRETE[rng.gen_range(0..3)],
            f => f,
        };
        let (lo, hi) = spec.object_scale;
        let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let radius = scale * family.bounding_radius();
        let room = half - radius;
        if room < 0.0 {
            return Err(Error::Generation {
                seed: spec.seed,
                reason: format!("object of radius {radius:.3} does not fit the workspace"),
            });
        }
        let mut ok = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let centre = [0; 3].map(|_| if room > 0.0 { rng.gen_range(-room..=room) } else { 0.0 });
            let clear = placed.iter().all(|(o, r)| {
                let d: f64 = (0..3).map(|k| (o.centre[k] - centre[k]).powi(2)).sum();
                d.sqrt() > r + radius
            });
            if clear {
                ok = Some(centre);
                break;
            }
        }
        let Some(centre) = ok else {
            return Err(Error::Generation {
                seed: spec.seed,
                reason: format!(
                    "could not place object {} without overlap after {PLACEMENT_ATTEMPTS} attempts",
                    placed.len()
                ),
            });
        };
        placed.push((PlacedObject { family, scale, centre }, radius));
    }
    Ok(placed.into_iter().map(|(o, _)| o).collect())
}

/// Generates a pair with motions drawn from `spec.motion`.
pub fn generate_pair<T: Scalar>(spec: &SceneSpec) -> Result<ScenePair<T>> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, 3);
    let motions: Vec<RigidMotion> = (0..spec.n_objects)
        .map(|_| motion_from_rng(&spec.motion, &mut rng))
        .collect();
    generate_pair_with_motions(spec, &motions)
}

/// Generates a pair with one prescribed motion per object; `spec.motion` is ignored.
pub fn generate_pair_with_motions<T: Scalar>(
    spec: &SceneSpec,
    motions: &[RigidMotion],
) -> Result<ScenePair<T>> {
    spec.validate()?;
    if motions.len() != spec.n_objects {
        return Err(Error::contract(format!(
            "{} motions given for {} objects",
            motions.len(),
            spec.n_objects
        )));
    }
    let objects = place_objects(spec)?;
    let sizes = spec.object_sizes();

    let mut before = Vec::with_capacity(spec.points_per_cloud);
    let mut after = Vec::with_capacity(spec.points_per_cloud);
    let mut resampled = Vec::new();
    for (k, ((obj, motion), &n)) in objects.iter().zip(motions).zip(&sizes).enumerate() {
        let k = k as u64;
        let local = shape_points(obj.family, n, &mut rng_for(spec.seed, 100 + k));
        for x in &local {
            let (p, q) = place_and_move(obj, motion, *x);
            before.push(p);
            after.push(q);
        }
        if spec.mechanism == Mechanism::Resampling {
            let fresh = shape_points(obj.family, n, &mut rng_for(spec.seed, 200 + k));
            resampled.extend(fresh.iter().map(|x| place_and_move(obj, motion, *x).1));
        }
    }

    let quantum = exact_grid::<T>(before.iter().chain(&after).chain(&resampled));
    let snap = |p: &[f64; 3]| p.map(|c| T::of((c / quantum).round() * quantum));
    let frame1: Vec<[T; 3]> = before.iter().map(snap).collect();
    let moved: Vec<[T; 3]> = after.iter().map(snap).collect();
    let flow: Vec<[T; 3]> = frame1
        .iter()
        .zip(&moved)
        .map(|(p, q)| [q[0] - p[0], q[1] - p[1], q[2] - p[2]])
        .collect();
    let frame2 = match spec.mechanism {
        Mechanism::Correspondence => moved,
        Mechanism::Resampling => resampled.iter().map(snap).collect(),
    };

    ScenePair::new(
        PointCloud::new(frame1)?,
        PointCloud::new(frame2)?,
        FlowField::new(flow)?,
        SceneMeta {
            mechanism: spec.mechanism,
            n_objects: spec.n_objects,
            seed: spec.seed,
            object_sizes: sizes,
        },
    )
}

fn place_and_move(obj: &PlacedObject, motion: &RigidMotion, x: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let body = x.map(|c| c * obj.scale);
    let turned = motion.rotate(body);
    let p = [0, 1, 2].map(|d| body[d] + obj.centre[d]);
    let q = [0, 1, 2].map(|d| turned[d] + obj.centre[d] + motion.translation[d]);
    (p, q)
}

/// Grid spacing on which every coordinate, and every difference of two
/// coordinates, is exactly representable in `T`. Snapping to it makes
/// `frame1 + flow == frame2` and `frame2 - frame1 == flow` hold without rounding.
fn exact_grid<'a, T: Scalar>(points: impl Iterator<Item = &'a [f64; 3]>) -> f64 {
    let max_abs = points
        .flat_map(|p| p.iter())
        .fold(1.0f64, |m, c| m.max(c.abs()));
    let exponent = max_abs.log2().ceil() as i32;
    // epsilon = 2^(1 - mantissa bits)
    let mantissa_bits = 1 - T::epsilon().f64().log2().round() as i32;
    2f64.powi(exponent + 2 - mantissa_bits)
}

/// `count` pairs whose seeds derive from `(base_seed, split, index)`.
pub fn generate_dataset<T: Scalar>(
    template: &SceneSpec,
    count: usize,
    base_seed: u64,
    split: u64,
) -> Result<Vec<ScenePair<T>>> {
    (0..count)
        .map(|i| {
            let spec = SceneSpec {
                seed: derive_seed(derive_seed(base_seed, split), i as u64),
                ..template.clone()
            };
            generate_pair(&spec)
        })
        .collect()
}

//! Point clouds, flow fields and scene pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Point<T> = [T; 3];

/// An unordered set of 3D points in meters. Never empty, always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    points: Vec<Point<T>>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Vec<Point<T>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::contract("point cloud must hold at least one point"));
        }
        if !all_finite(&points) {
            return Err(Error::NonFinite("point cloud coordinates".into()));
        }
        Ok(Self { points })
    }

    pub fn from_flat(flat: &[T]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::contract(format!(
                "flat coordinate buffer of length {} is not a multiple of 3",
                flat.len()
            )));
        }
        Self::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> &[Point<T>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point<T>> {
        self.points
    }

    pub fn flat(&self) -> Vec<T> {
        self.points.iter().flatten().copied().collect()
    }

    /// Mean point, accumulated in double precision.
    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0f64; 3];
        for p in &self.points {
            for d in 0..3 {
                c[d] += p[d].f64();
            }
        }
        let n = self.points.len() as f64;
        c.map(|v| v / n)
    }

    /// `out[i] = self[perm[i]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            points: perm.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.points[i]).collect())
    }

    pub fn translated(&self, offset: [T; 3]) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> PointCloud<U> {
        PointCloud {
            points: self.points.iter().map(|p| cast_point(*p)).collect(),
        }
    }
}

/// Per-point displacement vectors attached to a frame-1 cloud of the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField<T> {
    vectors: Vec<Point<T>>,
}

impl<T: Scalar> FlowField<T> {
    pub fn new(vectors: Vec<Point<T>>) -> Result<Self> {
        if !all_finite(&vectors) {
            return Err(Error::NonFinite("flow vectors".into()));
        }
        Ok(Self { vectors })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            vectors: vec![[T::zero(); 3]; n],
        }
    }

    pub fn from_flat(flat: &[T]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::contract("flat flow buffer is not a multiple of 3"));
        }
        Self::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Point<T>] {
        &self.vectors
    }

    pub fn flat(&self) -> Vec<T> {
        self.vectors.iter().flatten().copied().collect()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            vectors: perm.iter().map(|&i| self.vectors[i]).collect(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            vectors: indices.iter().map(|&i| self.vectors[i]).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> FlowField<U> {
        FlowField {
            vectors: self.vectors.iter().map(|p| cast_point(*p)).collect(),
        }
    }

    pub fn check_bound_to(&self, cloud: &PointCloud<T>) -> Result<()> {
        if self.len() != cloud.len() {
            return Err(Error::contract(format!(
                "flow field has {} vectors but its cloud has {} points",
                self.len(),
                cloud.len()
            )));
        }
        Ok(())
    }
}

/// How the second frame of a pair was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    /// Frame 2 is frame 1 moved point-for-point.
    Correspondence,
    /// Frame 2 is a fresh sampling of the moved scene.
    Resampling,
}

impl Mechanism {
    pub fn tag(self) -> char {
        match self {
            Mechanism::Correspondence => 'C',
            Mechanism::Resampling => 'R',
        }
    }
}

impl std::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "correspondence" | "c" => Ok(Mechanism::Correspondence),
            "resampling" | "re-sampling" | "r" => Ok(Mechanism::Resampling),
            other => Err(Error::config(format!("unknown mechanism `{other}`"))),
        }
    }
}

/// Generation record carried with every pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub mechanism: Mechanism,
    pub n_objects: usize,
    pub seed: u64,
    /// Frame-1 point count per object; objects occupy consecutive index ranges.
    pub object_sizes: Vec<usize>,
}

/// Two consecutive frames with ground-truth flow bound to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair<T> {
    pub frame1: PointCloud<T>,
    pub frame2: PointCloud<T>,
    pub gt_flow: FlowField<T>,
    pub meta: SceneMeta,
}

impl<T: Scalar> ScenePair<T> {
    pub fn new(
        frame1: PointCloud<T>,
        frame2: PointCloud<T>,
        gt_flow: FlowField<T>,
        meta: SceneMeta,
    ) -> Result<Self> {
        gt_flow.check_bound_to(&frame1)?;
        if meta.mechanism == Mechanism::Correspondence && frame2.len() != frame1.len() {
            return Err(Error::contract(
                "correspondence pairs need equally sized frames",
            ));
        }
        Ok(Self {
            frame1,
            frame2,
            gt_flow,
            meta,
        })
    }

    pub fn cast<U: Scalar>(&self) -> ScenePair<U> {
        ScenePair {
            frame1: self.frame1.cast(),
            frame2: self.frame2.cast(),
            gt_flow: self.gt_flow.cast(),
            meta: self.meta.clone(),
        }
    }
}

fn cast_point<T: Scalar, U: Scalar>(p: Point<T>) -> Point<U> {
    p.map(|v| U::of(v.f64()))
}

fn all_finite<T: Scalar>(points: &[Point<T>]) -> bool {
    points.iter().flatten().all(|v| v.is_finite())
}

//! Cloud embedder: set-abstraction stages with mean pooling followed by a
//! fully connected head. Produces one pooled vector per depth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{ball_query, farthest_point_sample};
use crate::graph::{Graph, Var};
use crate::nn::{Activation, Mlp, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// One set-abstraction stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaStage {
    /// Farthest-point centroids; `None` groups the whole cloud around the origin.
    pub centroids: Option<usize>,
    /// Ball-query radius in meters.
    pub radius: f64,
    /// Keep at most this many of the closest neighbours per ball.
    #[serde(default)]
    pub max_neighbors: Option<usize>,
    /// Output widths of the shared per-point layers.
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub stages: Vec<SaStage>,
    /// Fully connected head; the last entry is the dimension of the deepest level.
    pub head_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for EmbedderConfig {
    /// Desk-scale network: three stages and a 256-wide final vector.
    fn default() -> Self {
        Self {
            stages: vec![
                SaStage { centroids: Some(32), radius: 0.4, max_neighbors: None, widths: vec![16, 32] },
                SaStage { centroids: Some(8), radius: 0.8, max_neighbors: None, widths: vec![64] },
                SaStage { centroids: None, radius: 0.0, max_neighbors: None, widths: vec![128] },
            ],
            head_widths: vec![128, 128, 256],
            activation: Activation::Relu,
        }
    }
}

impl EmbedderConfig {
    /// The full-size network with a 4096-dimensional final vector.
    pub fn full_scale() -> Self {
        Self {
            stages: vec![
                SaStage { centroids: Some(512), radius: 0.2, max_neighbors: Some(32), widths: vec![64, 64, 128] },
                SaStage { centroids: Some(128), radius: 0.4, max_neighbors: Some(64), widths: vec![128, 128, 256] },
                SaStage { centroids: None, radius: 0.0, max_neighbors: None, widths: vec![256, 512, 1024] },
            ],
            head_widths: vec![1024, 2048, 4096],
            activation: Activation::Relu,
        }
    }

    /// A few thousand parameters, for gradient checks.
    pub fn tiny() -> Self {
        Self {
            stages: vec![
                SaStage { centroids: Some(6), radius: 0.6, max_neighbors: None, widths: vec![8] },
                SaStage { centroids: Some(3), radius: 1.2, max_neighbors: None, widths: vec![12] },
                SaStage { centroids: None, radius: 0.0, max_neighbors: None, widths: vec![16] },
            ],
            head_widths: vec![16, 16],
            activation: Activation::Relu,
        }
    }

    pub fn final_dim(&self) -> usize {
        *self.head_widths.last().expect("head has at least one layer")
    }

    /// Number of pyramid levels: the head plus one per stage.
    pub fn levels(&self) -> usize {
        self.stages.len() + 1
    }

    /// Smallest cloud the subsampling schedule accepts.
    pub fn min_points(&self) -> usize {
        self.stages.iter().filter_map(|s| s.centroids).next().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.head_widths.is_empty() {
            return Err(Error::config("embedder needs at least one stage and one head layer"));
        }
        let mut prev: Option<usize> = None;
        for (i, s) in self.stages.iter().enumerate() {
            if s.widths.is_empty() || s.widths.contains(&0) {
                return Err(Error::config(format!("stage {i}: widths must be positive")));
            }
            match (s.centroids, prev) {
                (Some(0), _) => return Err(Error::config(format!("stage {i}: zero centroids"))),
                (Some(c), Some(p)) if c > p => {
                    return Err(Error::config(format!("stage {i}: {c} centroids from {p} points")))
                }
                (None, _) if i + 1 != self.stages.len() => {
                    return Err(Error::config("only the last stage may group the whole cloud"))
                }
                _ => {}
            }
            if s.centroids.is_some() && !(s.radius > 0.0) {
                return Err(Error::config(format!("stage {i}: radius must be positive")));
            }
            prev = s.centroids.or(prev);
        }
        if self.head_widths.contains(&0) {
            return Err(Error::config("head widths must be positive"));
        }
        Ok(())
    }
}

/// Pooled latent vectors; `levels[0]` is the deepest, later entries are shallower.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPyramid<T> {
    pub levels: Vec<Vec<T>>,
}

impl<T: Scalar> EmbeddingPyramid<T> {
    pub fn dims(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }
}

/// Euclidean distance between the level-`level` vectors of two pyramids.
pub fn latent_distance<T: Scalar>(
    a: &EmbeddingPyramid<T>,
    b: &EmbeddingPyramid<T>,
    level: usize,
) -> Result<T> {
    let (Some(x), Some(y)) = (a.levels.get(level), b.levels.get(level)) else {
        return Err(Error::contract(format!(
            "level {level} out of range ({} and {} levels)",
            a.levels.len(),
            b.levels.len()
        )));
    };
    if x.len() != y.len() {
        return Err(Error::contract(format!(
            "level {level} dimensions differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(x.iter()
        .zip(y)
        .map(|(p, q)| (*p - *q) * (*p - *q))
        .sum::<T>()
        .sqrt())
}

#[derive(Debug, Clone)]
pub struct CloudEmbedder<T> {
    config: EmbedderConfig,
    params: ParamSet<T>,
    stage_mlps: Vec<Mlp>,
    head: Mlp,
}

impl<T: Scalar> CloudEmbedder<T> {
    pub fn new(config: EmbedderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut width = 0;
        let mut stage_mlps = Vec::new();
        for (i, s) in config.stages.iter().enumerate() {
            let mut widths = vec![3 + width];
            widths.extend(&s.widths);
            stage_mlps.push(Mlp::new(
                &mut params,
                &format!("sa{i}"),
                &widths,
                config.activation,
                true,
                false,
                &mut rng,
            ));
            width = *s.widths.last().unwrap();
        }
        let mut widths = vec![width];
        widths.extend(&config.head_widths);
        let head = Mlp::new(&mut params, "head", &widths, config.activation, false, false, &mut rng);
        Ok(Self {
            config,
            params,
            stage_mlps,
            head,
        })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Builds the pyramid on the tape. `cloud` is an `N×3` node and may carry gradients.
    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], cloud: Var) -> Result<Vec<Var>> {
        let n = g.value(cloud).rows();
        if n < self.config.min_points() {
            return Err(Error::contract(format!(
                "embedder needs at least {} points, got {n}",
                self.config.min_points()
            )));
        }
        let mut pos = cloud;
        let mut feat: Option<Var> = None;
        let mut pooled = Vec::with_capacity(self.config.stages.len());
        for (stage, mlp) in self.config.stages.iter().zip(&self.stage_mlps) {
            let (next_pos, local) = match stage.centroids {
                Some(m) => {
                    let centres = farthest_point_sample(g.value(pos), m);
                    let groups = ball_query(g.value(pos), &centres, stage.radius, stage.max_neighbors);
                    let owners = groups.owners();
                    let centre_pos = g.gather(pos, centres);
                    let member_pos = g.gather(pos, groups.members.clone());
                    let centre_rep = g.gather(centre_pos, owners);
                    let rel = g.sub(member_pos, centre_rep);
                    let input = match feat {
                        Some(f) => {
                            let member_feat = g.gather(f, groups.members);
                            g.concat_cols(&[rel, member_feat])
                        }
                        None => rel,
                    };
                    let h = mlp.forward(g, vars, input);
                    (centre_pos, g.segment_mean(h, groups.offsets))
                }
                None => {
                    let input = match feat {
                        Some(f) => g.concat_cols(&[pos, f]),
                        None => pos,
                    };
                    let h = mlp.forward(g, vars, input);
                    (pos, g.mean_rows(h))
                }
            };
            pooled.push(if g.value(local).rows() == 1 { local } else { g.mean_rows(local) });
            pos = next_pos;
            feat = Some(local);
        }
        let deepest = *pooled.last().unwrap();
        let z0 = self.head.forward(g, vars, deepest);
        let mut levels = vec![z0];
        levels.extend(pooled.into_iter().rev());
        Ok(levels)
    }

    pub fn embed(&self, cloud: &PointCloud<T>) -> Result<EmbeddingPyramid<T>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let x = g.constant(Matrix::from_points(cloud.points()));
        let levels = self.forward(&mut g, &vars, x)?;
        Ok(EmbeddingPyramid {
            levels: levels.iter().map(|v| g.value(*v).data().to_vec()).collect(),
        })
    }
}

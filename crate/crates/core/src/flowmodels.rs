//! Flow extractors: the trainable reference network and non-learned baselines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{FlowField, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::{knn, nearest};
use crate::graph::{Graph, Var};
use crate::nn::{Activation, Mlp, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Anything that maps `(frame1, frame2)` to a flow field bound to `frame1`.
pub trait FlowPredictor<T: Scalar> {
    fn predict(&self, frame1: &PointCloud<T>, frame2: &PointCloud<T>) -> Result<FlowField<T>>;
}

/// A trainable flow extractor. `forward` must be permutation equivariant in
/// `frame1` and invariant in `frame2`, and return an `N×3` node.
pub trait FlowExtractor<T: Scalar> {
    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;
    /// Smallest accepted cloud, for either frame.
    fn min_points(&self) -> usize;
    fn forward(&self, g: &mut Graph<T>, vars: &[Var], frame1: Var, frame2: Var) -> Result<Var>;

    fn predict_flow(&self, frame1: &PointCloud<T>, frame2: &PointCloud<T>) -> Result<FlowField<T>> {
        let mut g = Graph::new();
        let vars = self.params().bind(&mut g, false);
        let a = g.constant(Matrix::from_points(frame1.points()));
        let b = g.constant(Matrix::from_points(frame2.points()));
        let flow = self.forward(&mut g, &vars, a, b)?;
        let value = g.value(flow);
        if !value.is_finite() {
            return Err(Error::NonFinite("predicted flow".into()));
        }
        FlowField::new(value.to_points())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    /// Neighbours used by the per-point local encoder (within one cloud).
    pub local_neighbors: usize,
    pub local_widths: Vec<usize>,
    /// Frame-2 neighbours aggregated by the correlation layer.
    pub corr_neighbors: usize,
    pub corr_widths: Vec<usize>,
    /// Shared point MLP for the scene-level context branch; empty disables it.
    #[serde(default)]
    pub global_widths: Vec<usize>,
    /// Hidden widths of the per-point regression head; a zero-initialised
    /// 3-wide layer follows.
    pub refine_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            local_neighbors: 8,
            local_widths: vec![16, 16],
            corr_neighbors: 16,
            corr_widths: vec![32, 32],
            global_widths: vec![32, 32],
            refine_widths: vec![32, 32],
            activation: Activation::Relu,
        }
    }
}

impl ExtractorConfig {
    /// Small enough for gradient checks.
    pub fn tiny() -> Self {
        Self {
            local_neighbors: 4,
            local_widths: vec![6],
            corr_neighbors: 4,
            corr_widths: vec![8],
            global_widths: vec![6],
            refine_widths: vec![8, 8],
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.local_neighbors == 0 || self.corr_neighbors == 0 {
            return Err(Error::config("neighbour counts must be positive"));
        }
        for w in [&self.local_widths, &self.corr_widths, &self.refine_widths] {
            if w.is_empty() || w.contains(&0) {
                return Err(Error::config("extractor widths must be nonempty and positive"));
            }
        }
        if self.global_widths.contains(&0) {
            return Err(Error::config("extractor widths must be positive"));
        }
        Ok(())
    }
}

/// Local encoder on each cloud, one k-nearest-neighbour correlation layer
/// between the clouds, a scene-level context branch and a per-point
/// regression head. Coordinates enter relative to a neighbour or to the
/// frame-1 centroid, so the output is translation invariant.
#[derive(Debug, Clone)]
pub struct ReferenceExtractor<T> {
    config: ExtractorConfig,
    params: ParamSet<T>,
    local: Mlp,
    corr: Mlp,
    global: Option<Mlp>,
    refine: Mlp,
}

impl<T: Scalar> ReferenceExtractor<T> {
    pub fn new(config: ExtractorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let act = config.activation;
        let mut widths = vec![3];
        widths.extend(&config.local_widths);
        let local = Mlp::new(&mut params, "local", &widths, act, true, false, &mut rng);
        let feat = *config.local_widths.last().unwrap();

        let mut widths = vec![3 + 2 * feat];
        widths.extend(&config.corr_widths);
        let corr = Mlp::new(&mut params, "corr", &widths, act, true, false, &mut rng);
        let corr_out = *config.corr_widths.last().unwrap();

        let global = (!config.global_widths.is_empty()).then(|| {
            let mut widths = vec![3];
            widths.extend(&config.global_widths);
            Mlp::new(&mut params, "global", &widths, act, true, false, &mut rng)
        });
        let context = config.global_widths.last().map_or(0, |w| w + 3);

        let mut widths = vec![corr_out + feat + context];
        widths.extend(&config.refine_widths);
        widths.push(3);
        let refine = Mlp::new(&mut params, "refine", &widths, act, false, true, &mut rng);
        Ok(Self {
            config,
            params,
            local,
            corr,
            global,
            refine,
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    fn encode(&self, g: &mut Graph<T>, vars: &[Var], cloud: Var) -> Var {
        let (idx, k) = knn(g.value(cloud), g.value(cloud), self.config.local_neighbors);
        let n = g.value(cloud).rows();
        let owners: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat(i).take(k)).collect();
        let neighbours = g.gather(cloud, idx);
        let centres = g.gather(cloud, owners);
        let rel = g.sub(neighbours, centres);
        let h = self.local.forward(g, vars, rel);
        g.segment_mean(h, (0..=n).map(|i| i * k).collect())
    }
}

impl<T: Scalar> FlowExtractor<T> for ReferenceExtractor<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn min_points(&self) -> usize {
        self.config.local_neighbors
    }

    fn forward(&self, g: &mut Graph<T>, vars: &[Var], frame1: Var, frame2: Var) -> Result<Var> {
        let (n, m) = (g.value(frame1).rows(), g.value(frame2).rows());
        if n < self.min_points() || m < self.min_points() {
            return Err(Error::contract(format!(
                "reference extractor needs at least {} points per frame, got {n} and {m}",
                self.min_points()
            )));
        }
        let feat1 = self.encode(g, vars, frame1);
        let feat2 = self.encode(g, vars, frame2);

        let (idx, k) = knn(g.value(frame1), g.value(frame2), self.config.corr_neighbors);
        let owners: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat(i).take(k)).collect();
        let targets = g.gather(frame2, idx.clone());
        let sources = g.gather(frame1, owners.clone());
        let rel = g.sub(targets, sources);
        let f2 = g.gather(feat2, idx);
        let f1 = g.gather(feat1, owners);
        let input = g.concat_cols(&[rel, f2, f1]);
        let h = self.corr.forward(g, vars, input);
        let corr = g.segment_max(h, (0..=n).map(|i| i * k).collect());

        let head_in = match &self.global {
            Some(mlp) => {
                // centred position plus the difference of pooled frame codes
                let c1 = g.mean_rows(frame1);
                let c1_at_1 = g.gather(c1, vec![0; n]);
                let c1_at_2 = g.gather(c1, vec![0; m]);
                let centred1 = g.sub(frame1, c1_at_1);
                let centred2 = g.sub(frame2, c1_at_2);
                let h1 = mlp.forward(g, vars, centred1);
                let h2 = mlp.forward(g, vars, centred2);
                let code1 = g.mean_rows(h1);
                let code2 = g.mean_rows(h2);
                let diff = g.sub(code2, code1);
                let diff = g.gather(diff, vec![0; n]);
                g.concat_cols(&[corr, feat1, centred1, diff])
            }
            None => g.concat_cols(&[corr, feat1]),
        };
        Ok(self.refine.forward(g, vars, head_in))
    }
}

impl<T: Scalar> FlowPredictor<T> for ReferenceExtractor<T> {
    fn predict(&self, frame1: &PointCloud<T>, frame2: &PointCloud<T>) -> Result<FlowField<T>> {
        self.predict_flow(frame1, frame2)
    }
}

/// Always predicts zero motion.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroFlow;

impl<T: Scalar> FlowPredictor<T> for ZeroFlow {
    fn predict(&self, frame1: &PointCloud<T>, _frame2: &PointCloud<T>) -> Result<FlowField<T>> {
        Ok(FlowField::zeros(frame1.len()))
    }
}

/// Moves every point onto its nearest neighbour in the second frame.
#[derive(Debug, Clone, Copy, Default)]
pub struct NearestNeighborFlow;

impl<T: Scalar> FlowPredictor<T> for NearestNeighborFlow {
    fn predict(&self, frame1: &PointCloud<T>, frame2: &PointCloud<T>) -> Result<FlowField<T>> {
        nn_baseline_flow(frame1, frame2)
    }
}

pub fn nn_baseline_flow<T: Scalar>(frame1: &PointCloud<T>, frame2: &PointCloud<T>) -> Result<FlowField<T>> {
    let a = Matrix::from_points(frame1.points());
    let b = Matrix::from_points(frame2.points());
    let nn = nearest(&a, &b);
    FlowField::new(
        frame1
            .points()
            .iter()
            .zip(nn)
            .map(|(p, j)| {
                let q = frame2.points()[j];
                [q[0] - p[0], q[1] - p[1], q[2] - p[2]]
            })
            .collect(),
    )
}

/// `frame1 + flow`, pointwise.
pub fn transform_cloud<T: Scalar>(frame1: &PointCloud<T>, flow: &FlowField<T>) -> Result<PointCloud<T>> {
    flow.check_bound_to(frame1)?;
    PointCloud::new(
        frame1
            .points()
            .iter()
            .zip(flow.vectors())
            .map(|(p, f)| [p[0] + f[0], p[1] + f[1], p[2] + f[2]])
            .collect(),
    )
}

/// Differentiable counterpart of [`transform_cloud`].
pub fn transform_cloud_var<T: Scalar>(g: &mut Graph<T>, frame1: Var, flow: Var) -> Result<Var> {
    if g.value(frame1).shape() != g.value(flow).shape() {
        return Err(Error::contract("flow is not bound to the cloud it transforms"));
    }
    Ok(g.add(frame1, flow))
}

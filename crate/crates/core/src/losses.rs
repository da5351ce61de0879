//! Training objectives. Each loss exists as a plain function on values and,
//! where training needs it, as a builder of tape nodes (`*_var`).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::nearest;
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Depth weighting of the multi-scale triplet terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiscale {
    /// Deepest level only.
    None,
    /// `1/sqrt(l+1)`
    InvSqrt,
    /// `1/(l+1)`
    InvLinear,
    /// `1/(l+1)^2`
    InvSquare,
}

impl Multiscale {
    pub const ALL: [Multiscale; 4] = [
        Multiscale::None,
        Multiscale::InvSqrt,
        Multiscale::InvLinear,
        Multiscale::InvSquare,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Multiscale::None => "none",
            Multiscale::InvSqrt => "inv_sqrt",
            Multiscale::InvLinear => "inv_linear",
            Multiscale::InvSquare => "inv_square",
        }
    }
}

pub fn gamma(level: usize, factor: Multiscale) -> f64 {
    let l = level as f64 + 1.0;
    match factor {
        Multiscale::None => {
            if level == 0 {
                1.0
            } else {
                0.0
            }
        }
        Multiscale::InvSqrt => 1.0 / l.sqrt(),
        Multiscale::InvLinear => 1.0 / l,
        Multiscale::InvSquare => 1.0 / (l * l),
    }
}

/// Which cycle-consistency terms are summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CycleTerms {
    pub cosine: bool,
    pub mse: bool,
    pub l2: bool,
}

impl CycleTerms {
    pub const NONE: CycleTerms = CycleTerms { cosine: false, mse: false, l2: false };

    /// Cosine plus ℓ2, the default combination.
    pub const COSINE_L2: CycleTerms = CycleTerms { cosine: true, mse: false, l2: true };

    /// The six rows of the cycle-loss ablation, in table order.
    pub const ABLATION_ROWS: [CycleTerms; 6] = [
        CycleTerms::NONE,
        CycleTerms { cosine: true, mse: false, l2: false },
        CycleTerms { cosine: false, mse: true, l2: false },
        CycleTerms { cosine: false, mse: false, l2: true },
        CycleTerms { cosine: true, mse: true, l2: false },
        CycleTerms::COSINE_L2,
    ];

    pub fn is_empty(self) -> bool {
        !(self.cosine || self.mse || self.l2)
    }

    pub fn label(self) -> String {
        let mut parts = Vec::new();
        if self.cosine {
            parts.push("cosine");
        }
        if self.mse {
            parts.push("mse");
        }
        if self.l2 {
            parts.push("l2");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub margin: f64,
    pub multiscale: Multiscale,
    pub cycle_terms: CycleTerms,
    pub lambda_cc: f64,
    /// Floor on norms in the cosine term.
    pub epsilon: f64,
    /// How per-point cycle terms are combined.
    pub cycle_reduction: Reduction,
    /// Treat the transformed cloud as a constant when computing backward flow.
    pub cycle_stop_gradient: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            multiscale: Multiscale::InvSqrt,
            cycle_terms: CycleTerms::COSINE_L2,
            lambda_cc: 1.0,
            epsilon: 1e-8,
            cycle_reduction: Reduction::Mean,
            cycle_stop_gradient: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) || !(self.lambda_cc >= 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::config(
                "loss config needs margin >= 0, lambda_cc >= 0 and epsilon > 0",
            ));
        }
        Ok(())
    }

    pub fn gamma(&self, level: usize) -> f64 {
        gamma(level, self.multiscale)
    }
}

fn check_dims(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::contract(format!("{what}: dimension mismatch {a} vs {b}")));
    }
    Ok(())
}

fn dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum::<T>().sqrt()
}

pub fn triplet_margin<T: Scalar>(anchor: &[T], positive: &[T], negative: &[T], margin: T) -> Result<T> {
    check_dims(anchor.len(), positive.len(), "triplet")?;
    check_dims(anchor.len(), negative.len(), "triplet")?;
    let v = dist(anchor, positive) - dist(anchor, negative) + margin;
    Ok(v.max(T::zero()))
}

/// `Σ_l γ(l) · triplet(z_a^(l), z_p^(l), z_n^(l))`
pub fn multiscale_triplet<T: Scalar>(
    anchor: &[Vec<T>],
    positive: &[Vec<T>],
    negative: &[Vec<T>],
    config: &LossConfig,
) -> Result<T> {
    check_dims(anchor.len(), positive.len(), "pyramid levels")?;
    check_dims(anchor.len(), negative.len(), "pyramid levels")?;
    let mut total = T::zero();
    for l in 0..anchor.len() {
        let t = triplet_margin(&anchor[l], &positive[l], &negative[l], T::of(config.margin))?;
        total += T::of(config.gamma(l)) * t;
    }
    Ok(total)
}

/// Sum over points of the selected cycle terms for forward flow `f` and backward flow `b`.
pub fn cycle_consistency<T: Scalar>(
    forward: &[[T; 3]],
    backward: &[[T; 3]],
    terms: CycleTerms,
    epsilon: f64,
) -> Result<T> {
    check_dims(forward.len(), backward.len(), "cycle consistency")?;
    let eps = T::of(epsilon);
    let third = T::one() / T::of(3.0);
    let mut total = T::zero();
    for (f, b) in forward.iter().zip(backward) {
        let s = [f[0] + b[0], f[1] + b[1], f[2] + b[2]];
        let s2 = s[0] * s[0] + s[1] * s[1] + s[2] * s[2];
        if terms.l2 {
            total += s2.sqrt();
        }
        if terms.mse {
            total += s2 * third;
        }
        if terms.cosine {
            let dot = f[0] * b[0] + f[1] * b[1] + f[2] * b[2];
            let nf = dist(f, &[T::zero(); 3]).max(eps);
            let nb = dist(b, &[T::zero(); 3]).max(eps);
            total += dot / (nf * nb);
        }
    }
    Ok(total)
}

/// `L_h = Σ_l γ(l) r_n^(l) + λ · cc`
pub fn loss_flow_extractor<T: Scalar>(r_n: &[T], cc: T, config: &LossConfig) -> Result<T> {
    if r_n.iter().any(|r| *r < T::zero()) {
        return Err(Error::contract("latent distances must be nonnegative"));
    }
    let total: T = r_n
        .iter()
        .enumerate()
        .map(|(l, r)| T::of(config.gamma(l)) * *r)
        .sum();
    Ok(total + T::of(config.lambda_cc) * cc)
}

/// `L_g = Σ_l γ(l) max(r_p^(l) − r_n^(l) + m, 0)`
pub fn loss_embedder<T: Scalar>(r_p: &[T], r_n: &[T], config: &LossConfig) -> Result<T> {
    check_dims(r_p.len(), r_n.len(), "loss_embedder levels")?;
    if r_p.iter().chain(r_n).any(|r| *r < T::zero()) {
        return Err(Error::contract("latent distances must be nonnegative"));
    }
    let m = T::of(config.margin);
    Ok(r_p
        .iter()
        .zip(r_n)
        .enumerate()
        .map(|(l, (p, n))| T::of(config.gamma(l)) * (*p - *n + m).max(T::zero()))
        .sum())
}

/// Symmetric chamfer distance with unsquared Euclidean nearest-neighbour distances.
pub fn chamfer<T: Scalar>(a: &PointCloud<T>, b: &PointCloud<T>) -> T {
    let (ma, mb) = (Matrix::from_points(a.points()), Matrix::from_points(b.points()));
    let one_way = |x: &Matrix<T>, y: &Matrix<T>| -> T {
        let nn = nearest(x, y);
        let total: T = nn
            .iter()
            .enumerate()
            .map(|(i, &j)| dist(x.row(i), y.row(j)))
            .sum();
        total / T::of(x.rows() as f64)
    };
    one_way(&ma, &mb) + one_way(&mb, &ma)
}

/// Random split into halves of sizes `ceil(N/2)` and `floor(N/2)`.
pub fn partition_anchor_positive<T: Scalar>(
    cloud: &PointCloud<T>,
    seed: u64,
) -> Result<(PointCloud<T>, PointCloud<T>)> {
    let (a, b) = partition_indices(cloud.len(), seed)?;
    Ok((cloud.select(&a)?, cloud.select(&b)?))
}

/// Index sets behind [`partition_anchor_positive`].
pub fn partition_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::contract(format!("cannot partition a cloud of {n} points")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let second = idx.split_off(n.div_ceil(2));
    Ok((idx, second))
}

/// Level-wise distances `||a^(l) − b^(l)||` as `1×1` nodes.
pub fn level_distances_var<T: Scalar>(g: &mut Graph<T>, a: &[Var], b: &[Var]) -> Result<Vec<Var>> {
    check_dims(a.len(), b.len(), "pyramid levels")?;
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = g.sub(x, y);
            g.row_norm(d)
        })
        .collect())
}

fn weighted_sum<T: Scalar>(g: &mut Graph<T>, terms: &[Var], config: &LossConfig) -> Option<Var> {
    let mut total: Option<Var> = None;
    for (l, &t) in terms.iter().enumerate() {
        let w = config.gamma(l);
        if w == 0.0 {
            continue;
        }
        let scaled = g.scale(t, T::of(w));
        total = Some(match total {
            Some(acc) => g.add(acc, scaled),
            None => scaled,
        });
    }
    total
}

pub fn loss_embedder_var<T: Scalar>(g: &mut Graph<T>, r_p: &[Var], r_n: &[Var], config: &LossConfig) -> Result<Var> {
    check_dims(r_p.len(), r_n.len(), "loss_embedder levels")?;
    let hinges: Vec<Var> = r_p
        .iter()
        .zip(r_n)
        .map(|(&p, &n)| {
            let d = g.sub(p, n);
            let d = g.add_const(d, T::of(config.margin));
            g.relu(d)
        })
        .collect();
    Ok(weighted_sum(g, &hinges, config).unwrap_or_else(|| g.constant(Matrix::scalar(T::zero()))))
}

pub fn loss_flow_extractor_var<T: Scalar>(
    g: &mut Graph<T>,
    r_n: &[Var],
    cc: Option<Var>,
    config: &LossConfig,
) -> Var {
    let latent = weighted_sum(g, r_n, config);
    let cycle = cc.map(|c| g.scale(c, T::of(config.lambda_cc)));
    match (latent, cycle) {
        (Some(a), Some(b)) => g.add(a, b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => g.constant(Matrix::scalar(T::zero())),
    }
}

/// Cycle consistency of two `N×3` flow nodes; `None` when no term is selected.
pub fn cycle_consistency_var<T: Scalar>(
    g: &mut Graph<T>,
    forward: Var,
    backward: Var,
    terms: CycleTerms,
    epsilon: f64,
    reduction: Reduction,
) -> Result<Option<Var>> {
    if g.value(forward).shape() != g.value(backward).shape() {
        return Err(Error::contract("forward and backward flows differ in size"));
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let n = g.value(forward).rows();
    let s = g.add(forward, backward);
    let mut per_point: Vec<Var> = Vec::new();
    if terms.l2 {
        per_point.push(g.row_norm(s));
    }
    if terms.mse {
        let sq = g.row_dot(s, s);
        per_point.push(g.scale(sq, T::of(1.0 / 3.0)));
    }
    if terms.cosine {
        let dot = g.row_dot(forward, backward);
        let nf = g.row_norm(forward);
        let nf = g.clamp_min(nf, T::of(epsilon));
        let nb = g.row_norm(backward);
        let nb = g.clamp_min(nb, T::of(epsilon));
        let den = g.mul(nf, nb);
        per_point.push(g.div(dot, den));
    }
    let mut total = per_point[0];
    for &p in &per_point[1..] {
        total = g.add(total, p);
    }
    let total = g.sum(total);
    Ok(Some(match reduction {
        Reduction::Sum => total,
        Reduction::Mean => g.scale(total, T::one() / T::of(n as f64)),
    }))
}

/// Chamfer distance between two `·×3` nodes; neighbour assignment is not differentiated.
pub fn chamfer_var<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Var {
    let nn_ab = nearest(g.value(a), g.value(b));
    let nn_ba = nearest(g.value(b), g.value(a));
    let one_way = |g: &mut Graph<T>, x: Var, y: Var, nn: Vec<usize>| {
        let matched = g.gather(y, nn);
        let d = g.sub(x, matched);
        let n = g.row_norm(d);
        g.mean(n)
    };
    let ab = one_way(g, a, b, nn_ab);
    let ba = one_way(g, b, a, nn_ba);
    g.add(ab, ba)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LossConfig {
        LossConfig::default()
    }

    #[test]
    fn triplet_examples() {
        let a = [0.0f64, 0.0];
        assert_eq!(triplet_margin(&a, &a, &[2.0, 0.0], 1.0).unwrap(), 0.0);
        assert_eq!(triplet_margin(&a, &a, &a, 1.0).unwrap(), 1.0);
        assert_eq!(triplet_margin(&a, &[3.0, 4.0], &[1.0, 0.0], 1.0).unwrap(), 5.0);
        assert!(triplet_margin(&a, &[1.0], &a, 1.0).is_err());
    }

    #[test]
    fn gamma_values() {
        assert_eq!(gamma(0, Multiscale::InvSqrt), 1.0);
        assert_eq!(gamma(3, Multiscale::InvSqrt), 0.5);
        let want = [1.0, 0.70711, 0.57735, 0.5];
        for (l, w) in want.iter().enumerate() {
            assert!((gamma(l, Multiscale::InvSqrt) - w).abs() < 1e-5);
        }
        assert_eq!(gamma(2, Multiscale::InvLinear), 1.0 / 3.0);
        assert_eq!(gamma(1, Multiscale::InvSquare), 0.25);
        assert_eq!(gamma(0, Multiscale::None), 1.0);
        assert_eq!(gamma(1, Multiscale::None), 0.0);
    }

    #[test]
    fn multiscale_examples() {
        let same = vec![vec![0.5f64, -1.0]; 4];
        let v = multiscale_triplet(&same, &same, &same, &cfg()).unwrap();
        assert!((v - 2.78446).abs() < 1e-4);
        let far = vec![vec![100.0f64, 0.0]; 4];
        assert_eq!(multiscale_triplet(&same, &same, &far, &cfg()).unwrap(), 0.0);
        assert!(multiscale_triplet(&same, &same[..3], &same, &cfg()).is_err());
    }

    #[test]
    fn cycle_examples() {
        let f = vec![[1.0f64, 2.0, -0.5], [0.3, 0.0, 0.1]];
        let b: Vec<[f64; 3]> = f.iter().map(|v| v.map(|x| -x)).collect();
        let v = cycle_consistency(&f, &b, CycleTerms::COSINE_L2, 1e-8).unwrap();
        assert!((v + 2.0).abs() < 1e-12);
        let one = vec![[1.0f64, 0.0, 0.0]];
        assert!((cycle_consistency(&one, &one, CycleTerms::COSINE_L2, 1e-8).unwrap() - 3.0).abs() < 1e-12);
        let zero = vec![[0.0f64; 3]];
        assert_eq!(cycle_consistency(&zero, &zero, CycleTerms::COSINE_L2, 1e-8).unwrap(), 0.0);
        let mse = CycleTerms { mse: true, ..CycleTerms::NONE };
        assert!((cycle_consistency(&one, &one, mse, 1e-8).unwrap() - 4.0 / 3.0).abs() < 1e-12);
        assert!(cycle_consistency(&one, &f, mse, 1e-8).is_err());
    }

    #[test]
    fn adversarial_loss_examples() {
        let c = cfg();
        assert_eq!(loss_flow_extractor(&[0.0f64; 4], 0.0, &c).unwrap(), 0.0);
        assert!((loss_flow_extractor(&[1.0f64; 4], 0.0, &c).unwrap() - 2.78446).abs() < 1e-4);
        let c2 = LossConfig { lambda_cc: 2.0, ..cfg() };
        assert!((loss_flow_extractor(&[1.0f64, 0.0, 0.0, 0.0], -1.0, &c2).unwrap() + 1.0).abs() < 1e-12);

        assert_eq!(loss_embedder(&[0.0f64; 4], &[1.0; 4], &c).unwrap(), 0.0);
        assert!((loss_embedder(&[0.7f64; 4], &[0.7; 4], &c).unwrap() - 2.78446).abs() < 1e-4);
        let v = loss_embedder(&[2.0f64, 0.0, 0.0, 0.0], &[0.0; 4], &c).unwrap();
        assert!((v - 4.78446).abs() < 1e-4);
        assert!(loss_embedder(&[-1.0f64], &[0.0], &c).is_err());
    }

    #[test]
    fn chamfer_examples() {
        let a = PointCloud::new(vec![[0.0f64; 3]]).unwrap();
        let b = PointCloud::new(vec![[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(chamfer(&a, &a), 0.0);
        assert_eq!(chamfer(&a, &b), 2.0);
        assert_eq!(chamfer(&b, &a), 2.0);
    }

    #[test]
    fn partition_examples() {
        let pts: Vec<[f64; 3]> = (0..512).map(|i| [i as f64, 0.0, 0.0]).collect();
        let c = PointCloud::new(pts).unwrap();
        let (a, p) = partition_anchor_positive(&c, 3).unwrap();
        assert_eq!((a.len(), p.len()), (256, 256));
        let mut all: Vec<i64> = a.points().iter().chain(p.points()).map(|q| q[0] as i64).collect();
        all.sort();
        assert_eq!(all, (0..512).collect::<Vec<_>>());
        assert_eq!(partition_anchor_positive(&c, 3).unwrap(), (a, p));

        let three = PointCloud::new(vec![[0.0f64; 3], [1.0; 3], [2.0; 3]]).unwrap();
        let (a, p) = partition_anchor_positive(&three, 0).unwrap();
        assert_eq!((a.len(), p.len()), (2, 1));
        let one = PointCloud::new(vec![[0.0f64; 3]]).unwrap();
        assert!(partition_anchor_positive(&one, 0).is_err());
    }

    #[test]
    fn graph_losses_match_value_losses() {
        let c = LossConfig { lambda_cc: 0.7, cycle_reduction: Reduction::Sum, ..cfg() };
        let mut g = Graph::<f64>::new();
        let rp: Vec<Var> = [0.3, 1.2, 0.1, 0.9].iter().map(|v| g.constant(Matrix::scalar(*v))).collect();
        let rn: Vec<Var> = [0.5, 0.4, 0.8, 0.2].iter().map(|v| g.constant(Matrix::scalar(*v))).collect();
        let lg = loss_embedder_var(&mut g, &rp, &rn, &c).unwrap();
        let want = loss_embedder(&[0.3, 1.2, 0.1, 0.9], &[0.5, 0.4, 0.8, 0.2], &c).unwrap();
        assert!((g.scalar(lg) - want).abs() < 1e-12);

        let f = vec![[0.2, -0.4, 1.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]];
        let b = vec![[-0.1, 0.3, -0.9], [0.5, 0.0, 0.0], [0.2, -3.0, 0.4]];
        let fv = g.constant(Matrix::from_points(&f));
        let bv = g.constant(Matrix::from_points(&b));
        for terms in CycleTerms::ABLATION_ROWS {
            let cc = cycle_consistency_var(&mut g, fv, bv, terms, 1e-8, Reduction::Sum).unwrap();
            let want = cycle_consistency(&f, &b, terms, 1e-8).unwrap();
            match cc {
                Some(v) => assert!((g.scalar(v) - want).abs() < 1e-12),
                None => assert_eq!(want, 0.0),
            }
        }
        let cc = cycle_consistency_var(&mut g, fv, bv, CycleTerms::COSINE_L2, 1e-8, Reduction::Sum).unwrap();
        let lh = loss_flow_extractor_var(&mut g, &rn, cc, &c);
        let want = loss_flow_extractor(&[0.5, 0.4, 0.8, 0.2], cycle_consistency(&f, &b, CycleTerms::COSINE_L2, 1e-8).unwrap(), &c).unwrap();
        assert!((g.scalar(lh) - want).abs() < 1e-12);
    }
}

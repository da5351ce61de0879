//! Round-based adversarial training of the embedder and the flow extractor,
//! plus the chamfer baseline objective.

use std::io::Write;
use std::path::PathBuf;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{Mechanism, PointCloud, ScenePair};
use crate::embedder::{CloudEmbedder, EmbedderConfig};
use crate::error::{Error, Result};
use crate::flowmodels::{ExtractorConfig, FlowExtractor, ReferenceExtractor};
use crate::graph::{Graph, Var};
use crate::losses::{
    chamfer_var, cycle_consistency_var, level_distances_var, loss_embedder_var, loss_flow_extractor_var,
    partition_indices, LossConfig,
};
use crate::metrics::epe;
use crate::nn::ParamSet;
use crate::optim::{Adam, AdamConfig, PlateauOutcome, PlateauScheduler};
use crate::sandbox::derive_seed;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Adversarial,
    /// Chamfer distance to frame 2 plus the cycle term; no embedder.
    ChamferCycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_flow: f64,
    pub lr_embedder: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub plateau_patience_epochs: usize,
    pub plateau_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossConfig,
    pub objective: Objective,
    pub seed: u64,
    /// Points per frame fed to the networks; larger stored clouds are subsampled.
    pub cloud_size: Option<usize>,
    /// Optimizer steps per phase within one round.
    pub embedder_steps: usize,
    pub extractor_steps: usize,
    pub embedder: EmbedderConfig,
    pub extractor: ExtractorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_flow: 5e-4,
            lr_embedder: 5e-5,
            adam_beta1: 0.0,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            plateau_patience_epochs: 20,
            plateau_factor: 0.75,
            batch_size: 8,
            epochs: 10,
            loss: LossConfig::default(),
            objective: Objective::Adversarial,
            seed: 0,
            cloud_size: Some(256),
            embedder_steps: 1,
            extractor_steps: 1,
            embedder: EmbedderConfig::default(),
            extractor: ExtractorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // Zero rates are allowed so that a run can be replayed without updates.
        if !(self.lr_flow >= 0.0 && self.lr_embedder >= 0.0) {
            return Err(Error::config("learning rates must be nonnegative"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::config("plateau_factor must lie in (0, 1)"));
        }
        if self.plateau_patience_epochs == 0 {
            return Err(Error::config("plateau_patience_epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.embedder_steps == 0 || self.extractor_steps == 0 {
            return Err(Error::config("phase step counts must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        if self.cloud_size == Some(0) {
            return Err(Error::config("cloud_size must be positive"));
        }
        self.loss.validate()?;
        self.extractor.validate()?;
        if self.objective == Objective::Adversarial {
            self.embedder.validate()?;
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Fields that fix the parameter layout; checkpoints are only compatible when these agree.
    pub fn architecture_matches(&self, other: &TrainConfig) -> std::result::Result<(), String> {
        if self.objective != other.objective {
            return Err(format!("objective {:?} vs {:?}", self.objective, other.objective));
        }
        if self.extractor != other.extractor {
            return Err("extractor configuration differs".into());
        }
        if self.objective == Objective::Adversarial && self.embedder != other.embedder {
            return Err("embedder configuration differs".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrEvent {
    /// Zero-based epoch whose validation result triggered the reduction.
    pub epoch: usize,
    pub lr_flow: f64,
    pub lr_embedder: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub extractor: ReferenceExtractor<T>,
    pub extractor_opt: Adam<T>,
    /// Absent under the chamfer objective.
    pub embedder: Option<CloudEmbedder<T>>,
    pub embedder_opt: Option<Adam<T>>,
    pub lr_flow: f64,
    pub lr_embedder: f64,
    pub scheduler: PlateauScheduler,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed rounds.
    pub round: usize,
    pub rng: ChaCha8Rng,
    /// Extractor parameters at the best validation EPE so far.
    pub best_extractor: Option<Vec<T>>,
    pub lr_events: Vec<LrEvent>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let extractor = ReferenceExtractor::new(config.extractor.clone(), derive_seed(config.seed, 1))?;
        let extractor_opt = Adam::new(config.adam(), extractor.params().num_scalars());
        let (embedder, embedder_opt) = match config.objective {
            Objective::Adversarial => {
                let e = CloudEmbedder::new(config.embedder.clone(), derive_seed(config.seed, 2))?;
                let opt = Adam::new(config.adam(), e.params().num_scalars());
                (Some(e), Some(opt))
            }
            Objective::ChamferCycle => (None, None),
        };
        Ok(Self {
            extractor,
            extractor_opt,
            embedder,
            embedder_opt,
            lr_flow: config.lr_flow,
            lr_embedder: config.lr_embedder,
            scheduler: PlateauScheduler::new(config.plateau_patience_epochs, config.plateau_factor)?,
            epoch: 0,
            round: 0,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 3)),
            best_extractor: None,
            lr_events: Vec::new(),
        })
    }

    pub fn best_val_epe(&self) -> Option<f64> {
        self.scheduler.best
    }

    /// The extractor carrying the best validation parameters, or the current one.
    pub fn best_model(&self) -> Result<ReferenceExtractor<T>> {
        let mut model = self.extractor.clone();
        if let Some(best) = &self.best_extractor {
            model.params_mut().assign_flat(best)?;
        }
        Ok(model)
    }

    fn embedder_fingerprint(&self) -> u64 {
        self.embedder.as_ref().map_or(0, |e| e.params().fingerprint())
    }
}

/// Parameter fingerprints around each phase of a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseHashes {
    pub extractor_before: u64,
    pub embedder_before: u64,
    pub extractor_after_phase1: u64,
    pub embedder_after_phase1: u64,
    pub extractor_after_phase2: u64,
    pub embedder_after_phase2: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub epoch: usize,
    pub round: usize,
    /// Batch mean of the embedder loss; absent under the chamfer objective.
    pub l_g: Option<f64>,
    /// Batch mean of the extractor loss (chamfer plus cycle under the baseline objective).
    pub l_h: f64,
    /// Per-level batch means of the anchor/positive and anchor/negative distances
    /// seen by the embedder phase.
    pub r_p: Vec<f64>,
    pub r_n: Vec<f64>,
    /// Fingerprints of the data each phase consumed.
    pub phase1_batch: u64,
    pub phase2_batch: u64,
    pub hashes: PhaseHashes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_l_g: Option<f64>,
    pub mean_l_h: f64,
    pub val_epe: f64,
    /// Rates in effect after the scheduler has looked at this epoch.
    pub lr_flow: f64,
    pub lr_embedder: f64,
    pub lr_reduced: bool,
    pub improved: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub rounds: Vec<RoundLog>,
    pub epochs: Vec<EpochLog>,
}

fn fingerprint_batch<T: Scalar>(batch: &[&ScenePair<T>], seeds: &[u64]) -> u64 {
    let mut bytes = Vec::new();
    for (pair, seed) in batch.iter().zip(seeds) {
        for v in pair.frame1.flat().into_iter().chain(pair.frame2.flat()) {
            v.write_le(&mut bytes);
        }
        bytes.extend_from_slice(&seed.to_le_bytes());
    }
    bytes
        .iter()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ *b as u64).wrapping_mul(0x100000001b3))
}

fn points_matrix<T: Scalar>(cloud: &PointCloud<T>) -> Matrix<T> {
    Matrix::from_points(cloud.points())
}

fn zero_grads<T: Scalar>(params: &ParamSet<T>) -> Vec<Matrix<T>> {
    params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect()
}

fn accumulate<T: Scalar>(acc: &mut [Matrix<T>], g: &Graph<T>, loss: Var, vars: &[Var], weight: T) {
    let grads = g.backward(loss);
    for (a, v) in acc.iter_mut().zip(vars) {
        if let Some(d) = grads.get(*v) {
            for (x, y) in a.data_mut().iter_mut().zip(d.data()) {
                *x += *y * weight;
            }
        }
    }
}

fn finite(value: f64, term: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(term.into()))
    }
}

struct Phase1 {
    l_g: f64,
    r_p: Vec<f64>,
    r_n: Vec<f64>,
}

/// One pair's loss on a fresh tape. `vars` are the parameters of the network
/// being updated, bound as trainable; everything else is constant.
pub struct PairObjective<T> {
    pub graph: Graph<T>,
    pub vars: Vec<Var>,
    pub loss: Var,
    /// Per-level anchor/positive distances (embedder objective only).
    pub r_p: Vec<Var>,
    /// Per-level anchor/negative distances; empty under the chamfer objective.
    pub r_n: Vec<Var>,
}

/// `L_g` for one pair with anchor and positive taken from `frame2` at the given
/// indices and the negative `frame1 + h(frame1, frame2)` held constant.
pub fn embedder_objective<T: Scalar>(
    pair: &ScenePair<T>,
    anchor: &[usize],
    positive: &[usize],
    extractor: &ReferenceExtractor<T>,
    embedder: &CloudEmbedder<T>,
    loss: &LossConfig,
) -> Result<PairObjective<T>> {
    let flow = extractor.predict_flow(&pair.frame1, &pair.frame2)?;
    let mut g = Graph::new();
    let vars = embedder.params().bind(&mut g, true);
    let f1 = g.constant(points_matrix(&pair.frame1));
    let fl = g.constant(Matrix::from_points(flow.vectors()));
    let negative = g.add(f1, fl);
    let anchor = g.constant(points_matrix(&pair.frame2.select(anchor)?));
    let positive = g.constant(points_matrix(&pair.frame2.select(positive)?));
    let za = embedder.forward(&mut g, &vars, anchor)?;
    let zp = embedder.forward(&mut g, &vars, positive)?;
    let zn = embedder.forward(&mut g, &vars, negative)?;
    let r_p = level_distances_var(&mut g, &za, &zp)?;
    let r_n = level_distances_var(&mut g, &za, &zn)?;
    let l = loss_embedder_var(&mut g, &r_p, &r_n, loss)?;
    Ok(PairObjective { graph: g, vars, loss: l, r_p, r_n })
}

/// `L_h` for one pair against the frozen `embedder`, or the chamfer objective
/// when `embedder` is `None`.
pub fn extractor_objective<T: Scalar>(
    pair: &ScenePair<T>,
    anchor: &[usize],
    extractor: &ReferenceExtractor<T>,
    embedder: Option<&CloudEmbedder<T>>,
    loss: &LossConfig,
) -> Result<PairObjective<T>> {
    let mut g = Graph::new();
    let vars = extractor.params().bind(&mut g, true);
    let (moved, cc) = extractor_forward(&mut g, &vars, extractor, pair, loss)?;
    let (l, r_n) = match embedder {
        Some(e) => {
            let za = e.embed(&pair.frame2.select(anchor)?)?;
            let evars = e.params().bind(&mut g, false);
            let za: Vec<Var> = za
                .levels
                .iter()
                .map(|z| g.constant(Matrix::from_vec(1, z.len(), z.clone()).expect("row vector")))
                .collect();
            let zn = e.forward(&mut g, &evars, moved)?;
            let r_n = level_distances_var(&mut g, &za, &zn)?;
            (loss_flow_extractor_var(&mut g, &r_n, cc, loss), r_n)
        }
        None => {
            let f2 = g.constant(points_matrix(&pair.frame2));
            let ch = chamfer_var(&mut g, moved, f2);
            finite(g.scalar(ch).f64(), "chamfer")?;
            let l = match cc {
                Some(c) => {
                    let c = g.scale(c, T::of(loss.lambda_cc));
                    g.add(ch, c)
                }
                None => ch,
            };
            (l, Vec::new())
        }
    };
    Ok(PairObjective { graph: g, vars, loss: l, r_p: Vec::new(), r_n })
}

fn embedder_phase<T: Scalar>(
    batch: &[&ScenePair<T>],
    parts: &[(Vec<usize>, Vec<usize>)],
    extractor: &ReferenceExtractor<T>,
    embedder: &mut CloudEmbedder<T>,
    opt: &mut Adam<T>,
    lr: f64,
    loss: &LossConfig,
) -> Result<Phase1> {
    let levels = embedder.config().levels();
    let mut grads = zero_grads(embedder.params());
    let w = T::one() / T::of(batch.len() as f64);
    let mut out = Phase1 {
        l_g: 0.0,
        r_p: vec![0.0; levels],
        r_n: vec![0.0; levels],
    };
    for (pair, (ia, ip)) in batch.iter().zip(parts) {
        let obj = embedder_objective(pair, ia, ip, extractor, embedder, loss)?;
        let g = &obj.graph;
        for l in 0..levels {
            out.r_p[l] += finite(g.scalar(obj.r_p[l]).f64(), "r_p")? / batch.len() as f64;
            out.r_n[l] += finite(g.scalar(obj.r_n[l]).f64(), "r_n")? / batch.len() as f64;
        }
        out.l_g += finite(g.scalar(obj.loss).f64(), "L_g")? / batch.len() as f64;
        accumulate(&mut grads, g, obj.loss, &obj.vars, w);
    }
    opt.step(embedder.params_mut(), &grads, lr)?;
    Ok(out)
}

/// Flow, flow-transformed cloud and optional cycle term for one pair on a fresh tape.
fn extractor_forward<T: Scalar>(
    g: &mut Graph<T>,
    vars: &[Var],
    extractor: &ReferenceExtractor<T>,
    pair: &ScenePair<T>,
    loss: &LossConfig,
) -> Result<(Var, Option<Var>)> {
    let f1 = g.constant(points_matrix(&pair.frame1));
    let f2 = g.constant(points_matrix(&pair.frame2));
    let flow = extractor.forward(g, vars, f1, f2)?;
    let moved = g.add(f1, flow);
    let cc = if loss.cycle_terms.is_empty() {
        None
    } else {
        let source = if loss.cycle_stop_gradient {
            g.constant(g.value(moved).clone())
        } else {
            moved
        };
        let back = extractor.forward(g, vars, source, f1)?;
        cycle_consistency_var(g, flow, back, loss.cycle_terms, loss.epsilon, loss.cycle_reduction)?
    };
    if let Some(c) = cc {
        finite(g.scalar(c).f64(), "cycle consistency")?;
    }
    Ok((moved, cc))
}

fn extractor_phase<T: Scalar>(
    batch: &[&ScenePair<T>],
    parts: &[(Vec<usize>, Vec<usize>)],
    extractor: &mut ReferenceExtractor<T>,
    embedder: Option<&CloudEmbedder<T>>,
    opt: &mut Adam<T>,
    lr: f64,
    loss: &LossConfig,
) -> Result<f64> {
    let mut grads = zero_grads(extractor.params());
    let w = T::one() / T::of(batch.len() as f64);
    let mut mean = 0.0;
    for (pair, (ia, _)) in batch.iter().zip(parts) {
        let obj = extractor_objective(pair, ia, extractor, embedder, loss)?;
        mean += finite(obj.graph.scalar(obj.loss).f64(), "L_h")? / batch.len() as f64;
        accumulate(&mut grads, &obj.graph, obj.loss, &obj.vars, w);
    }
    opt.step(extractor.params_mut(), &grads, lr)?;
    Ok(mean)
}

/// One round on `batch`: the embedder phase (skipped under the chamfer
/// objective) followed by the extractor phase on the same pairs and partitions.
pub fn adversarial_round<T: Scalar>(
    batch: &[&ScenePair<T>],
    state: &mut TrainState<T>,
    config: &TrainConfig,
) -> Result<RoundLog> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let seeds: Vec<u64> = batch.iter().map(|_| state.rng.gen()).collect();
    let parts = batch
        .iter()
        .zip(&seeds)
        .map(|(p, s)| partition_indices(p.frame2.len(), *s))
        .collect::<Result<Vec<_>>>()?;

    let extractor_before = state.extractor.params().fingerprint();
    let embedder_before = state.embedder_fingerprint();

    let mut phase1 = None;
    if let (Some(embedder), Some(opt)) = (state.embedder.as_mut(), state.embedder_opt.as_mut()) {
        for _ in 0..config.embedder_steps {
            let p = embedder_phase(
                batch,
                &parts,
                &state.extractor,
                embedder,
                opt,
                state.lr_embedder,
                &config.loss,
            )?;
            phase1.get_or_insert(p);
        }
    }
    let phase1_batch = fingerprint_batch(batch, &seeds);
    let extractor_after_phase1 = state.extractor.params().fingerprint();
    let embedder_after_phase1 = state.embedder_fingerprint();

    let mut l_h = None;
    for _ in 0..config.extractor_steps {
        let v = extractor_phase(
            batch,
            &parts,
            &mut state.extractor,
            state.embedder.as_ref(),
            &mut state.extractor_opt,
            state.lr_flow,
            &config.loss,
        )?;
        l_h.get_or_insert(v);
    }
    let phase2_batch = fingerprint_batch(batch, &seeds);

    let log = RoundLog {
        epoch: state.epoch,
        round: state.round,
        l_g: phase1.as_ref().map(|p| p.l_g),
        l_h: l_h.expect("at least one extractor step"),
        r_p: phase1.as_ref().map_or_else(Vec::new, |p| p.r_p.clone()),
        r_n: phase1.map_or_else(Vec::new, |p| p.r_n),
        phase1_batch,
        phase2_batch,
        hashes: PhaseHashes {
            extractor_before,
            embedder_before,
            extractor_after_phase1,
            embedder_after_phase1,
            extractor_after_phase2: state.extractor.params().fingerprint(),
            embedder_after_phase2: state.embedder_fingerprint(),
        },
    };
    state.round += 1;
    Ok(log)
}

/// Resamples every pair to `size` points per frame. Correspondence pairs keep
/// matching indices in both frames; object ranges stay contiguous.
pub fn prepare_pairs<T: Scalar>(pairs: &[ScenePair<T>], size: Option<usize>, seed: u64) -> Result<Vec<ScenePair<T>>> {
    let Some(size) = size else {
        return Ok(pairs.to_vec());
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (n, m) = (p.frame1.len(), p.frame2.len());
            if n < size || m < size {
                return Err(Error::contract(format!(
                    "pair {i} has {n}/{m} points per frame but the run uses {size}-point clouds"
                )));
            }
            if n == size && m == size {
                return Ok(p.clone());
            }
            let pick = |rng: &mut ChaCha8Rng, len: usize| {
                let mut idx = index::sample(rng, len, size).into_vec();
                idx.sort_unstable();
                idx
            };
            let i1 = pick(&mut rng, n);
            let i2 = if p.meta.mechanism == Mechanism::Correspondence {
                i1.clone()
            } else {
                pick(&mut rng, m)
            };
            let mut meta = p.meta.clone();
            let mut start = 0;
            for s in meta.object_sizes.iter_mut() {
                let end = start + *s;
                *s = i1.iter().filter(|&&j| j >= start && j < end).count();
                start = end;
            }
            ScenePair::new(p.frame1.select(&i1)?, p.frame2.select(&i2)?, p.gt_flow.select(&i1), meta)
        })
        .collect()
}

/// Mean EPE of `model` over `pairs`.
pub fn validation_epe<T: Scalar, E: FlowExtractor<T>>(model: &E, pairs: &[ScenePair<T>]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::contract("validation set is empty"));
    }
    let mut total = 0.0;
    for p in pairs {
        total += epe(&model.predict_flow(&p.frame1, &p.frame2)?, &p.gt_flow)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Side outputs of [`train_from`].
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// JSON-lines sink receiving one record per round and per epoch.
    pub metrics: Option<&'a mut dyn Write>,
    /// Directory receiving `last.ckpt` after every epoch and `best.ckpt` on improvement.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop once this many epochs are complete, even if `config.epochs` is larger.
    pub stop_after: Option<usize>,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Round(RoundLog),
    Epoch(EpochLog),
}

impl History {
    /// Rebuilds a history from a metrics log written during training.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut h = History::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let record: LogRecord = serde_json::from_str(line)
                .map_err(|e| Error::config(format!("metrics log line {}: {e}", i + 1)))?;
            match record {
                LogRecord::Round(r) => h.rounds.push(r),
                LogRecord::Epoch(e) => h.epochs.push(e),
            }
        }
        Ok(h)
    }
}

fn emit(sink: &mut Option<&mut dyn Write>, record: LogRecord) -> Result<()> {
    if let Some(w) = sink {
        let line = serde_json::to_string(&record).expect("log records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io("metrics log", e))?;
    }
    Ok(())
}

/// Feeds one epoch's validation EPE to the plateau scheduler: snapshots the
/// extractor on improvement, or scales both rates and logs the event.
pub fn observe_validation<T: Scalar>(state: &mut TrainState<T>, config: &TrainConfig, val_epe: f64) -> PlateauOutcome {
    let outcome = state.scheduler.observe(val_epe);
    match outcome {
        PlateauOutcome::Improved => state.best_extractor = Some(state.extractor.params().flatten()),
        PlateauOutcome::Reduce => {
            state.lr_flow *= config.plateau_factor;
            state.lr_embedder *= config.plateau_factor;
            state.lr_events.push(LrEvent {
                epoch: state.epoch,
                lr_flow: state.lr_flow,
                lr_embedder: state.lr_embedder,
            });
        }
        PlateauOutcome::Waiting => {}
    }
    outcome
}

/// Trains from scratch until `config.epochs`.
pub fn train<T: Scalar>(
    train_set: &[ScenePair<T>],
    val_set: &[ScenePair<T>],
    config: &TrainConfig,
) -> Result<(TrainState<T>, History)> {
    train_from(TrainState::new(config)?, train_set, val_set, config, TrainOptions::default())
}

/// Continues `state` until `config.epochs` (or `options.stop_after`) epochs are complete.
pub fn train_from<T: Scalar>(
    mut state: TrainState<T>,
    train_set: &[ScenePair<T>],
    val_set: &[ScenePair<T>],
    config: &TrainConfig,
    mut options: TrainOptions,
) -> Result<(TrainState<T>, History)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::contract("training and validation sets must be nonempty"));
    }
    let train_set = prepare_pairs(train_set, config.cloud_size, derive_seed(config.seed, 4))?;
    let val_set = prepare_pairs(val_set, config.cloud_size, derive_seed(config.seed, 5))?;
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let until = options.stop_after.map_or(config.epochs, |s| s.min(config.epochs));
    let mut history = History::default();
    while state.epoch < until {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut state.rng);
        let (mut sum_g, mut sum_h, mut rounds) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&ScenePair<T>> = chunk.iter().map(|&i| &train_set[i]).collect();
            let log = adversarial_round(&batch, &mut state, config)?;
            sum_g += log.l_g.unwrap_or(0.0);
            sum_h += log.l_h;
            rounds += 1;
            emit(&mut options.metrics, LogRecord::Round(log.clone()))?;
            history.rounds.push(log);
        }
        let val_epe = validation_epe(&state.extractor, &val_set)?;
        let outcome = observe_validation(&mut state, config, val_epe);
        let log = EpochLog {
            epoch: state.epoch,
            mean_l_g: state.embedder.as_ref().map(|_| sum_g / rounds as f64),
            mean_l_h: sum_h / rounds as f64,
            val_epe,
            lr_flow: state.lr_flow,
            lr_embedder: state.lr_embedder,
            lr_reduced: outcome == PlateauOutcome::Reduce,
            improved: outcome == PlateauOutcome::Improved,
        };
        state.epoch += 1;
        emit(&mut options.metrics, LogRecord::Epoch(log.clone()))?;
        history.epochs.push(log);
        if let Some(dir) = &options.checkpoint_dir {
            crate::checkpoint::save_checkpoint(&state, config, dir.join("last.ckpt"))?;
            if outcome == PlateauOutcome::Improved {
                crate::checkpoint::save_checkpoint(&state, config, dir.join("best.ckpt"))?;
            }
        }
    }
    Ok((state, history))
}

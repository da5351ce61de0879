//! Experiment runners: loss ablations, the train/test mechanism matrix and
//! baseline comparison. Runners take in-memory datasets; path handling lives
//! in [`ExperimentSpec`] and the command line.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cloud::{Mechanism, ScenePair};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Evaluation};
use crate::flowmodels::{NearestNeighborFlow, ZeroFlow};
use crate::losses::{CycleTerms, Multiscale};
use crate::metrics::{mean_report, MetricReport};
use crate::scalar::Scalar;
use crate::training::{train, History, Objective, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Eval,
    CycleAblation,
    MultiscaleAblation,
    MechanismMatrix,
    BaselineCompare,
}

/// File-level description of an experiment, as read by the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub train_data: Option<PathBuf>,
    #[serde(default)]
    pub val_data: Option<PathBuf>,
    #[serde(default)]
    pub test_data: Option<PathBuf>,
    /// Mechanism matrix inputs: correspondence and resampling versions of the
    /// same scenes.
    #[serde(default)]
    pub correspondence_train: Option<PathBuf>,
    #[serde(default)]
    pub resampling_train: Option<PathBuf>,
    #[serde(default)]
    pub correspondence_test: Option<PathBuf>,
    #[serde(default)]
    pub resampling_test: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentSpec {
    /// Checks kind-specific fields and that referenced paths exist.
    pub fn validate(&self) -> Result<()> {
        let need = |field: &Option<PathBuf>, name: &str| -> Result<()> {
            match field {
                None => Err(Error::config(format!("{:?} experiments need `{name}`", self.kind))),
                Some(p) if !p.exists() => Err(Error::config(format!("`{name}` path {} does not exist", p.display()))),
                Some(_) => Ok(()),
            }
        };
        match self.kind {
            ExperimentKind::Eval => {
                need(&self.checkpoint, "checkpoint")?;
                need(&self.test_data, "test_data")?;
            }
            ExperimentKind::CycleAblation | ExperimentKind::MultiscaleAblation | ExperimentKind::BaselineCompare => {
                need(&self.train_data, "train_data")?;
                need(&self.test_data, "test_data")?;
            }
            ExperimentKind::MechanismMatrix => {
                need(&self.correspondence_train, "correspondence_train")?;
                need(&self.resampling_train, "resampling_train")?;
                need(&self.correspondence_test, "correspondence_test")?;
                need(&self.resampling_test, "resampling_test")?;
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        Ok(())
    }
}

/// Training, validation and test pairs for one experiment.
pub struct Splits<'a, T> {
    pub train: &'a [ScenePair<T>],
    pub val: &'a [ScenePair<T>],
    pub test: &'a [ScenePair<T>],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub config: TrainConfig,
    /// `Err` carries the failure message of a row that did not train.
    pub outcome: std::result::Result<RunOutcome, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub test: Evaluation,
    pub history: History,
}

impl RunResult {
    pub fn report(&self) -> Option<MetricReport> {
        self.outcome.as_ref().ok().and_then(|o| o.test.mean)
    }
}

/// Trains on `splits.train` with `config` and evaluates the best-validation model on `splits.test`.
pub fn train_and_evaluate<T: Scalar>(splits: &Splits<T>, config: &TrainConfig) -> Result<RunOutcome> {
    let (state, history) = train(splits.train, splits.val, config)?;
    let model = state.best_model()?;
    let prepared = crate::training::prepare_pairs(splits.test, config.cloud_size, config.seed ^ 0x7e57)?;
    Ok(RunOutcome {
        test: evaluate(&model, &prepared),
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub runs: Vec<RunResult>,
}

impl AblationRow {
    /// Mean over the seeds that trained; `None` if all failed.
    pub fn mean(&self) -> Option<MetricReport> {
        let reports: Vec<MetricReport> = self.runs.iter().filter_map(RunResult::report).collect();
        mean_report(&reports)
    }

    pub fn failed(&self) -> bool {
        self.runs.iter().any(|r| r.outcome.is_err())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub kind: ExperimentKind,
    pub rows: Vec<AblationRow>,
}

/// Row configurations of an ablation: the base config with one field changed.
pub fn ablation_configs(kind: ExperimentKind, base: &TrainConfig) -> Result<Vec<(String, TrainConfig)>> {
    match kind {
        ExperimentKind::CycleAblation => Ok(CycleTerms::ABLATION_ROWS
            .iter()
            .map(|&terms| {
                let mut c = base.clone();
                c.loss.cycle_terms = terms;
                (terms.label(), c)
            })
            .collect()),
        ExperimentKind::MultiscaleAblation => Ok(Multiscale::ALL
            .iter()
            .map(|&m| {
                let mut c = base.clone();
                c.loss.multiscale = m;
                (m.label().to_string(), c)
            })
            .collect()),
        other => Err(Error::config(format!("{other:?} is not an ablation"))),
    }
}

/// One training run per row and seed; a failing run is recorded and does not stop the others.
pub fn run_ablation<T: Scalar>(
    kind: ExperimentKind,
    base: &TrainConfig,
    splits: &Splits<T>,
    seeds: &[u64],
) -> Result<AblationTable> {
    let rows = ablation_configs(kind, base)?
        .into_iter()
        .map(|(label, config)| AblationRow {
            label,
            runs: seeds
                .iter()
                .map(|&seed| {
                    let config = TrainConfig { seed, ..config.clone() };
                    RunResult {
                        seed,
                        outcome: train_and_evaluate(splits, &config).map_err(|e| e.to_string()),
                        config,
                    }
                })
                .collect(),
        })
        .collect();
    Ok(AblationTable { kind, rows })
}

/// Pairs generated from the same scenes under the two mechanisms.
pub struct MechanismData<'a, T> {
    pub correspondence: Splits<'a, T>,
    pub resampling: Splits<'a, T>,
}

fn check_same_scenes<T>(a: &[ScenePair<T>], b: &[ScenePair<T>], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::config(format!("{what}: datasets differ in size ({} vs {})", a.len(), b.len())));
    }
    for (i, (p, q)) in a.iter().zip(b).enumerate() {
        if p.meta.seed != q.meta.seed {
            return Err(Error::config(format!(
                "{what}: scene seeds differ at sample {i} ({} vs {})",
                p.meta.seed, q.meta.seed
            )));
        }
    }
    Ok(())
}

fn check_mechanism<T>(pairs: &[ScenePair<T>], m: Mechanism, what: &str) -> Result<()> {
    match pairs.iter().position(|p| p.meta.mechanism != m) {
        Some(i) => Err(Error::config(format!("{what}: sample {i} is not a {m:?} pair"))),
        None => Ok(()),
    }
}

/// Mean EPE of train mechanism (row) evaluated on test mechanism (column),
/// in the order correspondence, resampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismMatrix {
    pub epe: [[f64; 2]; 2],
    /// `per_seed[s][train][test]`
    pub per_seed: Vec<[[f64; 2]; 2]>,
    pub seeds: Vec<u64>,
    pub config: TrainConfig,
}

impl MechanismMatrix {
    pub const LABELS: [&'static str; 4] = ["C->C", "C->R", "R->C", "R->R"];

    pub fn cells(&self) -> [f64; 4] {
        [self.epe[0][0], self.epe[0][1], self.epe[1][0], self.epe[1][1]]
    }

    /// Cross-mechanism degradation of the model trained on `train` (0 = C, 1 = R).
    pub fn degradation(&self, train: usize) -> f64 {
        self.epe[train][1 - train] / self.epe[train][train]
    }
}

/// Models trained under each mechanism, for qualitative plots.
pub struct MatrixModels<T> {
    pub correspondence: crate::flowmodels::ReferenceExtractor<T>,
    pub resampling: crate::flowmodels::ReferenceExtractor<T>,
}

pub fn run_mechanism_matrix<T: Scalar>(
    config: &TrainConfig,
    data: &MechanismData<T>,
    seeds: &[u64],
) -> Result<(MechanismMatrix, MatrixModels<T>)> {
    let (c, r) = (&data.correspondence, &data.resampling);
    check_same_scenes(c.train, r.train, "training sets")?;
    check_same_scenes(c.val, r.val, "validation sets")?;
    check_same_scenes(c.test, r.test, "test sets")?;
    for (pairs, m, what) in [
        (c.train, Mechanism::Correspondence, "correspondence training set"),
        (c.test, Mechanism::Correspondence, "correspondence test set"),
        (r.train, Mechanism::Resampling, "resampling training set"),
        (r.test, Mechanism::Resampling, "resampling test set"),
    ] {
        check_mechanism(pairs, m, what)?;
    }
    if seeds.is_empty() {
        return Err(Error::config("at least one seed is required"));
    }
    let tests = [
        crate::training::prepare_pairs(c.test, config.cloud_size, 0x7e57)?,
        crate::training::prepare_pairs(r.test, config.cloud_size, 0x7e57)?,
    ];
    let mut per_seed = Vec::new();
    let mut models = Vec::new();
    for &seed in seeds {
        let cfg = TrainConfig { seed, ..config.clone() };
        let mut cell = [[0.0; 2]; 2];
        models.clear();
        for (i, splits) in [c, r].into_iter().enumerate() {
            let (state, _) = train(splits.train, splits.val, &cfg)?;
            let model = state.best_model()?;
            for (j, test) in tests.iter().enumerate() {
                cell[i][j] = evaluate(&model, test)
                    .mean_epe()
                    .ok_or_else(|| Error::contract("no test sample could be evaluated"))?;
            }
            models.push(model);
        }
        per_seed.push(cell);
    }
    let n = per_seed.len() as f64;
    let mut epe = [[0.0; 2]; 2];
    for cell in &per_seed {
        for i in 0..2 {
            for j in 0..2 {
                epe[i][j] += cell[i][j] / n;
            }
        }
    }
    let resampling = models.pop().expect("two models");
    let correspondence = models.pop().expect("two models");
    Ok((
        MechanismMatrix {
            epe,
            per_seed,
            seeds: seeds.to_vec(),
            config: config.clone(),
        },
        MatrixModels {
            correspondence,
            resampling,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    /// `(method, evaluation)` for zero flow, nearest neighbour, chamfer training and adversarial training.
    pub methods: Vec<(String, Evaluation)>,
}

/// Compares non-learned baselines with the chamfer and adversarial objectives on the same data.
pub fn baseline_compare<T: Scalar>(config: &TrainConfig, splits: &Splits<T>) -> Result<BaselineComparison> {
    let test = crate::training::prepare_pairs(splits.test, config.cloud_size, 0x7e57)?;
    let mut methods = vec![
        ("zero_flow".to_string(), evaluate(&ZeroFlow, &test)),
        ("nearest_neighbor".to_string(), evaluate(&NearestNeighborFlow, &test)),
    ];
    for (name, objective) in [("chamfer_cycle", Objective::ChamferCycle), ("adversarial", Objective::Adversarial)] {
        let cfg = TrainConfig {
            objective,
            ..config.clone()
        };
        let (state, _) = train(splits.train, splits.val, &cfg)?;
        methods.push((name.to_string(), evaluate(&state.best_model()?, &test)));
    }
    Ok(BaselineComparison { methods })
}

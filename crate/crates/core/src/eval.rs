//! Dataset-level evaluation of any [`FlowPredictor`].

use serde::{Deserialize, Serialize};

use crate::cloud::ScenePair;
use crate::flowmodels::FlowPredictor;
use crate::metrics::{mean_report, report, MetricReport};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub index: usize,
    pub seed: u64,
    /// Absent when the sample was skipped.
    pub report: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub samples: Vec<SampleResult>,
    /// Unweighted mean over evaluated samples; absent if every sample was skipped.
    pub mean: Option<MetricReport>,
    pub skipped: usize,
}

impl Evaluation {
    pub fn mean_epe(&self) -> Option<f64> {
        self.mean.map(|m| m.epe)
    }
}

/// Runs `model` on every pair. Samples the model rejects are recorded and skipped.
pub fn evaluate<T: Scalar, M: FlowPredictor<T> + ?Sized>(model: &M, dataset: &[ScenePair<T>]) -> Evaluation {
    let samples: Vec<SampleResult> = dataset
        .iter()
        .enumerate()
        .map(|(index, pair)| {
            let outcome = model
                .predict(&pair.frame1, &pair.frame2)
                .and_then(|pred| report(&pred, &pair.gt_flow));
            let (report, error) = match outcome {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SampleResult {
                index,
                seed: pair.meta.seed,
                report,
                error,
            }
        })
        .collect();
    let reports: Vec<MetricReport> = samples.iter().filter_map(|s| s.report).collect();
    Evaluation {
        skipped: samples.len() - reports.len(),
        mean: mean_report(&reports),
        samples,
    }
}

//! End point error and threshold accuracies. Always evaluated in `f64`.

use serde::{Deserialize, Serialize};

use crate::cloud::{FlowField, ScenePair};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const ACC01: (f64, f64) = (0.1, 0.1);
pub const ACC005: (f64, f64) = (0.05, 0.05);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean end point error in meters.
    pub epe: f64,
    pub acc01: f64,
    pub acc005: f64,
    pub n_points: usize,
}

fn check_sizes<T: Scalar>(pred: &FlowField<T>, target: &FlowField<T>) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::contract(format!(
            "prediction has {} vectors, target has {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::contract("metrics need at least one flow vector"));
    }
    Ok(())
}

fn error_norms<'a, T: Scalar>(
    pred: &'a FlowField<T>,
    target: &'a FlowField<T>,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    pred.vectors()
        .iter()
        .zip(target.vectors())
        .map(|(p, t)| {
            let mut err = 0.0;
            let mut norm = 0.0;
            for d in 0..3 {
                let (pd, td) = (p[d].f64(), t[d].f64());
                err += (pd - td) * (pd - td);
                norm += td * td;
            }
            (err.sqrt(), norm.sqrt())
        })
}

/// Mean Euclidean distance between predicted and target flow vectors.
pub fn epe<T: Scalar>(pred: &FlowField<T>, target: &FlowField<T>) -> Result<f64> {
    check_sizes(pred, target)?;
    let total: f64 = error_norms(pred, target).map(|(e, _)| e).sum();
    Ok(total / pred.len() as f64)
}

/// Fraction of points whose error is below `abs_thresh` meters or below
/// `rel_thresh` times the target norm. Both comparisons are strict.
pub fn accuracy<T: Scalar>(
    pred: &FlowField<T>,
    target: &FlowField<T>,
    abs_thresh: f64,
    rel_thresh: f64,
) -> Result<f64> {
    check_sizes(pred, target)?;
    if !(abs_thresh > 0.0) || !(rel_thresh >= 0.0) {
        return Err(Error::contract(format!(
            "accuracy thresholds must be positive (got abs {abs_thresh}, rel {rel_thresh})"
        )));
    }
    let hits = error_norms(pred, target)
        .filter(|&(err, norm)| err < abs_thresh || err < rel_thresh * norm)
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn report<T: Scalar>(pred: &FlowField<T>, target: &FlowField<T>) -> Result<MetricReport> {
    Ok(MetricReport {
        epe: epe(pred, target)?,
        acc01: accuracy(pred, target, ACC01.0, ACC01.1)?,
        acc005: accuracy(pred, target, ACC005.0, ACC005.1)?,
        n_points: pred.len(),
    })
}

/// Metrics of the all-zero prediction; its EPE is the mean ground-truth flow magnitude.
pub fn zero_flow_baseline<T: Scalar>(pair: &ScenePair<T>) -> Result<MetricReport> {
    report(&FlowField::zeros(pair.gt_flow.len()), &pair.gt_flow)
}

/// Point-weighted mean of several reports.
pub fn mean_report(reports: &[MetricReport]) -> Option<MetricReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    Some(MetricReport {
        epe: reports.iter().map(|r| r.epe).sum::<f64>() / n,
        acc01: reports.iter().map(|r| r.acc01).sum::<f64>() / n,
        acc005: reports.iter().map(|r| r.acc005).sum::<f64>() / n,
        n_points: reports.iter().map(|r| r.n_points).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{Mechanism, PointCloud, SceneMeta};
    use proptest::prelude::*;

    fn field(v: &[[f64; 3]]) -> FlowField<f64> {
        FlowField::new(v.to_vec()).unwrap()
    }

    #[test]
    fn epe_examples() {
        let t = field(&[[0.3, -1.0, 2.0], [5.0, 0.0, 1.0]]);
        assert_eq!(epe(&t, &t).unwrap(), 0.0);

        let t = field(&[[1.0, 0.0, 0.0]; 4]);
        assert_eq!(epe(&FlowField::zeros(4), &t).unwrap(), 1.0);

        let pred = field(&[[3.0, 4.0, 0.0], [1.0, 1.0, 1.0]]);
        let target = field(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        assert!((epe(&pred, &target).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn size_mismatch_is_contract_error() {
        let a = FlowField::<f32>::zeros(2);
        let b = FlowField::<f32>::zeros(3);
        assert!(matches!(epe(&a, &b), Err(Error::Contract(_))));
        assert!(matches!(accuracy(&a, &b, 0.1, 0.1), Err(Error::Contract(_))));
        assert!(epe(&FlowField::<f32>::zeros(0), &FlowField::zeros(0)).is_err());
    }

    #[test]
    fn accuracy_examples() {
        // error 0.05 against a unit target
        let t = field(&[[1.0, 0.0, 0.0]]);
        let p = field(&[[1.05, 0.0, 0.0]]);
        assert_eq!(accuracy(&p, &t, 0.1, 0.1).unwrap(), 1.0);

        // error 0.2 against a target of norm 3 passes the relative test
        let t = field(&[[3.0, 0.0, 0.0]]);
        let p = field(&[[3.0, 0.2, 0.0]]);
        assert_eq!(accuracy(&p, &t, 0.1, 0.1).unwrap(), 1.0);

        let t = field(&[[1.0, 0.0, 0.0]]);
        let p = field(&[[1.0, 0.2, 0.0]]);
        assert_eq!(accuracy(&p, &t, 0.1, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn zero_target_only_absolute_criterion() {
        let t = field(&[[0.0; 3], [0.0; 3]]);
        let p = field(&[[0.2, 0.0, 0.0], [0.05, 0.0, 0.0]]);
        assert_eq!(accuracy(&p, &t, 0.1, 1e9).unwrap(), 0.5);
    }

    #[test]
    fn zero_flow_baseline_examples() {
        let cloud = PointCloud::new(vec![[0.0f64; 3]; 3]).unwrap();
        let meta = SceneMeta {
            mechanism: Mechanism::Resampling,
            n_objects: 1,
            seed: 0,
            object_sizes: vec![3],
        };
        let pair = ScenePair::new(cloud.clone(), cloud.clone(), FlowField::zeros(3), meta.clone())
            .unwrap();
        assert_eq!(zero_flow_baseline(&pair).unwrap().epe, 0.0);
        let pair = ScenePair::new(cloud.clone(), cloud, field(&[[0.0, 2.0, 0.0]; 3]), meta).unwrap();
        assert_eq!(zero_flow_baseline(&pair).unwrap().epe, 2.0);
    }

    fn vec3() -> impl Strategy<Value = [f64; 3]> {
        [-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64]
    }

    proptest! {
        #[test]
        fn permutation_and_symmetry(
            rows in prop::collection::vec((vec3(), vec3()), 1..40),
            shift in 0usize..40,
        ) {
            let pred = field(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
            let target = field(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
            let n = rows.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let e = epe(&pred, &target).unwrap();
            let ep = epe(&pred.permuted(&perm), &target.permuted(&perm)).unwrap();
            prop_assert!((e - ep).abs() <= 1e-12 * (1.0 + e));
            prop_assert_eq!(e, epe(&target, &pred).unwrap());
            let a = accuracy(&pred, &target, 0.5, 0.2).unwrap();
            let ap = accuracy(&pred.permuted(&perm), &target.permuted(&perm), 0.5, 0.2).unwrap();
            prop_assert_eq!(a, ap);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn threshold_limits(rows in prop::collection::vec((vec3(), vec3()), 1..40)) {
            let pred = field(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
            let target = field(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
            prop_assert_eq!(accuracy(&pred, &target, f64::INFINITY, 0.0).unwrap(), 1.0);
            let abs_only = pred
                .vectors()
                .iter()
                .zip(target.vectors())
                .filter(|(p, t)| {
                    let e: f64 = (0..3).map(|d| (p[d] - t[d]).powi(2)).sum();
                    e.sqrt() < 1.5
                })
                .count() as f64
                / rows.len() as f64;
            prop_assert_eq!(accuracy(&pred, &target, 1.5, 0.0).unwrap(), abs_only);
        }
    }
}

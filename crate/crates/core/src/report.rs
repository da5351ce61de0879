//! Report files: a tab-separated results table, SVG curves and flow scatter plots.
//!
//! Results table schema (`results.tsv`, header row first):
//!
//! | column     | meaning                                              |
//! |------------|------------------------------------------------------|
//! | experiment | experiment kind or label                             |
//! | row        | configuration row (ablation setting, matrix cell...) |
//! | seed       | training seed, empty for aggregate rows              |
//! | status     | `ok`, or `failed: <message>`                         |
//! | epe        | mean end point error, empty when failed              |
//! | acc01      | Acc01 fraction                                       |
//! | acc005     | Acc005 fraction                                      |
//! | n_points   | evaluated points                                     |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloud::{FlowField, ScenePair};
use crate::error::{Error, Result};
use crate::experiments::{AblationTable, BaselineComparison, MechanismMatrix};
use crate::metrics::MetricReport;
use crate::scalar::Scalar;
use crate::training::History;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub row: String,
    pub seed: Option<u64>,
    pub status: String,
    pub epe: Option<f64>,
    pub acc01: Option<f64>,
    pub acc005: Option<f64>,
    pub n_points: Option<usize>,
}

impl ResultRow {
    pub fn ok(experiment: &str, row: &str, seed: Option<u64>, r: MetricReport) -> Self {
        Self {
            experiment: experiment.into(),
            row: row.into(),
            seed,
            status: "ok".into(),
            epe: Some(r.epe),
            acc01: Some(r.acc01),
            acc005: Some(r.acc005),
            n_points: Some(r.n_points),
        }
    }

    pub fn failed(experiment: &str, row: &str, seed: Option<u64>, message: &str) -> Self {
        let clean: String = message.chars().map(|c| if c.is_control() { ' ' } else { c }).collect();
        Self {
            experiment: experiment.into(),
            row: row.into(),
            seed,
            status: format!("failed: {clean}"),
            epe: None,
            acc01: None,
            acc005: None,
            n_points: None,
        }
    }
}

pub fn write_results_table(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(io)?;
    if rows.is_empty() {
        w.write_record(["experiment", "row", "seed", "status", "epe", "acc01", "acc005", "n_points"])
            .map_err(io)?;
    }
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_table(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn ablation_rows(table: &AblationTable) -> Vec<ResultRow> {
    let experiment = serde_json::to_value(table.kind).expect("kind serializes");
    let experiment = experiment.as_str().unwrap_or("ablation");
    let mut out = Vec::new();
    for row in &table.rows {
        for run in &row.runs {
            out.push(match &run.outcome {
                Ok(o) => match o.test.mean {
                    Some(m) => ResultRow::ok(experiment, &row.label, Some(run.seed), m),
                    None => ResultRow::failed(experiment, &row.label, Some(run.seed), "no test sample evaluated"),
                },
                Err(e) => ResultRow::failed(experiment, &row.label, Some(run.seed), e),
            });
        }
        if let Some(m) = row.mean() {
            out.push(ResultRow::ok(experiment, &format!("{} (mean)", row.label), None, m));
        }
    }
    out
}

pub fn matrix_rows(m: &MechanismMatrix) -> Vec<ResultRow> {
    let cell = |experiment: &str, label: &str, seed: Option<u64>, epe: f64| ResultRow {
        experiment: experiment.into(),
        row: label.into(),
        seed,
        status: "ok".into(),
        epe: Some(epe),
        acc01: None,
        acc005: None,
        n_points: None,
    };
    let mut out = Vec::new();
    for (seed, c) in m.seeds.iter().zip(&m.per_seed) {
        let flat = [c[0][0], c[0][1], c[1][0], c[1][1]];
        for (label, v) in MechanismMatrix::LABELS.iter().zip(flat) {
            out.push(cell("mechanism_matrix", label, Some(*seed), v));
        }
    }
    for (label, v) in MechanismMatrix::LABELS.iter().zip(m.cells()) {
        out.push(cell("mechanism_matrix", &format!("{label} (mean)"), None, v));
    }
    out
}

pub fn baseline_rows(b: &BaselineComparison) -> Vec<ResultRow> {
    b.methods
        .iter()
        .map(|(name, e)| match e.mean {
            Some(m) => ResultRow::ok("baseline_compare", name, None, m),
            None => ResultRow::failed("baseline_compare", name, None, "no test sample evaluated"),
        })
        .collect()
}

/// Published large-scale figures, reported next to desk-scale results for orientation only.
pub const REFERENCE_NOTE: &str = "published large-scale reference values; not reproduced at desk scale";

pub fn reference_rows() -> Vec<(String, String, f64)> {
    let cycle = [
        ("none", 0.4920),
        ("cosine", 0.4302),
        ("mse", 0.4405),
        ("l2", 0.3786),
        ("cosine+mse", 0.4200),
        ("cosine+l2", 0.3497),
    ];
    let scale = [
        ("none", 0.4043),
        ("inv_sqrt", 0.3497),
        ("inv_linear", 0.3850),
        ("inv_square", 0.4137),
    ];
    let matrix = [("C->C", 0.0575), ("C->R", 0.4747), ("R->C", 0.1701), ("R->R", 0.2644)];
    let mut out = Vec::new();
    out.extend(cycle.iter().map(|(k, v)| ("cycle_ablation".to_string(), k.to_string(), *v)));
    out.extend(scale.iter().map(|(k, v)| ("multiscale_ablation".to_string(), k.to_string(), *v)));
    out.extend(matrix.iter().map(|(k, v)| ("mechanism_matrix".to_string(), k.to_string(), *v)));
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `reference.tsv` with the published values for `experiment`.
pub fn write_reference(dir: &Path, experiment: &str) -> Result<PathBuf> {
    let mut text = format!("# {REFERENCE_NOTE}\nexperiment\trow\tepe\n");
    for (e, row, v) in reference_rows().into_iter().filter(|(e, _, _)| e == experiment) {
        let _ = writeln!(text, "{e}\t{row}\t{v}");
    }
    let path = dir.join("reference.tsv");
    write_text(&path, &text)?;
    Ok(path)
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 56.0;

fn bounds(series: &[Series]) -> Option<(f64, f64, f64, f64)> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if pts.is_empty() {
        return None;
    }
    let fold = |f: fn(&(f64, f64)) -> f64| {
        pts.iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (mut x0, mut x1) = fold(|p| p.0);
    let (mut y0, mut y1) = fold(|p| p.1);
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    Some((x0, x1, y0, y1))
}

fn frame(title: &str, x_label: &str, y_label: &str, b: Option<(f64, f64, f64, f64)>) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n\
         <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>\n",
        W / 2.0,
        escape(title),
        W - 2.0 * PAD,
        H - 2.0 * PAD,
        W / 2.0,
        H - 12.0,
        escape(x_label),
        H / 2.0,
        H / 2.0,
        escape(y_label),
    );
    match b {
        Some((x0, x1, y0, y1)) => {
            for (v, x, y, anchor) in [
                (x0, PAD, H - PAD + 16.0, "start"),
                (x1, W - PAD, H - PAD + 16.0, "end"),
                (y0, PAD - 4.0, H - PAD, "end"),
                (y1, PAD - 4.0, PAD + 10.0, "end"),
            ] {
                let _ = writeln!(s, "<text x=\"{x}\" y=\"{y}\" text-anchor=\"{anchor}\">{}</text>", tick(v));
            }
        }
        None => {
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">no data</text>",
                W / 2.0,
                H / 2.0
            );
        }
    }
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn project(b: (f64, f64, f64, f64), (x, y): (f64, f64)) -> (f64, f64) {
    let (x0, x1, y0, y1) = b;
    (
        PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD),
        H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD),
    )
}

fn legend(s: &mut String, series: &[Series]) {
    for (i, ser) in series.iter().enumerate() {
        let y = PAD + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{}</text>",
            W - PAD - 150.0,
            y - 9.0,
            COLORS[i % COLORS.len()],
            W - PAD - 135.0,
            y,
            escape(&ser.label)
        );
    }
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let b = bounds(series);
    let mut s = frame(title, x_label, y_label, b);
    if let Some(b) = b {
        for (i, ser) in series.iter().enumerate() {
            let path: Vec<String> = ser
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&p| {
                    let (x, y) = project(b, p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            if !path.is_empty() {
                let _ = writeln!(
                    s,
                    "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
                    COLORS[i % COLORS.len()],
                    path.join(" ")
                );
            }
        }
    }
    legend(&mut s, series);
    s.push_str("</svg>\n");
    s
}

pub fn scatter_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let b = bounds(series);
    let mut s = frame(title, x_label, y_label, b);
    if let Some(b) = b {
        for (i, ser) in series.iter().enumerate() {
            for &p in ser.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
                let (x, y) = project(b, p);
                let _ = writeln!(
                    s,
                    "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2\" fill=\"{}\" fill-opacity=\"0.6\"/>",
                    COLORS[i % COLORS.len()]
                );
            }
        }
    }
    legend(&mut s, series);
    s.push_str("</svg>\n");
    s
}

/// Loss and validation-EPE curves of one training run.
pub fn emit_training_curves(history: &History, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rounds = |f: &dyn Fn(&crate::training::RoundLog) -> Option<f64>| -> Vec<(f64, f64)> {
        history
            .rounds
            .iter()
            .enumerate()
            .filter_map(|(i, r)| f(r).map(|v| (i as f64, v)))
            .collect()
    };
    let mut losses = vec![Series {
        label: "L_h".into(),
        points: rounds(&|r| Some(r.l_h)),
    }];
    let l_g = rounds(&|r| r.l_g);
    if !l_g.is_empty() || history.rounds.is_empty() {
        losses.push(Series {
            label: "L_g".into(),
            points: l_g,
        });
    }
    let epe = vec![Series {
        label: "validation EPE".into(),
        points: history.epochs.iter().map(|e| (e.epoch as f64, e.val_epe)).collect(),
    }];
    let loss_path = dir.join("loss_curve.svg");
    let epe_path = dir.join("epe_curve.svg");
    write_text(&loss_path, &line_chart("training losses", "round", "loss", &losses))?;
    write_text(&epe_path, &line_chart("validation EPE", "epoch", "EPE", &epe))?;
    Ok(vec![loss_path, epe_path])
}

/// Top-down (x, y) view of frame 1 moved by the ground-truth and by the predicted flow.
pub fn flow_scatter<T: Scalar>(title: &str, pair: &ScenePair<T>, predicted: &FlowField<T>) -> String {
    let moved = |flow: &FlowField<T>| -> Vec<(f64, f64)> {
        pair.frame1
            .points()
            .iter()
            .zip(flow.vectors())
            .map(|(p, f)| ((p[0] + f[0]).f64(), (p[1] + f[1]).f64()))
            .collect()
    };
    let series = [
        Series {
            label: "frame 1".into(),
            points: pair.frame1.points().iter().map(|p| (p[0].f64(), p[1].f64())).collect(),
        },
        Series {
            label: "frame 1 + true flow".into(),
            points: moved(&pair.gt_flow),
        },
        Series {
            label: "frame 1 + predicted".into(),
            points: moved(predicted),
        },
    ];
    scatter_chart(title, "x", "y", &series)
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    write_text(path, svg)
}

/// Serializes any resolved configuration next to the results.
pub fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report values serialize");
    write_text(path, &text)
}

/// Prediction shown in a qualitative panel.
pub struct Panel<T> {
    pub name: String,
    pub pair: ScenePair<T>,
    pub predicted: FlowField<T>,
}

/// Everything [`emit_report`] knows how to write.
pub enum Results<'a, T> {
    Training {
        config: &'a crate::training::TrainConfig,
        history: &'a History,
    },
    Evaluation {
        label: &'a str,
        evaluation: &'a crate::eval::Evaluation,
        panels: Vec<Panel<T>>,
    },
    Ablation(&'a AblationTable),
    Matrix {
        matrix: &'a MechanismMatrix,
        /// One panel per train/test cell.
        panels: Vec<Panel<T>>,
    },
    Baseline(&'a BaselineComparison),
}

/// Writes the results table, resolved configuration, curves and panels for `results` into `dir`.
pub fn emit_report<T: Scalar>(results: &Results<T>, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let table = |rows: Vec<ResultRow>, files: &mut Vec<PathBuf>| -> Result<()> {
        let path = dir.join("results.tsv");
        write_results_table(&rows, &path)?;
        files.push(path);
        Ok(())
    };
    let panels_out = |panels: &[Panel<T>], files: &mut Vec<PathBuf>| -> Result<()> {
        for p in panels {
            let path = dir.join(format!("scatter_{}.svg", file_safe(&p.name)));
            write_svg(&path, &flow_scatter(&p.name, &p.pair, &p.predicted))?;
            files.push(path);
        }
        Ok(())
    };
    match results {
        Results::Training { config, history } => {
            let path = dir.join("config.json");
            write_json(config, &path)?;
            files.push(path);
            files.extend(emit_training_curves(history, dir)?);
            let rows = history
                .epochs
                .iter()
                .map(|e| ResultRow {
                    experiment: "train".into(),
                    row: format!("epoch {}", e.epoch),
                    seed: Some(config.seed),
                    status: "ok".into(),
                    epe: Some(e.val_epe),
                    acc01: None,
                    acc005: None,
                    n_points: None,
                })
                .collect();
            table(rows, &mut files)?;
        }
        Results::Evaluation {
            label,
            evaluation,
            panels,
        } => {
            let mut rows: Vec<ResultRow> = evaluation
                .samples
                .iter()
                .map(|s| {
                    let row = format!("sample {}", s.index);
                    match (&s.report, &s.error) {
                        (Some(r), _) => ResultRow::ok(label, &row, Some(s.seed), *r),
                        (None, e) => ResultRow::failed(label, &row, Some(s.seed), e.as_deref().unwrap_or("skipped")),
                    }
                })
                .collect();
            if let Some(m) = evaluation.mean {
                rows.push(ResultRow::ok(label, "mean", None, m));
            }
            table(rows, &mut files)?;
            let path = dir.join("evaluation.json");
            write_json(evaluation, &path)?;
            files.push(path);
            panels_out(panels, &mut files)?;
        }
        Results::Ablation(t) => {
            table(ablation_rows(t), &mut files)?;
            let configs: Vec<_> = t
                .rows
                .iter()
                .flat_map(|r| r.runs.iter().map(move |run| (r.label.clone(), run.seed, run.config.clone())))
                .collect();
            let path = dir.join("configs.json");
            write_json(&configs, &path)?;
            files.push(path);
            for row in &t.rows {
                for run in &row.runs {
                    if let Ok(o) = &run.outcome {
                        let sub = dir.join(format!("{}_seed{}", file_safe(&row.label), run.seed));
                        files.extend(emit_training_curves(&o.history, &sub)?);
                    }
                }
            }
            let kind = serde_json::to_value(t.kind).expect("kind serializes");
            files.push(write_reference(dir, kind.as_str().unwrap_or(""))?);
        }
        Results::Matrix { matrix, panels } => {
            table(matrix_rows(matrix), &mut files)?;
            let path = dir.join("config.json");
            write_json(&matrix.config, &path)?;
            files.push(path);
            files.push(write_reference(dir, "mechanism_matrix")?);
            panels_out(panels, &mut files)?;
        }
        Results::Baseline(b) => table(baseline_rows(b), &mut files)?,
    }
    Ok(files)
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

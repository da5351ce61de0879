use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use sceneflow_core::checkpoint::{load_checkpoint, load_checkpoint_for};
use sceneflow_core::eval::evaluate;
use sceneflow_core::experiments::{
    baseline_compare, run_ablation, run_mechanism_matrix, ExperimentKind, MechanismData, Splits,
};
use sceneflow_core::flowmodels::FlowPredictor;
use sceneflow_core::report::{emit_report, emit_training_curves, read_results_table, Panel, Results};
use sceneflow_core::sandbox::{read_dataset, write_dataset};
use sceneflow_core::sandbox::{generate_dataset, ShapeFamily};
use sceneflow_core::training::{prepare_pairs, train_from, History, Objective, TrainOptions, TrainState};
use sceneflow_core::{Error, Mechanism, Result, ScenePair32};
use serde::Serialize;

use crate::config::FileConfig;
use crate::{AblateArgs, AblationArg, Cli, Command, EvalArgs, GenerateArgs, MatrixArgs, MechanismArg, ReportArgs, TrainArgs};

/// Settings shared by every command after merging the file and the flags.
struct Context {
    file: FileConfig,
    seed: Option<u64>,
    out: PathBuf,
    deterministic: bool,
}

pub fn run(cli: &Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let ctx = Context {
        seed: cli.seed.or(file.seed),
        out: cli.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
        deterministic: cli.deterministic || file.deterministic.unwrap_or(false),
        file,
    };
    match &cli.command {
        Command::Generate(a) => generate(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
        Command::Mechmatrix(a) => mechmatrix(&ctx, a),
        Command::Report(a) => report(&ctx, a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    sceneflow_core::report::write_json(value, path)
}

fn require(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| Error::config(format!("missing {what} (flag or config key)")))
}

fn load(path: &Path) -> Result<Vec<ScenePair32>> {
    read_dataset(path)
}

fn generate(ctx: &Context, a: &GenerateArgs) -> Result<()> {
    let mut g = ctx.file.generate.clone();
    let spec = &mut g.scene;
    if let Some(v) = a.points {
        spec.points_per_cloud = v;
    }
    if let Some(v) = a.objects {
        spec.n_objects = v;
    }
    if let Some(v) = &a.shape {
        spec.shape_family = v.parse::<ShapeFamily>()?;
    }
    if let Some(v) = a.max_rotation_deg {
        spec.motion.max_rotation = v.to_radians();
    }
    if let Some(v) = a.max_translation {
        spec.motion.max_translation = v;
    }
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    let count = a.count.unwrap_or(g.count);
    let val_fraction = a.val_fraction.unwrap_or(g.val_fraction);
    let test_count = a.test_count.unwrap_or(g.test_count);
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::config("val_fraction must lie in [0, 1)"));
    }
    let mechanisms = match a.mechanism {
        Some(MechanismArg::Correspondence) => vec![(Mechanism::Correspondence, None)],
        Some(MechanismArg::Resampling) => vec![(Mechanism::Resampling, None)],
        Some(MechanismArg::Both) => both(),
        None => match g.mechanism.as_deref() {
            Some("both") => both(),
            Some(m) => vec![(m.parse::<Mechanism>()?, None)],
            None => vec![(spec.mechanism, None)],
        },
    };
    spec.validate()?;
    let n_val = (count as f64 * val_fraction).round() as usize;
    let n_train = count - n_val;
    create_dir(&ctx.out)?;
    for (mechanism, sub) in mechanisms {
        let spec = sceneflow_core::sandbox::SceneSpec { mechanism, ..g.scene.clone() };
        let dir = match sub {
            Some(s) => ctx.out.join(s),
            None => ctx.out.clone(),
        };
        for (name, n, split) in [("train", n_train, 0), ("val", n_val, 1), ("test", test_count, 2)] {
            if n == 0 && name != "train" {
                continue;
            }
            let pairs = generate_dataset::<f32>(&spec, n, spec.seed, split)?;
            write_dataset(&pairs, dir.join(name))?;
            println!("{}: {n} pairs", dir.join(name).display());
        }
        write_json(&spec, &dir.join("scene.json"))?;
    }
    Ok(())
}

fn both() -> Vec<(Mechanism, Option<&'static str>)> {
    vec![
        (Mechanism::Correspondence, Some("correspondence")),
        (Mechanism::Resampling, Some("resampling")),
    ]
}

fn train_config(ctx: &Context) -> sceneflow_core::training::TrainConfig {
    let mut c = ctx.file.train.clone();
    if let Some(s) = ctx.seed {
        c.seed = s;
    }
    c
}

#[derive(Serialize)]
struct RunRecord<'a, C: Serialize> {
    deterministic: bool,
    data: &'a crate::config::DataSection,
    config: &'a C,
}

fn train(ctx: &Context, a: &TrainArgs) -> Result<()> {
    let mut config = train_config(ctx);
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = &a.objective {
        config.objective = match v.as_str() {
            "adversarial" => Objective::Adversarial,
            "chamfer_cycle" => Objective::ChamferCycle,
            other => return Err(Error::config(format!("unknown objective `{other}`"))),
        };
    }
    let mut data = ctx.file.data.clone();
    data.train = a.train_data.clone().or(data.train);
    data.val = a.val_data.clone().or(data.val);
    let train_set = load(&require(data.train.clone(), "training data")?)?;
    let val_set = load(&require(data.val.clone(), "validation data")?)?;

    create_dir(&ctx.out)?;
    write_json(
        &RunRecord {
            deterministic: ctx.deterministic,
            data: &data,
            config: &config,
        },
        &ctx.out.join("run.json"),
    )?;
    let state = match &a.resume {
        Some(p) => load_checkpoint_for::<f32>(p, &config)?,
        None => TrainState::new(&config)?,
    };
    let log_path = ctx.out.join("metrics.jsonl");
    let mut log = OpenOptions::new()
        .create(true)
        .append(a.resume.is_some())
        .write(true)
        .truncate(a.resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let options = TrainOptions {
        metrics: Some(&mut log),
        checkpoint_dir: Some(ctx.out.join("checkpoints")),
        stop_after: None,
    };
    let (state, history) = train_from(state, &train_set, &val_set, &config, options)?;
    emit_report::<f32>(&Results::Training { config: &config, history: &history }, &ctx.out)?;
    println!(
        "trained {} epochs; best validation EPE {}",
        state.epoch,
        state.best_val_epe().map_or("n/a".into(), |v| format!("{v:.6}"))
    );
    Ok(())
}

fn panel<M: FlowPredictor<f32>>(name: &str, model: &M, pair: &ScenePair32) -> Result<Panel<f32>> {
    Ok(Panel {
        name: name.into(),
        pair: pair.clone(),
        predicted: model.predict(&pair.frame1, &pair.frame2)?,
    })
}

fn eval(ctx: &Context, a: &EvalArgs) -> Result<()> {
    let (config, state) = load_checkpoint::<f32>(&a.checkpoint)?;
    let model = if a.last { state.extractor.clone() } else { state.best_model()? };
    let path = require(a.data.clone().or_else(|| ctx.file.data.test.clone()), "evaluation data")?;
    let pairs = prepare_pairs(&load(&path)?, config.cloud_size, 0x7e57)?;
    let evaluation = evaluate(&model, &pairs);
    let panels = match pairs.first() {
        Some(p) => vec![panel("sample_0", &model, p)?],
        None => Vec::new(),
    };
    emit_report(
        &Results::Evaluation {
            label: "eval",
            evaluation: &evaluation,
            panels,
        },
        &ctx.out,
    )?;
    match evaluation.mean {
        Some(m) => println!(
            "EPE {:.6}  Acc01 {:.4}  Acc005 {:.4}  ({} samples, {} skipped)",
            m.epe,
            m.acc01,
            m.acc005,
            pairs.len() - evaluation.skipped,
            evaluation.skipped
        ),
        None => println!("no sample could be evaluated ({} skipped)", evaluation.skipped),
    }
    Ok(())
}

fn seeds(ctx: &Context, flag: &Option<Vec<u64>>) -> Vec<u64> {
    flag.clone()
        .or_else(|| (!ctx.file.experiment.seeds.is_empty()).then(|| ctx.file.experiment.seeds.clone()))
        .unwrap_or_else(|| vec![ctx.seed.unwrap_or(0)])
}

fn ablate(ctx: &Context, a: &AblateArgs) -> Result<()> {
    let config = train_config(ctx);
    let data = &ctx.file.data;
    let train_set = load(&require(a.train_data.clone().or(data.train.clone()), "training data")?)?;
    let val_set = load(&require(a.val_data.clone().or(data.val.clone()), "validation data")?)?;
    let test_set = load(&require(a.test_data.clone().or(data.test.clone()), "test data")?)?;
    let splits = Splits {
        train: &train_set,
        val: &val_set,
        test: &test_set,
    };
    let seeds = seeds(ctx, &a.seeds);
    create_dir(&ctx.out)?;
    match a.kind {
        AblationArg::Baseline => {
            let b = baseline_compare(&config, &splits)?;
            emit_report::<f32>(&Results::Baseline(&b), &ctx.out)?;
            for (name, e) in &b.methods {
                println!("{name:<18} EPE {}", e.mean_epe().map_or("n/a".into(), |v| format!("{v:.6}")));
            }
        }
        kind => {
            let kind = if kind == AblationArg::Cycle {
                ExperimentKind::CycleAblation
            } else {
                ExperimentKind::MultiscaleAblation
            };
            let table = run_ablation(kind, &config, &splits, &seeds)?;
            emit_report::<f32>(&Results::Ablation(&table), &ctx.out)?;
            for row in &table.rows {
                let epe = row.mean().map_or("failed".into(), |m| format!("{:.6}", m.epe));
                println!("{:<12} EPE {epe}", row.label);
            }
        }
    }
    Ok(())
}

fn mechmatrix(ctx: &Context, a: &MatrixArgs) -> Result<()> {
    let config = train_config(ctx);
    let c_dir = require(a.correspondence.clone().or(ctx.file.data.correspondence.clone()), "correspondence data")?;
    let r_dir = require(a.resampling.clone().or(ctx.file.data.resampling.clone()), "resampling data")?;
    let read = |dir: &Path| -> Result<[Vec<ScenePair32>; 3]> {
        Ok([load(&dir.join("train"))?, load(&dir.join("val"))?, load(&dir.join("test"))?])
    };
    let (c, r) = (read(&c_dir)?, read(&r_dir)?);
    let data = MechanismData {
        correspondence: Splits {
            train: &c[0],
            val: &c[1],
            test: &c[2],
        },
        resampling: Splits {
            train: &r[0],
            val: &r[1],
            test: &r[2],
        },
    };
    let (matrix, models) = run_mechanism_matrix(&config, &data, &seeds(ctx, &a.seeds))?;
    let test_c = prepare_pairs(&c[2][..1], config.cloud_size, 0x7e57)?;
    let test_r = prepare_pairs(&r[2][..1], config.cloud_size, 0x7e57)?;
    let panels = vec![
        panel("C->C", &models.correspondence, &test_c[0])?,
        panel("C->R", &models.correspondence, &test_r[0])?,
        panel("R->C", &models.resampling, &test_c[0])?,
        panel("R->R", &models.resampling, &test_r[0])?,
    ];
    emit_report(&Results::Matrix { matrix: &matrix, panels }, &ctx.out)?;
    let cells = matrix.cells();
    println!("train -> test EPE");
    for (label, v) in sceneflow_core::experiments::MechanismMatrix::LABELS.iter().zip(cells) {
        println!("{label}  {v:.6}");
    }
    Ok(())
}

fn report(ctx: &Context, a: &ReportArgs) -> Result<()> {
    let out = if ctx.out == Path::new("out") { a.run.clone() } else { ctx.out.clone() };
    let metrics = a.run.join("metrics.jsonl");
    let mut produced = false;
    if metrics.exists() {
        let text = std::fs::read_to_string(&metrics).map_err(|e| Error::io(&metrics, e))?;
        let history = History::from_jsonl(&text)?;
        for f in emit_training_curves(&history, &out)? {
            println!("wrote {}", f.display());
        }
        produced = true;
    }
    let table = a.run.join("results.tsv");
    if table.exists() {
        println!("experiment\trow\tseed\tstatus\tepe\tacc01\tacc005");
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for r in read_results_table(&table)? {
            println!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.experiment,
                r.row,
                r.seed.map_or(String::new(), |s| s.to_string()),
                r.status,
                fmt(r.epe),
                fmt(r.acc01),
                fmt(r.acc005)
            );
        }
        produced = true;
    }
    if !produced {
        return Err(Error::config(format!(
            "{} holds neither metrics.jsonl nor results.tsv",
            a.run.display()
        )));
    }
    Ok(())
}

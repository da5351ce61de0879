use sceneflow_core::checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
use sceneflow_core::embedder::EmbedderConfig;
use sceneflow_core::eval::evaluate;
use sceneflow_core::flowmodels::{ExtractorConfig, FlowExtractor};
use sceneflow_core::sandbox::{generate_dataset, read_dataset, write_dataset, MotionBounds, SceneSpec, ShapeFamily};
use sceneflow_core::training::{train_from, History, TrainConfig, TrainOptions, TrainState};
use sceneflow_core::{Error, Mechanism, ScenePair32};

fn spec(mechanism: Mechanism) -> SceneSpec {
    SceneSpec {
        n_objects: 2,
        points_per_cloud: 40,
        mechanism,
        shape_family: ShapeFamily::Mixed,
        motion: MotionBounds { max_rotation: 0.2, max_translation: 0.4 },
        ..SceneSpec::default()
    }
}

fn config() -> TrainConfig {
    TrainConfig {
        batch_size: 3,
        epochs: 3,
        cloud_size: Some(32),
        embedder: EmbedderConfig::tiny(),
        extractor: ExtractorConfig::tiny(),
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn dataset_files_round_trip_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    for (i, mechanism) in [Mechanism::Correspondence, Mechanism::Resampling].into_iter().enumerate() {
        let pairs: Vec<ScenePair32> = generate_dataset(&spec(mechanism), 6, 3, 0).unwrap();
        let path = dir.path().join(i.to_string());
        write_dataset(&pairs, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.len(), pairs.len());
        for (a, b) in pairs.iter().zip(&back) {
            let bits = |v: Vec<f32>| v.into_iter().map(f32::to_bits).collect::<Vec<_>>();
            assert_eq!(bits(a.frame1.flat()), bits(b.frame1.flat()));
            assert_eq!(bits(a.frame2.flat()), bits(b.frame2.flat()));
            assert_eq!(bits(a.gt_flow.flat()), bits(b.gt_flow.flat()));
            assert_eq!(a.meta, b.meta);
        }
    }
}

#[test]
fn empty_dataset_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&[], dir.path()).unwrap();
    assert!(read_dataset(dir.path()).unwrap().is_empty());
}

#[test]
fn short_point_file_is_inconsistent() {
    let dir = tempfile::tempdir().unwrap();
    let pairs: Vec<ScenePair32> = generate_dataset(&spec(Mechanism::Resampling), 2, 3, 0).unwrap();
    let manifest = write_dataset(&pairs, dir.path()).unwrap();
    let file = dir.path().join(&manifest.samples[1].frame2);
    let bytes = std::fs::read(&file).unwrap();
    std::fs::write(&file, &bytes[..bytes.len() - 12]).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Inconsistent(_))));
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let cfg = config();
    let train: Vec<ScenePair32> = generate_dataset(&spec(Mechanism::Resampling), 9, 5, 0).unwrap();
    let val: Vec<ScenePair32> = generate_dataset(&spec(Mechanism::Resampling), 3, 5, 1).unwrap();

    let (full_state, full) = train_from(TrainState::new(&cfg).unwrap(), &train, &val, &cfg, TrainOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut log = Vec::new();
    let (_, first) = train_from(
        TrainState::new(&cfg).unwrap(),
        &train,
        &val,
        &cfg,
        TrainOptions { metrics: Some(&mut log), checkpoint_dir: Some(dir.path().to_path_buf()), stop_after: Some(1) },
    )
    .unwrap();
    let state = load_checkpoint_for::<f32>(dir.path().join("last.ckpt"), &cfg).unwrap();
    assert_eq!(state.epoch, 1);
    let (resumed_state, rest) = train_from(state, &train, &val, &cfg, TrainOptions::default()).unwrap();

    let joined: Vec<_> = first.rounds.iter().chain(&rest.rounds).collect();
    assert_eq!(joined.len(), full.rounds.len());
    for (a, b) in joined.iter().zip(&full.rounds) {
        assert!((a.l_h - b.l_h).abs() <= 1e-6, "round {} L_h {} vs {}", b.round, a.l_h, b.l_h);
        assert!((a.l_g.unwrap() - b.l_g.unwrap()).abs() <= 1e-6);
        assert_eq!(a.phase1_batch, b.phase1_batch);
    }
    assert_eq!(resumed_state.extractor.params().flatten(), full_state.extractor.params().flatten());

    let logged = History::from_jsonl(std::str::from_utf8(&log).unwrap()).unwrap();
    assert_eq!(logged, first);
}

#[test]
fn checkpoint_round_trip_and_best_model_evaluation() {
    let cfg = config();
    let train: Vec<ScenePair32> = generate_dataset(&spec(Mechanism::Correspondence), 6, 8, 0).unwrap();
    let val: Vec<ScenePair32> = generate_dataset(&spec(Mechanism::Correspondence), 2, 8, 1).unwrap();
    let (state, _) = train_from(
        TrainState::new(&cfg).unwrap(),
        &train,
        &val,
        &TrainConfig { epochs: 2, ..cfg.clone() },
        TrainOptions::default(),
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    save_checkpoint(&state, &cfg, &path).unwrap();
    let (back_cfg, back) = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(back_cfg, cfg);
    let bits = |v: Vec<f32>| v.into_iter().map(f32::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(back.extractor.params().flatten()), bits(state.extractor.params().flatten()));
    assert_eq!(back.best_extractor, state.best_extractor);
    assert_eq!(back.lr_flow, state.lr_flow);

    let a = evaluate(&state.best_model().unwrap(), &val);
    let b = evaluate(&back.best_model().unwrap(), &val);
    assert_eq!(a, b);
    assert_eq!(a.skipped, 0);

    // a checkpoint of one precision does not load as the other
    assert!(matches!(load_checkpoint::<f64>(&path), Err(Error::ArchitectureMismatch(_))));
}

use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 3

[generate]
count = 12
val_fraction = 0.25
test_count = 3

[generate.scene]
points_per_cloud = 48
n_objects = 2

[train]
epochs = 2
batch_size = 4
cloud_size = 32

[train.extractor]
local_neighbors = 4
local_widths = [6]
corr_neighbors = 4
corr_widths = [8]
global_widths = [6]
refine_widths = [8, 8]

[train.embedder]
head_widths = [16, 16]

[[train.embedder.stages]]
centroids = 6
radius = 0.6
widths = [8]

[[train.embedder.stages]]
centroids = 3
radius = 1.2
widths = [12]

[[train.embedder.stages]]
radius = 0.0
widths = [16]
"#;

fn sceneflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sceneflow")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_train_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("run.toml");
    std::fs::write(&config, CONFIG).unwrap();
    let data = root.join("data");
    let run = root.join("run");

    let text = ok(&sceneflow(&["generate", "--config", p(&config), "--out", p(&data)]));
    assert_eq!(text.lines().count(), 3);
    for split in ["train", "val", "test"] {
        assert!(data.join(split).join("manifest.json").exists());
    }

    let train_data = data.join("train");
    let val_data = data.join("val");
    let text = ok(&sceneflow(&[
        "train",
        "--config",
        p(&config),
        "--out",
        p(&run),
        "--train-data",
        p(&train_data),
        "--val-data",
        p(&val_data),
        "--deterministic",
    ]));
    assert!(text.starts_with("trained 2 epochs"), "{text}");
    for f in ["run.json", "metrics.jsonl", "checkpoints/last.ckpt", "checkpoints/best.ckpt", "loss_curve.svg", "epe_curve.svg"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let record: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(record["deterministic"], true);
    assert_eq!(record["config"]["seed"], 3);
    assert_eq!(record["config"]["cloud_size"], 32);
    let lines = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count();
    // two epochs of three rounds plus one epoch record each
    assert_eq!(lines, 8);

    let text = ok(&sceneflow(&[
        "train",
        "--config",
        p(&config),
        "--out",
        p(&run),
        "--train-data",
        p(&train_data),
        "--val-data",
        p(&val_data),
        "--epochs",
        "3",
        "--resume",
        p(&run.join("checkpoints/last.ckpt")),
    ]));
    assert!(text.starts_with("trained 3 epochs"), "{text}");
    assert_eq!(std::fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count(), 12);

    let eval_out = root.join("eval");
    let text = ok(&sceneflow(&[
        "eval",
        "--checkpoint",
        p(&run.join("checkpoints/best.ckpt")),
        "--data",
        p(&data.join("test")),
        "--out",
        p(&eval_out),
    ]));
    assert!(text.starts_with("EPE "), "{text}");
    assert!(text.contains("(3 samples, 0 skipped)"), "{text}");
    assert!(eval_out.join("results.tsv").exists());

    let text = ok(&sceneflow(&["report", "--run", p(&run)]));
    assert!(text.contains("loss_curve.svg"), "{text}");
}

#[test]
fn both_mechanisms_share_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, CONFIG).unwrap();
    let out = dir.path().join("data");
    ok(&sceneflow(&["generate", "--config", p(&config), "--out", p(&out), "--mechanism", "both", "--count", "4"]));
    let c = std::fs::read_to_string(out.join("correspondence/train/manifest.json")).unwrap();
    let r = std::fs::read_to_string(out.join("resampling/train/manifest.json")).unwrap();
    let seeds = |text: &str| -> Vec<u64> {
        let v: serde_json::Value = serde_json::from_str(text).unwrap();
        v["samples"].as_array().unwrap().iter().map(|s| s["seed"].as_u64().unwrap()).collect()
    };
    assert_eq!(seeds(&c), seeds(&r));
    assert!(c.contains("correspondence") && r.contains("resampling"));
}

fn error_line(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap().lines().next().unwrap_or("").to_string()
}

#[test]
fn failures_print_one_categorised_line() {
    let dir = tempfile::tempdir().unwrap();

    let out = sceneflow(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error: usage: "), "{}", error_line(&out));

    let out = sceneflow(&["train", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out), "error: config: missing training data (flag or config key)");

    let out = sceneflow(&["eval", "--checkpoint", p(&dir.path().join("none.ckpt")), "--data", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out).starts_with("error: io: "), "{}", error_line(&out));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "sede = 1\n").unwrap();
    let out = sceneflow(&["generate", "--config", p(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out).starts_with("error: config: "), "{}", error_line(&out));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint at all").unwrap();
    let out = sceneflow(&["eval", "--checkpoint", p(&junk), "--data", "x"]);
    assert!(error_line(&out).starts_with("error: malformed: "), "{}", error_line(&out));

    let out = sceneflow(&["report", "--run", p(dir.path())]);
    assert!(error_line(&out).starts_with("error: config: "), "{}", error_line(&out));
    assert_eq!(String::from_utf8(out.stderr).unwrap().lines().count(), 1);
}

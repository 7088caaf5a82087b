use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ddrnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddrnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, count: &str, extra: &[&str]) {
    let mut args = vec!["gen-data", "--out", s(dir), "--count", count];
    args.extend_from_slice(extra);
    let out = ddrnet(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn one_epoch_run_is_bitwise_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    gen(&data, "2", &[]);
    let mut logs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = root.path().join(run);
        let out = ddrnet(&["train", "--data", s(&data), "--epochs", "1", "--out", s(&out_dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let log = fs::read(out_dir.join("train_log.tsv")).unwrap();
        assert_eq!(String::from_utf8_lossy(&log).lines().count(), 2);
        assert!(out_dir.join("model.ckpt").is_file());
        logs.push((log, fs::read(out_dir.join("model.ckpt")).unwrap()));
    }
    assert!(logs[0] == logs[1]);
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    gen(&data, "2", &["--seed", "5"]);
    let train = |dir: &Path, epochs: &str, resume: Option<&Path>| {
        let mut args = vec!["train", "--data", s(&data), "--epochs", epochs, "--out", s(dir)];
        if let Some(r) = resume {
            args.extend_from_slice(&["--resume", s(r)]);
        }
        assert!(ddrnet(&args).status.success());
    };
    let full = root.path().join("full");
    let part = root.path().join("part");
    let rest = root.path().join("rest");
    train(&full, "3", None);
    train(&part, "2", None);
    train(&rest, "3", Some(&part.join("model.ckpt")));
    for name in ["model.ckpt", "train_log.tsv", "state.json"] {
        assert!(
            fs::read(full.join(name)).unwrap() == fs::read(rest.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn depth_modality_trains_single_branch() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    gen(&data, "2", &[]);
    let run = root.path().join("run");
    let out = ddrnet(&[
        "train",
        "--data",
        s(&data),
        "--epochs",
        "1",
        "--modality",
        "depth",
        "--out",
        s(&run),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = fs::read_to_string(run.join("config.json")).unwrap();
    assert!(cfg.contains("\"depth\""));
    let ckpt = ddrnet::nn::Checkpoint::load(&run.join("model.ckpt")).unwrap();
    assert!(ckpt.entries.iter().all(|(n, _)| !n.contains("rgb/")));
}

#[test]
fn eval_of_perfect_predictions_scores_one() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    gen(&data, "3", &["--test", "1"]);
    let preds = root.path().join("preds");
    for i in 0..3 {
        let name = format!("sample_{i:04}");
        fs::create_dir_all(preds.join(&name)).unwrap();
        fs::copy(
            data.join(&name).join("labels.tnsr"),
            preds.join(&name).join("pred.tnsr"),
        )
        .unwrap();
    }
    let out = ddrnet(&["eval", "--data", s(&data), "--predictions", s(&preds), "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["sc"]["iou"], 1.0);
    assert_eq!(report["average"], 1.0);
}

#[test]
fn predict_then_eval_agree_with_checkpoint_eval() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    gen(&data, "2", &[]);
    let run = root.path().join("run");
    assert!(
        ddrnet(&["train", "--data", s(&data), "--epochs", "2", "--out", s(&run)])
            .status
            .success()
    );
    let ckpt = run.join("model.ckpt");
    let preds = root.path().join("preds");
    assert!(ddrnet(&[
        "predict",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&preds)
    ])
    .status
    .success());
    let a = ddrnet(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--json"]);
    let b = ddrnet(&["eval", "--data", s(&data), "--predictions", s(&preds), "--json"]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
    let pred = ddrnet::Tensor::load(&preds.join("sample_0000").join("pred.tnsr")).unwrap();
    assert_eq!(pred.shape(), &[8, 8, 8]);
}

#[test]
fn analyze_with_config_file_shows_one_third() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("desk.json");
    fs::write(&cfg, r#"{"preset": "desk"}"#).unwrap();
    let out = ddrnet(&["analyze", "--config", s(&cfg)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| l.contains("3d/ddr") && l.contains("1/3"))
        .collect();
    assert!(!rows.is_empty(), "{text}");
    let json = ddrnet(&["analyze", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["total_params"], 18284);
}

#[test]
fn gradcheck_bottleneck_target_exits_zero() {
    let out = ddrnet(&["gradcheck", "--target", "bottleneck-ddr"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));
}

#[test]
fn exit_codes() {
    assert_eq!(ddrnet(&[]).status.code(), Some(1));
    assert_eq!(ddrnet(&["train", "--epochs", "1"]).status.code(), Some(1));
    let missing = ddrnet(&["train", "--data", "/no/such/dir", "--epochs", "1"]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(String::from_utf8_lossy(&missing.stderr).lines().count(), 1);

    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    gen(&data, "1", &[]);
    fs::write(data.join("sample_0000").join("depth.tnsr"), b"TNSR\x01garbage").unwrap();
    let out = ddrnet(&[
        "train",
        "--data",
        s(&data),
        "--epochs",
        "1",
        "--out",
        s(&root.path().join("r")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let bad_cfg = root.path().join("bad.json");
    fs::write(&bad_cfg, r#"{"preset": "desk", "c2": 0}"#).unwrap();
    assert_eq!(ddrnet(&["analyze", "--config", s(&bad_cfg)]).status.code(), Some(1));
}

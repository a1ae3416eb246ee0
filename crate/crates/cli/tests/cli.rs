use std::path::Path;
use std::process::{Command, Output};

fn gvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gvae")).args(args).output().expect("spawn gvae")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Small procedural config that trains in a few seconds.
fn write_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "variant": {"kind": "beta", "beta": 4.0},
        "gated": true,
        "gate_kl": true,
        "seed": 3,
        "dataset": {"kind": "procedural", "bases": [3, 4, 4, 4, 4]},
        "latent_dim": 8,
        "boundaries": [0, 2, 4, 6, 8],
        "factor_map": [[0], [1], [2], [3, 4]],
        "epochs": 1,
        "batch": 32,
        "lr": 1e-3,
        "finetune_epochs": 1,
        "encoder_hidden": [32],
        "decoder_hidden": [32],
        "eval": {"size": 500, "train_fraction": 0.8, "lasso_alpha": 0.02, "rf_trees": 4, "rf_max_depth": 6},
        "out_dir": dir.join("run").to_string_lossy(),
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn help_succeeds_and_bad_usage_exits_one() {
    let help = gvae(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("compare"));
    assert_eq!(code(&gvae(&["train", "--variant", "vanilla"])), 1);
    assert_eq!(code(&gvae(&["nonsense"])), 1);
}

#[test]
fn bad_config_exits_two_and_missing_checkpoint_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"variant": {"kind": "beta", "beta": 4.0}, "colour": 1}"#).unwrap();
    let o = gvae(&["--config", bad.to_str().unwrap(), "train"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    let cfg = write_config(dir.path());
    let missing = dir.path().join("nope.gvae");
    let o = gvae(&["--config", &cfg, "eval", "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_eval_traverse_finetune_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = dir.path().join("run");
    let ckpt = run.join("checkpoint.gvae");
    let ckpt = ckpt.to_str().unwrap();

    let o = gvae(&["--config", &cfg, "train"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run.join("loss.csv").exists());

    let o = gvae(&["--config", &cfg, "eval", "--checkpoint", ckpt]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("lasso") && stdout.contains("rf"), "{stdout}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["reports"].as_array().unwrap().len(), 2);
    assert!(run.join("hinton_rf.svg").exists());

    let o = gvae(&["--config", &cfg, "traverse", "--checkpoint", ckpt, "--dims", "0,6", "--steps", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run.join("traversal.pgm").exists());

    let tuned = dir.path().join("tuned");
    let o = gvae(&["--config", &cfg, "--out", tuned.to_str().unwrap(), "finetune", "--checkpoint", ckpt]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("->"));
    assert!(tuned.join("checkpoint.gvae").exists() && tuned.join("finetune.csv").exists());
}

#[test]
fn gen_data_writes_named_archive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let path = dir.path().join("small.npz");
    let o = gvae(&["--config", &cfg, "--out", path.to_str().unwrap(), "gen-data"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("768 images"));
    assert!(std::fs::metadata(&path).unwrap().len() > 0);
}

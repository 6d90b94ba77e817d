//! End-to-end runs of the `imsvd` binary on a small world.

use std::path::Path;
use std::process::{Command, Output};

const SMALL_WORLD: [&str; 4] = ["--train-size", "256", "--test-size", "64"];

fn imsvd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imsvd"))
        .args(args)
        .env("IMSVD_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn train_small(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out.to_str().unwrap()];
    args.extend(SMALL_WORLD);
    args.extend([
        "--epochs",
        "2",
        "--warmup-epochs",
        "1",
        "--m",
        "4",
        "--dm",
        "2",
    ]);
    args.extend(extra);
    imsvd(&args)
}

#[test]
fn gradcheck_passes_and_reports() {
    let v = json(&imsvd(&["gradcheck", "--m", "2", "--dm", "2", "--n", "4"]));
    assert!(v["max_rel_error"].as_f64().unwrap() < 1e-5);
}

#[test]
fn gradcheck_fails_with_an_impossible_tolerance() {
    let out = imsvd(&["gradcheck", "--tol", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(imsvd(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(imsvd(&[]).status.code(), Some(2));
    assert_eq!(imsvd(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_checkpoint_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing.ckpt");
    let out = imsvd(&["verify", "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let config = dir.path().join("train.manifest");
    std::fs::write(&config, "epochs = 5\nlambda = 1\n").unwrap();
    let out = train_small(&run, &["--config", config.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2, "flag overrides the file");
    let manifest = std::fs::read_to_string(run.join("run.manifest")).unwrap();
    assert!(manifest.contains("epochs = 2"));

    let ckpt = run.to_str().unwrap();
    let mut eval = vec!["verify", "--checkpoint", ckpt];
    eval.extend(SMALL_WORLD);
    let v = json(&imsvd(&eval));
    let frac = v["onehot_frac_090"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&frac));

    let mut knn = vec!["eval-knn", "--checkpoint", ckpt, "--k", "5"];
    knn.extend(SMALL_WORLD);
    let v = json(&imsvd(&knn));
    let acc = v["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let export = dir.path().join("export");
    let mut exp = vec![
        "export-joint",
        "--checkpoint",
        ckpt,
        "--out",
        export.to_str().unwrap(),
    ];
    exp.extend(SMALL_WORLD);
    json(&imsvd(&exp));
    assert!(export.join("joint.csv").is_file());
    assert!(export.join("marginals.csv").is_file());
}

#[test]
fn gen_data_writes_the_world() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["gen-data", "--out", dir.path().to_str().unwrap()];
    args.extend(SMALL_WORLD);
    let out = imsvd(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(names.iter().any(|n| n.ends_with(".csv")), "{names:?}");
}

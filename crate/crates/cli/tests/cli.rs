use std::fs;
use std::path::Path;
use std::process::Command;

use fgsty_cli::{parse_and_dispatch, EXIT_OK, EXIT_USER};

fn run(args: &[&str]) -> i32 {
    parse_and_dispatch(std::iter::once("fgsty").chain(args.iter().copied()))
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fgsty"))
}

fn out(dir: &Path) -> &str {
    dir.to_str().unwrap()
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let o = bin().output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn unknown_verb_and_flag_are_user_errors() {
    assert_eq!(run(&["frobnicate"]), EXIT_USER);
    assert_eq!(run(&["train", "--bogus"]), EXIT_USER);
    assert_eq!(run(&["--help"]), EXIT_OK);
}

#[test]
fn bad_overrides_and_values_are_user_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(dir.path());
    assert_eq!(run(&["train", "--out", o, "--set", "no_such_field=1"]), EXIT_USER);
    assert_eq!(run(&["train", "--out", o, "--set", "alpha=2"]), EXIT_USER);
    assert_eq!(run(&["train", "--out", o, "--variant", "best"]), EXIT_USER);
    assert_eq!(run(&["adapt", "--out", o, "--variant", "source_only"]), EXIT_USER);
    assert_eq!(run(&["sweep", "--out", o, "--kind", "beta", "--grid", "1"]), EXIT_USER);
    assert_eq!(run(&["sweep", "--out", o, "--kind", "alpha", "--grid", "x"]), EXIT_USER);
    assert_eq!(run(&["train", "--out", o, "--config", "/no/such/config.json"]), EXIT_USER);
    assert_eq!(
        run(&[
            "train",
            "--out",
            o,
            "--mode",
            "domain_generalization",
            "--target",
            "preset:t1",
            "--test-domain",
            "preset:t1"
        ]),
        EXIT_USER
    );
}

#[test]
fn generate_writes_standard_layout() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&["generate", "--out", out(dir.path()), "--resolution", "16", "--n-train", "3", "--n-test", "2"]);
    assert_eq!(code, EXIT_OK);
    for d in ["source", "t1", "t2", "t3", "t4"] {
        let images = fs::read_dir(dir.path().join(d).join("train").join("images")).unwrap().count();
        let masks = fs::read_dir(dir.path().join(d).join("test").join("masks")).unwrap().count();
        assert_eq!((images, masks), (3, 2), "{d}");
    }
    assert!(dir.path().join("recipes.json").is_file());
    assert!(dir.path().join("plots").join("labels-t4.png").is_file());
}

#[test]
fn stylize_writes_images_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&["stylize", "--out", out(dir.path()), "--target", "preset:t3", "--set", "n_style_images=2"]);
    assert_eq!(code, EXIT_OK);
    let n = fs::read_dir(dir.path().join("train").join("images")).unwrap().count();
    let manifest: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(n, manifest.len());
    for key in ["source_id", "style_id", "seed"] {
        assert!(manifest[0].get(key).is_some(), "{key}");
    }
}

#[test]
fn adapt_train_evaluate_sweep_report() {
    let dir = tempfile::tempdir().unwrap();
    let adapt_dir = dir.path().join("adapt");
    let code = run(&[
        "adapt",
        "--out",
        out(&adapt_dir),
        "--arch",
        "compact",
        "--target",
        "preset:t1",
        "--set",
        "epochs=2",
        "--set",
        "alpha=0.9",
        "--seed",
        "3",
    ]);
    assert_eq!(code, EXIT_OK);
    let snapshot: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(adapt_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(snapshot["alpha"], 0.9);
    assert_eq!(snapshot["epochs"], 2);
    assert_eq!(snapshot["seed"], 3);
    assert!(adapt_dir.join("results.json").is_file());
    assert!(adapt_dir.join("summary.csv").is_file());
    let ckpt = adapt_dir.join("checkpoints").join("t1.ckpt");
    assert!(ckpt.is_file());

    let eval_dir = dir.path().join("eval");
    assert_eq!(
        run(&["evaluate", "--out", out(&eval_dir), "--checkpoint", out(&ckpt), "--target", "preset:t1"]),
        EXIT_OK
    );
    let csv = fs::read_to_string(eval_dir.join("eval.csv")).unwrap();
    assert!(csv.starts_with("sample_id,iou_fg,iou_bg,miou\n"));
    assert_eq!(csv.lines().count(), 1 + 32);

    let sweep_dir = dir.path().join("sweep");
    let code = run(&[
        "sweep",
        "--out",
        out(&sweep_dir),
        "--arch",
        "compact",
        "--target",
        "preset:t1",
        "--kind",
        "alpha",
        "--grid",
        "0.6,0.9",
        "--set",
        "epochs=2",
    ]);
    assert_eq!(code, EXIT_OK);
    let table = fs::read_to_string(sweep_dir.join("alpha_sweep.csv")).unwrap();
    assert!(table.starts_with("alpha,n_accepted,mean_quality\n"));
    assert_eq!(table.lines().count(), 3);

    let report_dir = dir.path().join("report");
    assert_eq!(run(&["report", "--out", out(&report_dir), out(&adapt_dir), out(&sweep_dir)]), EXIT_OK);
    let summary = fs::read_to_string(report_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3);
}

#[test]
fn runs_root_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["train", "--arch", "compact", "--target", "preset:t1", "--set", "epochs=1", "--name", "envcheck"])
        .env("FGSTY_RUNS_DIR", dir.path())
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let runs: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(runs.len(), 1);
    let name = runs[0].to_string_lossy().into_owned();
    assert!(name.ends_with("-envcheck"), "{name}");
    let run_dir = dir.path().join(&runs[0]);
    for f in ["config.json", "results.json", "summary.csv"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    assert!(run_dir.join("plots").is_dir());
    assert!(run_dir.join("checkpoints").join("t1.ckpt").is_file());
}

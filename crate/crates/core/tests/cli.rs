use std::path::Path;
use std::process::{Command, Output};

use taylornet::config::Manifest;
use taylornet::train::read_log_without_time;

fn taylornet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taylornet"))
        .args(args)
        .env_remove("TAYLORNET_OUT")
        .output()
        .expect("run taylornet")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Two optimisation steps on the tiny preset.
const QUICK: [&str; 6] = ["--epochs", "1", "--epoch-size", "8", "--batch-size", "4"];

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out.to_str().unwrap()];
    args.extend(QUICK);
    args.extend(extra);
    taylornet(&args)
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&taylornet(&["--help"])), 0);
    assert_eq!(code(&taylornet(&["--version"])), 0);
    assert_eq!(code(&taylornet(&["no-such-command"])), 1);
    assert_eq!(code(&taylornet(&["train", "--epochs", "many"])), 1);
}

#[test]
fn invalid_configuration_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(&dir.path().join("run"), &["--lr", "-1"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("learning rate"), "{}", stderr(&o));
    let o = taylornet(&["train", "--preset", "huge", "--dump-config"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn missing_or_corrupt_checkpoints_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval");
    let o = taylornet(&["eval", "--checkpoint", "/nonexistent/model.tnck", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let junk = dir.path().join("junk.tnck");
    std::fs::write(&junk, b"definitely not a checkpoint").unwrap();
    let o = taylornet(&[
        "eval",
        "--checkpoint",
        junk.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--force",
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn divergence_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(&dir.path().join("run"), &["--lr", "1e30"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn verify_kernels_gates_on_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let ok = dir.path().join("ok");
    let o = taylornet(&["verify-kernels", "--out", ok.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(ok.join("verify.json").exists());
    let strict = dir.path().join("strict");
    let o = taylornet(&["verify-kernels", "--tolerance", "1e-30", "--out", strict.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn manifest_records_the_variant_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = train(&run, &["--ablation", "no_mcu", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = Manifest::read(&run).unwrap();
    assert_eq!(m.command, "train");
    assert_eq!(m.variant.as_deref(), Some("no_mcu"));
    assert_eq!(m.seed, Some(3));
    let cfg = m.config.expect("config recorded");
    assert!(!cfg.model.mcu_enabled);
    for f in ["loss.csv", "model.tnck", "config.toml"] {
        assert!(run.join(f).exists(), "missing {}", f);
    }
}

#[test]
fn non_empty_output_needs_force_and_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&train(&run, &[])), 0);
    let first = read_log_without_time(&run.join("loss.csv")).unwrap();
    let model = std::fs::read(run.join("model.tnck")).unwrap();

    let o = train(&run, &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));

    let o = train(&run, &["--force"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_log_without_time(&run.join("loss.csv")).unwrap(), first);
    assert_eq!(std::fs::read(run.join("model.tnck")).unwrap(), model);
}

#[test]
fn output_root_comes_from_the_environment() {
    let root = tempfile::tempdir().unwrap();
    let run = |root: &Path| {
        Command::new(env!("CARGO_BIN_EXE_taylornet"))
            .args(["generate-data", "--count", "3", "--length", "5"])
            .env("TAYLORNET_OUT", root)
            .output()
            .unwrap()
    };
    let o = run(root.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let file = root.path().join("generate-data").join("sequences.tnseq");
    assert!(file.exists());
    assert!(root.path().join("generate-data").join("manifest.toml").exists());

    let other = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(other.path())), 0);
    assert_eq!(
        std::fs::read(&file).unwrap(),
        std::fs::read(other.path().join("generate-data").join("sequences.tnseq")).unwrap()
    );
}

#[test]
fn eval_and_visualize_a_trained_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&train(&run, &[])), 0);
    let ev = dir.path().join("eval");
    let o = taylornet(&[
        "eval",
        "--checkpoint",
        run.to_str().unwrap(),
        "--horizons",
        "2,5",
        "--sequences",
        "4",
        "--out",
        ev.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["metrics.csv", "curves.csv", "report.json", "summary.txt", "manifest.toml"] {
        assert!(ev.join(f).exists(), "missing {}", f);
    }
    let vis = dir.path().join("vis");
    let o = taylornet(&[
        "visualize",
        "--checkpoint",
        run.to_str().unwrap(),
        "--horizon",
        "3",
        "--sequences",
        "1",
        "--out",
        vis.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(vis.join("seq_000_grid.png").exists());
    assert!(vis.join("seq_000.gif").exists());
}

use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--train-structures",
    "2",
    "--hidden-sizes",
    "10,20",
    "--shot-counts",
    "1,3",
    "--test-structures",
    "4",
    "--eval-samples",
    "10",
    "--train-samples",
    "30",
    "--epochs",
    "5",
    "--adapt-steps",
    "3",
    "--gp-restarts",
    "2",
    "--workers",
    "1",
];

fn popmaml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_popmaml"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = popmaml(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(TINY.iter().copied()).collect()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn show_config_applies_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.conf");
    std::fs::write(&file, "# comment\nproblem = line50hz\nalpha = 0.2\nepochs = 7\n").unwrap();
    let text = ok(&["--config", path(&file), "show-config", "--epochs", "9"]);
    assert!(text.contains("problem = line50hz\n"));
    assert!(text.contains("alpha = 0.2\n"));
    assert!(text.contains("epochs = 9\n"));
    assert!(text.contains("train_structures = 2,4,6,8\n"));
}

#[test]
fn bad_configuration_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.conf");
    std::fs::write(&file, "seed = 1\nlearning_rate = 3\n").unwrap();
    let out = popmaml(&["--config", path(&file), "show-config"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("learning_rate"), "{err}");
    assert!(!popmaml(&["show-config", "--problem", "line7hz"]).status.success());
}

#[test]
fn sweep_requires_an_explicit_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = popmaml(&with_tiny(&["sweep", "--out", path(dir.path())]));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    assert!(!dir.path().join("results.csv").exists());
}

#[test]
fn sweep_then_plot_reproduces_the_chart() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let stdout = ok(&with_tiny(&["sweep", "--seed", "5", "--out", path(&out)]));
    assert_eq!(stdout.lines().count(), 1 + 2 * 2);
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.starts_with("problem,method,n_train_structures,hidden,shots,nmse_mean"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    for f in ["results.json", "manifest.json", "figures/line1hz.svg", "checkpoints/line1hz-n2.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }

    let replot = dir.path().join("replot");
    ok(&["plot", "--results", path(&out.join("results.csv")), "--out", path(&replot)]);
    assert_eq!(
        std::fs::read(out.join("figures/line1hz.svg")).unwrap(),
        std::fs::read(replot.join("figures/line1hz.svg")).unwrap()
    );
}

#[test]
fn train_then_evaluate_matches_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let (train_dir, eval_dir, sweep_dir) = (dir.path().join("t"), dir.path().join("e"), dir.path().join("s"));
    let common = ["--seed", "8", "--problem", "frf-pca"];
    let args = |head: &[&'static str], out: &Path| -> Vec<String> {
        head.iter()
            .chain(&common)
            .chain(TINY)
            .map(|s| s.to_string())
            .chain(["--out".to_string(), path(out).to_string()])
            .collect()
    };
    let run = |a: Vec<String>| ok(&a.iter().map(String::as_str).collect::<Vec<_>>());

    let log = run(args(&["train"], &train_dir));
    assert!(log.contains("selected hidden size"));
    let ckpt = train_dir.join("checkpoints/frf-pca-n2.json");
    for f in ["checkpoints/frf-pca-n2-h10.json", "checkpoints/frf-pca-n2-h20.json", "checkpoints/frf-pca-n2-pca.json", "train.json"] {
        assert!(train_dir.join(f).exists(), "{f} missing");
    }
    let mut eval = args(&["evaluate"], &eval_dir);
    eval.extend(["--checkpoint".to_string(), path(&ckpt).to_string()]);
    run(eval);
    run(args(&["sweep"], &sweep_dir));
    assert_eq!(
        std::fs::read_to_string(eval_dir.join("results.csv")).unwrap(),
        std::fs::read_to_string(sweep_dir.join("results.csv")).unwrap()
    );

    // a one-output checkpoint cannot serve the three-component problem
    let line = dir.path().join("line");
    ok(&with_tiny(&["train", "--seed", "8", "--out", path(&line)]));
    let wrong = popmaml(&with_tiny(&[
        "evaluate",
        "--seed",
        "8",
        "--problem",
        "frf-pca",
        "--checkpoint",
        path(&line.join("checkpoints/line1hz-n2.json")),
        "--out",
        path(&dir.path().join("x")),
    ]));
    assert!(!wrong.status.success());
}

#[test]
fn generate_writes_every_problem_and_role() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_tiny(&["generate", "--seed", "3", "--out", path(dir.path())]));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["files"].as_array().unwrap().len(), 9);
    assert_eq!(manifest["structures"].as_array().unwrap().len(), 2 + 1 + 4);
    let rows = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap().lines().count() - 1;
    assert_eq!(rows("line1hz-train.csv"), 2 * 30);
    assert_eq!(rows("line50hz-validation.csv"), 30);
    assert_eq!(rows("frf-test.csv"), 4 * (3 + 10));
    let header = std::fs::read_to_string(dir.path().join("frf-train.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap().split(',').count(), 3 + 200);
}

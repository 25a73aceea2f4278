use std::path::Path;
use std::process::{Command, Output};

fn gcl(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcl"))
        .args(args)
        .env("GCL_OUTPUT_ROOT", root)
        .current_dir(root)
        .output()
        .expect("gcl runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY_TRAIN: &str = r#"
experiment = "train"
seed = 3
output_dir = "runs/tiny"

[env]
name = "point-mass"
horizon = 12

[demos]
count = 6
conditions = 2

[gcl]
iterations = 3
samples_per_iteration = 4

[gcl.ioc]
iterations = 10

[eval]
rollouts = 4
"#;

#[test]
fn gen_demos_writes_csvs_and_manifest() {
    let root = tempfile::tempdir().unwrap();
    let out = gcl(root.path(), &["gen-demos", "--env", "pointmass", "--n", "40", "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = root.path().join("demos/point-mass");
    let names: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.iter().filter(|n| n.ends_with(".csv")).count(), 40);
    assert!(names.contains(&"manifest.json".to_string()));
    let first = std::fs::read_to_string(dir.join("demo_000.csv")).unwrap();
    assert!(first.lines().count() > 1);
}

#[test]
fn train_is_deterministic_and_eval_reads_its_cost() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for root in [a.path(), b.path()] {
        std::fs::write(root.join("tiny.toml"), TINY_TRAIN).unwrap();
        let out = gcl(root, &["train", "--config", "tiny.toml"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("learned controller final distance"));
    }
    for file in ["report.csv", "loss.csv", "cost.json", "manifest.json"] {
        let left = std::fs::read(a.path().join("runs/tiny").join(file)).unwrap();
        let right = std::fs::read(b.path().join("runs/tiny").join(file)).unwrap();
        assert!(left == right, "{file} differs between identical runs");
    }
    let report = std::fs::read_to_string(a.path().join("runs/tiny/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3);

    let cost = a.path().join("runs/tiny/cost.json");
    let out = gcl(
        a.path(),
        &["eval", "--cost", cost.to_str().unwrap(), "--env", "point-mass", "--start", "0.5,-0.5", "--rollouts", "5"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let line = stdout(&out);
    let value: f64 = line.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(line.starts_with("final distance-to-goal") && value.is_finite() && value >= 0.0);

    let out = gcl(a.path(), &["eval", "--cost", cost.to_str().unwrap(), "--env", "reacher"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_two() {
    let root = tempfile::tempdir().unwrap();
    std::fs::write(root.path().join("bad.toml"), "experiment = \"train\"\nunknown_key = 1\n").unwrap();
    assert_eq!(gcl(root.path(), &["train", "--config", "bad.toml"]).status.code(), Some(2));
    assert_eq!(gcl(root.path(), &["train", "--config", "missing.toml"]).status.code(), Some(2));
    assert_eq!(gcl(root.path(), &["gen-demos", "--env", "cartpole"]).status.code(), Some(2));
    std::fs::write(root.path().join("nav.toml"), "experiment = \"nav2d\"\n").unwrap();
    let out = gcl(root.path(), &["consistency", "--config", "nav.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expected 'consistency'"));
}

#[test]
fn numerical_failure_exits_with_three() {
    let root = tempfile::tempdir().unwrap();
    let exploding = TINY_TRAIN.replace("[gcl.ioc]\niterations = 10", "[gcl.ioc]\niterations = 10\nlearning_rate = 1e300");
    std::fs::write(root.path().join("boom.toml"), exploding).unwrap();
    let out = gcl(root.path(), &["train", "--config", "boom.toml"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn small_consistency_run_reports_every_variant() {
    let root = tempfile::tempdir().unwrap();
    let cfg = "experiment = \"consistency\"\nplots = false\n[env]\nhorizon = 10\n[demos]\ncount = 8\nconditions = 2\n\
               [gcl]\niterations = 2\n[gcl.ioc]\niterations = 5\n";
    std::fs::write(root.path().join("c.toml"), cfg).unwrap();
    let out = gcl(root.path(), &["consistency", "--config", "c.toml", "--out", "small"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(root.path().join("small/summary.csv")).unwrap();
    let variants: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["full", "empirical-iw", "no-maxent", "no-iw"]);
    assert!(root.path().join("small/no-iw/condition_1/report.csv").exists());
    assert!(!root.path().join("small/kl.svg").exists());
}

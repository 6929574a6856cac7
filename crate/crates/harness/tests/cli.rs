use std::path::Path;
use std::process::{Command, Output};

fn optenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optenet")).args(args).output().unwrap()
}

fn text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr)
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn validate_reports_constants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "iterations = 5\n[family]\ngenerator = \"mdp\"\nstates = 3\nobservations = 3\n");
    let out = optenet(&["validate", "--config", &cfg]);
    assert!(out.status.success(), "{}", text(&out));
    let s = text(&out);
    assert!(s.contains("delta = 0.05"), "{s}");
    assert!(s.contains("gamma: 3"), "{s}");
    assert!(s.contains("alpha: "), "{s}");
    assert!(s.contains("shares initialization: true"), "{s}");
}

#[test]
fn run_honors_seed_and_out_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "iterations = 4\nbeta = 2.0\nseeds = [0, 1]\noutput = \"unused\"\n[family]\ngenerator = \"random\"\n",
    );
    let out_dir = dir.path().join("out");
    let out = optenet(&["run", "--config", &cfg, "--seed", "9", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out));
    assert!(out_dir.join("seed_9.csv").exists());
    assert!(!out_dir.join("seed_0.csv").exists());
    assert!(out_dir.join("aggregate.csv").exists());

    let dataset = out_dir.join("dataset_seed_9.csv");
    let out = optenet(&["loss", "--config", &cfg, "--dataset", dataset.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out));
    assert!(text(&out).contains("candidate 3:"));
}

#[test]
fn plan_reads_a_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.toml");
    std::fs::write(
        &path,
        r#"horizon = 2
states = 2
actions = 2
observations = 2
initial = [1.0, 0.0]
transitions = [[[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [1.0, 0.0]]]]
emissions = [[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]]
rewards = [[0.0, 0.0], [1.0, 1.0]]
"#,
    )
    .unwrap();
    let out = optenet(&["plan", "--model", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out));
    // action 1 at step 1 moves to the rewarding state
    assert!(text(&out).contains("value: 1"), "{}", text(&out));
}

#[test]
fn bad_configs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "iterations = 0\n[family]\ngenerator = \"mdp\"\n");
    let out = optenet(&["run", "--config", &cfg]);
    assert!(!out.status.success());
    assert!(text(&out).contains("iterations must be at least 1"));
    let out = optenet(&["run", "--config", "/nonexistent/run.toml"]);
    assert!(!out.status.success());
}

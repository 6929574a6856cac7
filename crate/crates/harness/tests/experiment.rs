use std::path::Path;

use optenet::model::Sizes;
use optenet_harness::config::{FamilyConfig, RunConfig, SolverKind};
use optenet_harness::experiment::{candidate_losses, load_dataset, prepare, run_experiment, save_dataset};

fn config(dir: &Path, generator: &str, candidates: usize, k: usize) -> RunConfig {
    let mut c = RunConfig::new(k, FamilyConfig::generated(generator, Sizes::new(2, 2, 2, 3), candidates, 3));
    c.seeds = vec![0, 1, 2];
    c.beta = Some(5.0);
    c.output = dir.to_path_buf();
    c
}

fn csv_column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|row| row.unwrap()[idx].to_string()).collect()
}

#[test]
fn singleton_family_has_zero_suboptimality() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&config(dir.path(), "random", 1, 12)).unwrap();
    assert!(report.succeeded());
    for seed in 0..3 {
        for v in csv_column(&dir.path().join(format!("seed_{seed}.csv")), "suboptimality") {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0);
        }
    }
    for v in csv_column(&dir.path().join("aggregate.csv"), "median_suboptimality") {
        assert_eq!(v.parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn reruns_write_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&config(a.path(), "decoy", 4, 15)).unwrap();
    let mut cb = config(b.path(), "decoy", 4, 15);
    cb.output = b.path().to_path_buf();
    run_experiment(&cb).unwrap();
    for name in ["seed_0.csv", "seed_2.csv", "dataset_seed_1.csv", "aggregate.csv", "summary.txt"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn summary_counts_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&config(dir.path(), "random", 2, 9)).unwrap();
    // (H - 1) A^2 K with H = 3, A = 2
    assert!(report.summary.contains("episodes per seed: 72"), "{}", report.summary);
    assert!(report.records.iter().all(|r| r.episodes == 72));
    assert!(report.summary.contains("seeds: 3 run, 0 failed"));
}

#[test]
fn saved_datasets_reproduce_the_logged_losses() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "random", 3, 6);
    let report = run_experiment(&c).unwrap();
    let prepared = prepare(&c).unwrap();
    for r in &report.records {
        let path = dir.path().join(format!("dataset_seed_{}.csv", r.seed));
        let data = load_dataset(&path, prepared.family.sizes()).unwrap();
        assert_eq!(data, r.dataset);
        let losses = candidate_losses(&prepared, &data).unwrap();
        let last = r.rows.last().unwrap();
        assert_eq!(losses[r.true_index], last.loss_true);
        assert_eq!(losses[last.theta_index], last.loss_chosen);
        let again = dir.path().join("copy.csv");
        save_dataset(&data, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn stochastic_runs_write_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path(), "random", 2, 3);
    c.seeds = vec![4];
    c.solver = SolverKind::Stochastic;
    c.stochastic.steps = 2;
    c.stochastic.n_dual = 3;
    run_experiment(&c).unwrap();
    let steps = csv_column(&dir.path().join("trace_seed_4.csv"), "iteration");
    assert_eq!(steps.len(), 3 * 2);
}

#[test]
fn default_beta_comes_from_delta() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path(), "random", 2, 10);
    c.beta = None;
    let p = prepare(&c).unwrap();
    let expected = optenet::planner::beta_min(p.ctx.dim(), p.gamma, p.ctx.alpha(), 10, 3, 2, 0.05).unwrap();
    assert_eq!(p.beta, expected);
    assert!(!p.beta_overridden);
}

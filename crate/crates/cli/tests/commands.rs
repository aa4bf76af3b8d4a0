use std::fs;
use std::path::Path;
use std::process::Command;

use mongegap::training::derive_seed;
use mongegap_cli::*;

fn small_config(extra: &str) -> RunConfig {
    let text = format!(
        r#"{{
            "seed": 7,
            "dataset": {{"kind": {{"type": "gaussian_pair", "dim": 2}}, "n_train": 512, "n_test": 512}},
            "train": {{"iterations": 200, "batch_size": 64, "hidden": [16, 16]}},
            "eval": {{"max_divergence_points": 256}}
            {extra}
        }}"#
    );
    RunConfig::from_json(&text).unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mongegap"))
}

#[test]
fn train_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(r#", "snapshot_every": 100, "snapshot_grid": 5"#);
    let rec = cmd_train(&cfg, dir.path()).unwrap();
    for f in [TRAIN_LOG, METRICS_FILE, CHECKPOINT_FILE, RESOLVED_CONFIG] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let parsed: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap()).unwrap();
    assert!(parsed["metrics"]["l2_uv"].as_f64().is_some());
    assert_eq!(rec.steps, 200);
    let log = fs::read_to_string(dir.path().join(TRAIN_LOG)).unwrap();
    assert_eq!(log.lines().count(), 200);
    assert!(log.ends_with('\n'));
    let snaps: Vec<_> = fs::read_dir(dir.path().join(SNAPSHOT_DIR)).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(snaps.len(), 3);
    let rows = read_csv(&dir.path().join(SNAPSHOT_DIR).join("step_200.csv"));
    assert_eq!(rows[0], ["x0", "x1", "t0", "t1"]);
    assert_eq!(rows.len(), 1 + 25);
    // the checkpoint reproduces the snapshot
    let model = mongegap::nn::Checkpoint::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    let x: Vec<f64> = rows[7][..2].iter().map(|v| v.parse().unwrap()).collect();
    let t = model.apply_point(&x).unwrap();
    assert_eq!(format!("{:?}", t[0]), rows[7][2]);
    // the written config reloads to the same run
    let again = RunConfig::load(&dir.path().join(RESOLVED_CONFIG)).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn zero_cadence_writes_no_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config("");
    cfg.train.iterations = 20;
    cmd_train(&cfg, dir.path()).unwrap();
    assert!(!dir.path().join(SNAPSHOT_DIR).exists());
}

#[test]
fn sweep_zero_cell_matches_train() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(r#", "sweep": {"lambda_mg": [0.0, 1.0], "lambda_cons": [0.0, 0.01], "seeds": 1}"#);
    cfg.train.iterations = 60;
    assert_eq!(cmd_sweep(&cfg, dir.path(), 2).unwrap(), Status::Complete);
    let rows = read_csv(&dir.path().join(HEATMAP_FILE));
    assert_eq!(rows[0], HEATMAP_COLUMNS);
    assert_eq!(rows.len(), 1 + 4);
    assert!(rows[1..].iter().all(|r| r[5] == "ok"));

    let zero = &rows[1];
    assert_eq!((zero[0].as_str(), zero[1].as_str()), ("0.0", "0.0"));
    let seed = derive_seed(cfg.seed, 0);
    assert_eq!(zero[4], seed.to_string());
    let mut single = cfg.clone();
    single.sweep = None;
    single.seed = seed;
    single.train.lambda_mg = 0.0;
    single.train.lambda_cons = 0.0;
    let rec = cmd_train(&single, &dir.path().join("single")).unwrap();
    let s: f64 = zero[2].parse().unwrap();
    let uv: f64 = zero[3].parse().unwrap();
    assert!((s - rec.metrics.sinkhorn_div).abs() <= 1e-12);
    assert!((uv - rec.metrics.l2_uv.unwrap()).abs() <= 1e-12);
}

#[test]
fn sweep_replicates_give_rows_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(r#", "sweep": {"lambda_mg": [0.0, 1.0], "lambda_cons": [0.0, 0.1], "seeds": 2}"#);
    cfg.train.iterations = 5;
    cmd_sweep(&cfg, dir.path(), 1).unwrap();
    let rows = read_csv(&dir.path().join(HEATMAP_FILE));
    assert_eq!(rows.len(), 1 + 8);
    let seeds: std::collections::BTreeSet<_> = rows[1..].iter().map(|r| r[4].clone()).collect();
    assert_eq!(seeds.len(), 2);
}

#[test]
fn bench_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(r#", "bench": {"dims": [2], "estimators": ["constant", "entropic_map"], "seeds": 2}"#);
    cfg.dataset.n_test = 8192;
    cfg.eval.max_divergence_points = 128;
    assert_eq!(cmd_bench(&cfg, dir.path(), 1).unwrap(), Status::Complete);
    let rows = read_csv(&dir.path().join(BENCH_FILE));
    assert_eq!(rows[0], BENCH_COLUMNS);
    assert_eq!(rows.len(), 1 + 4);
    let uv = |est: &str| -> Vec<f64> { rows[1..].iter().filter(|r| r[1] == est).map(|r| r[4].parse().unwrap()).collect() };
    for c in uv("constant") {
        assert!((c - 100.0).abs() < 5.0, "{c}");
    }
    for (e, c) in uv("entropic_map").iter().zip(uv("constant")) {
        assert!(*e < c, "{e} vs {c}");
    }
}

#[test]
fn bench_single_cell_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(r#", "bench": {"dims": [3], "estimators": ["constant"], "seeds": 3}"#);
    cmd_bench(&cfg, dir.path(), 1).unwrap();
    let rows = read_csv(&dir.path().join(BENCH_FILE));
    assert_eq!(rows.len(), 1 + 3);
    assert!(rows[1..].iter().all(|r| r[0] == "3" && r[1] == "constant"));
}

#[test]
fn bench_learned_estimators_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(r#", "bench": {"dims": [2], "estimators": ["regularized", "unregularized"], "seeds": 1}"#);
    cfg.train.iterations = 10;
    assert_eq!(cmd_bench(&cfg, dir.path(), 2).unwrap(), Status::Complete);
    let rows = read_csv(&dir.path().join(BENCH_FILE));
    assert_eq!(rows.len(), 3);
    assert!(rows[1..].iter().all(|r| r[5] == "ok" && r[4].parse::<f64>().unwrap().is_finite()));
}

#[test]
fn config_defaults_follow_dimension() {
    let cfg = RunConfig::from_json(r#"{"dataset": {"kind": {"type": "gaussian_pair", "dim": 128}, "n_train": 64, "n_test": 64}}"#).unwrap();
    assert_eq!((cfg.train.lambda_mg, cfg.train.lambda_cons), (10.0, 0.1));
    assert_eq!(cfg.train.lr_init, 1e-3);
    let cfg = RunConfig::from_json(r#"{"train": {"lambda_mg": 3.0, "sinkhorn": {"tol": 1e-7}}}"#).unwrap();
    assert_eq!(cfg.train.lambda_mg, 3.0);
    assert_eq!(cfg.train.lambda_cons, 0.01);
    assert_eq!(cfg.train.sinkhorn.tol, 1e-7);
    assert_eq!(cfg.train.sinkhorn.max_iter, 1000);
    assert!(RunConfig::from_json(r#"{"train": {"lambda_mgg": 1.0}}"#).is_err());
    assert!(RunConfig::from_json(r#"{"train": {"lambda_mg": -1.0}}"#).is_err());
    assert!(RunConfig::from_json("[1]").is_err());
    for kind in ["train", "sweep", "bench"] {
        let ex = example_config(kind).unwrap();
        assert_eq!(RunConfig::from_json(&ex.to_pretty_json()).unwrap(), ex);
    }
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["print-config", "sweep"]).output().unwrap();
    assert!(out.status.success());
    let cfg = RunConfig::from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert!(cfg.sweep.is_some());

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"batch_size": 0}}"#).unwrap();
    let out = bin().args(["train", "--config"]).arg(&bad).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));

    let good = dir.path().join("good.json");
    fs::write(
        &good,
        r#"{"dataset": {"kind": {"type": "line1d", "name": "uniform_affine"}, "n_train": 64, "n_test": 64},
            "train": {"iterations": 3, "batch_size": 16, "hidden": [4]}}"#,
    )
    .unwrap();
    let out = bin().args(["train", "--seed", "3", "--config"]).arg(&good).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG), "no output directory");
    let run = dir.path().join("run");
    let out = bin().args(["train", "--seed", "3", "--config"]).arg(&good).arg("--out").arg(&run).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let written = RunConfig::load(&run.join(RESOLVED_CONFIG)).unwrap();
    assert_eq!(written.seed, 3);
}

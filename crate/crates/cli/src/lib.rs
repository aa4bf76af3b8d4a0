//! Experiment harness behind the `mongegap` binary.
//!
//! Every command reads one JSON [`RunConfig`]. `print-config <kind>` prints a
//! complete example with all defaults filled in.
//!
//! Seeds: a run with master seed `s` draws its data with `derive_seed(s, 0)` and
//! trains with `derive_seed(s, 1)`. Replicate `r` of a sweep or bench uses
//! `derive_seed(s, r)` as its own master, so it reproduces `train --seed
//! derive_seed(s, r)` with the same λ values.

mod config;
mod output;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mongegap::datasets::{sample, Dataset, DatasetKind, DatasetSpec};
use mongegap::nn::{Checkpoint, MapModel};
use mongegap::ot::{barycentric_projection, epsilon_rule};
use mongegap::training::{
    constant_baseline, default_lambdas, default_lr_init, derive_seed, evaluate, evaluate_predictions, LossBreakdown,
    MapKind, Metrics, Pools, TrainConfig, Trainer,
};
use mongegap::init::InitScheme;
use mongegap::CostSpec;
use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{example_config, BenchSpec, Estimator, RunConfig, SweepSpec, DATA_SEED_COUNTER, TRAIN_SEED_COUNTER};
pub use output::write_atomic;

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const RESOLVED_CONFIG: &str = "config.json";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const BENCH_FILE: &str = "bench.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";

pub const HEATMAP_COLUMNS: [&str; 6] = ["lambda_mg", "lambda_cons", "sinkhorn_div", "l2_uv", "seed", "status"];
pub const BENCH_COLUMNS: [&str; 6] = ["d", "estimator", "seed", "sinkhorn_div", "l2_uv", "status"];

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Contents of `metrics.json`. Holds no timings, so equal configs give equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub metrics: Metrics,
    pub steps: usize,
    /// Steps where some Sinkhorn solve stopped at its iteration cap.
    pub nonconverged_steps: usize,
    pub final_loss: Option<LossBreakdown>,
}

/// Outcome of a command: all runs completed, or some failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Complete,
    PartialFailure,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Complete => EXIT_OK,
            Status::PartialFailure => EXIT_RUN_FAILED,
        }
    }
}

/// Resolves the output directory: the flag wins over the config.
pub fn output_dir(cfg: &RunConfig, flag: Option<&Path>) -> Result<PathBuf> {
    match (flag, &cfg.out_dir) {
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(p)) => Ok(p.clone()),
        (None, None) => bail!("no output directory: pass --out or set `out_dir`"),
    }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_resolved(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_atomic(&dir.join(RESOLVED_CONFIG), cfg.to_pretty_json().as_bytes())
}

/// Probe points for snapshots: a regular grid over the test-source bounding box
/// in one and two dimensions, the leading test sources otherwise.
pub fn snapshot_probes(x_test: ArrayView2<'_, f64>, per_axis: usize) -> Array2<f64> {
    let d = x_test.ncols();
    let k = per_axis.max(2);
    let lo = x_test.fold_axis(Axis(0), f64::INFINITY, |a, &b| a.min(b));
    let hi = x_test.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b));
    let at = |axis: usize, i: usize| lo[axis] + (hi[axis] - lo[axis]) * i as f64 / (k - 1) as f64;
    match d {
        1 => Array2::from_shape_fn((k, 1), |(i, _)| at(0, i)),
        2 => Array2::from_shape_fn((k * k, 2), |(p, c)| if c == 0 { at(0, p / k) } else { at(1, p % k) }),
        _ => x_test.slice(ndarray::s![..(k * k).min(x_test.nrows()), ..]).to_owned(),
    }
}

struct TrainOutput<'a> {
    dir: &'a Path,
    snapshot_every: usize,
    probes: Array2<f64>,
}

impl TrainOutput<'_> {
    fn snapshot(&self, step: usize, model: &MapModel) -> Result<()> {
        let ts = model.apply(self.probes.view())?;
        let path = self.dir.join(SNAPSHOT_DIR).join(format!("step_{step}.csv"));
        write_atomic(&path, output::snapshot_csv(self.probes.view(), ts.view()).as_bytes())
    }
}

/// Trains on `data` and evaluates on its test split. With `out`, writes the
/// log, snapshots and checkpoint as it goes.
fn train_and_evaluate(cfg: &RunConfig, train: &TrainConfig, data: &Dataset, out: Option<TrainOutput<'_>>) -> Result<MetricsRecord> {
    let pools = Pools::new(data.x_train.view(), data.y_train.view());
    let mut trainer = Trainer::from_pools(train.clone(), &pools)?;
    let mut log = String::new();
    let mut last = None;
    let mut nonconverged = 0;
    if let Some(o) = &out {
        if o.snapshot_every > 0 {
            prepare_dir(&o.dir.join(SNAPSHOT_DIR))?;
            o.snapshot(0, &trainer.model)?;
        }
    }
    let result = trainer.run(&pools, |loss, model| {
        last = Some(*loss);
        nonconverged += usize::from(!loss.sinkhorn_converged);
        if let Some(o) = &out {
            log.push_str(&serde_json::to_string(loss).expect("loss serializes"));
            log.push('\n');
            let done = loss.step + 1;
            if o.snapshot_every > 0 && done % o.snapshot_every == 0 {
                o.snapshot(done, model).map_err(|e| mongegap::Error::Io { path: o.dir.display().to_string(), reason: e.to_string() })?;
            }
        }
        Ok(())
    });
    if let Some(o) = &out {
        write_atomic(&o.dir.join(TRAIN_LOG), log.as_bytes())?;
    }
    result?;
    if let Some(o) = &out {
        write_atomic(&o.dir.join(CHECKPOINT_FILE), Checkpoint::from(&trainer.model).to_json().as_bytes())?;
    }
    let metrics = evaluate(&trainer.model, data.x_test.view(), data.y_test.view(), data.ground_truth.as_ref(), &cfg.eval)?;
    Ok(MetricsRecord { seed: cfg.seed, metrics, steps: trainer.steps_done(), nonconverged_steps: nonconverged, final_loss: last })
}

/// `train`: one run, all outputs under `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<MetricsRecord> {
    prepare_dir(out)?;
    write_resolved(cfg, out)?;
    let (dataset, train) = cfg.seeded();
    let data = sample(&dataset)?;
    let sink = TrainOutput { dir: out, snapshot_every: cfg.snapshot_every, probes: snapshot_probes(data.x_test.view(), cfg.snapshot_grid) };
    let record = train_and_evaluate(cfg, &train, &data, Some(sink))?;
    let mut text = serde_json::to_string_pretty(&record)?;
    text.push('\n');
    write_atomic(&out.join(METRICS_FILE), text.as_bytes())?;
    Ok(record)
}

/// Metrics of `train` under master seed `seed`, without writing files.
pub fn run_metrics(cfg: &RunConfig) -> Result<MetricsRecord> {
    let (dataset, train) = cfg.seeded();
    let data = sample(&dataset)?;
    train_and_evaluate(cfg, &train, &data, None)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

fn replicate(cfg: &RunConfig, r: usize) -> RunConfig {
    RunConfig { seed: derive_seed(cfg.seed, r as u64), ..cfg.clone() }
}

fn report(label: &str, e: &anyhow::Error) {
    eprintln!("run {label} failed: {e:#}");
}

/// `sweep`: one run per `(λ_mg, λ_cons, replicate)`, collected in `heatmap.csv`.
pub fn cmd_sweep(cfg: &RunConfig, out: &Path, workers: usize) -> Result<Status> {
    let Some(spec) = &cfg.sweep else { bail!("config has no `sweep` section") };
    prepare_dir(out)?;
    write_resolved(cfg, out)?;
    let mut jobs = Vec::new();
    for &mg in &spec.lambda_mg {
        for &cons in &spec.lambda_cons {
            for r in 0..spec.seeds {
                let mut run = replicate(cfg, r);
                run.train.lambda_mg = mg;
                run.train.lambda_cons = cons;
                jobs.push(run);
            }
        }
    }
    let results: Vec<Result<MetricsRecord>> =
        pool(workers)?.install(|| jobs.par_iter().map(|run| run.validate().and_then(|_| run_metrics(run))).collect());
    let mut table = output::Table::new(&HEATMAP_COLUMNS);
    let mut status = Status::Complete;
    for (run, res) in jobs.iter().zip(&results) {
        let (s, uv, ok) = match res {
            Ok(m) => (Some(m.metrics.sinkhorn_div), m.metrics.l2_uv, "ok"),
            Err(e) => {
                report(&format!("lambda=({}, {}) seed={}", run.train.lambda_mg, run.train.lambda_cons, run.seed), e);
                status = Status::PartialFailure;
                (None, None, "failed")
            }
        };
        table.row(&[
            output::cell(Some(run.train.lambda_mg)),
            output::cell(Some(run.train.lambda_cons)),
            output::cell(s),
            output::cell(uv),
            run.seed.to_string(),
            ok.into(),
        ]);
    }
    table.write(&out.join(HEATMAP_FILE))?;
    Ok(status)
}

/// Training settings of a learned bench estimator in dimension `d`.
pub fn bench_train_config(base: &TrainConfig, estimator: Estimator, d: usize) -> Option<TrainConfig> {
    let mut t = TrainConfig { lr_init: default_lr_init(d), cost: CostSpec::SqEuclidean, ..base.clone() };
    match estimator {
        Estimator::Regularized => {
            (t.lambda_mg, t.lambda_cons) = default_lambdas(d);
            t.map = MapKind::Structured;
            t.init = InitScheme::Identity;
        }
        Estimator::Unregularized => {
            (t.lambda_mg, t.lambda_cons) = (0.0, 0.0);
            t.map = MapKind::Direct;
            t.init = InitScheme::Random;
        }
        Estimator::EntropicMap | Estimator::Constant => return None,
    }
    Some(t)
}

fn bench_one(cfg: &RunConfig, estimator: Estimator, d: usize) -> Result<Metrics> {
    let (dataset, train) = cfg.seeded();
    let dataset = DatasetSpec { kind: DatasetKind::GaussianPair { dim: d, moments: None }, ..dataset };
    let data = sample(&dataset)?;
    let truth = data.ground_truth.as_ref();
    let (xt, yt) = (data.x_test.view(), data.y_test.view());
    let metrics = match estimator {
        Estimator::Regularized | Estimator::Unregularized => {
            let t = bench_train_config(&train, estimator, d).expect("learned estimator");
            t.validate()?;
            let pools = Pools::new(data.x_train.view(), data.y_train.view());
            let mut trainer = Trainer::from_pools(t, &pools)?;
            trainer.run(&pools, |_, _| Ok(()))?;
            evaluate(&trainer.model, xt, yt, truth, &cfg.eval)?
        }
        Estimator::EntropicMap => {
            let c = CostSpec::SqEuclidean.cost_matrix(xt, data.y_train.view())?;
            let sol = cfg.eval.sinkhorn.solve(c.view(), epsilon_rule(c.view()))?;
            let pred = barycentric_projection(&sol.plan, data.y_train.view())?;
            evaluate_predictions(xt, pred.view(), yt, truth, &cfg.eval)?
        }
        Estimator::Constant => {
            let pred = constant_baseline(data.y_train.view())?.apply(xt);
            evaluate_predictions(xt, pred.view(), yt, truth, &cfg.eval)?
        }
    };
    Ok(metrics)
}

/// `bench`: every estimator on random Gaussian pairs of each dimension, rows in `bench.csv`.
pub fn cmd_bench(cfg: &RunConfig, out: &Path, workers: usize) -> Result<Status> {
    let Some(spec) = &cfg.bench else { bail!("config has no `bench` section") };
    prepare_dir(out)?;
    write_resolved(cfg, out)?;
    let mut jobs = Vec::new();
    for &d in &spec.dims {
        for &est in &spec.estimators {
            for r in 0..spec.seeds {
                jobs.push((d, est, replicate(cfg, r)));
            }
        }
    }
    let results: Vec<Result<Metrics>> = pool(workers)?.install(|| jobs.par_iter().map(|(d, est, run)| bench_one(run, *est, *d)).collect());
    let mut table = output::Table::new(&BENCH_COLUMNS);
    let mut status = Status::Complete;
    for ((d, est, run), res) in jobs.iter().zip(&results) {
        let (s, uv, ok) = match res {
            Ok(m) => (Some(m.sinkhorn_div), m.l2_uv, "ok"),
            Err(e) => {
                report(&format!("d={d} estimator={} seed={}", est.name(), run.seed), e);
                status = Status::PartialFailure;
                (None, None, "failed")
            }
        };
        table.row(&[d.to_string(), est.name().into(), run.seed.to_string(), output::cell(s), output::cell(uv), ok.into()]);
    }
    table.write(&out.join(BENCH_FILE))?;
    Ok(status)
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}

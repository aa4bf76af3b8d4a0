use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mongegap::datasets::{DatasetKind, DatasetSpec};
use mongegap::training::{derive_seed, EvalConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Counters under a run's master seed.
pub const DATA_SEED_COUNTER: u64 = 0;
pub const TRAIN_SEED_COUNTER: u64 = 1;

/// λ grid and replicate count of `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub lambda_mg: Vec<f64>,
    pub lambda_cons: Vec<f64>,
    #[serde(default = "one")]
    pub seeds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Structured map, identity init, dimension-default λ.
    Regularized,
    /// Direct map, random init, λ = 0.
    Unregularized,
    /// Barycentric projection of the entropic plan from test sources to training targets.
    EntropicMap,
    /// Mean of the training targets.
    Constant,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Regularized => "regularized",
            Estimator::Unregularized => "unregularized",
            Estimator::EntropicMap => "entropic_map",
            Estimator::Constant => "constant",
        }
    }
}

/// Dimensions, estimators and replicate count of `bench` on Gaussian pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub dims: Vec<usize>,
    pub estimators: Vec<Estimator>,
    #[serde(default = "one")]
    pub seeds: usize,
}

fn one() -> usize {
    1
}

/// A fully resolved experiment description.
///
/// `seed` is the only seed a user sets; the dataset and training seeds are
/// derived from it (counters 0 and 1) and any values given for them are replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Steps between map snapshots; 0 disables them.
    pub snapshot_every: usize,
    /// Grid points per axis of the snapshot probe set (1-d and 2-d data).
    pub snapshot_grid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchSpec>,
}

fn default_dataset() -> DatasetSpec {
    DatasetSpec { kind: DatasetKind::GaussianPair { dim: 2, moments: None }, seed: 0, n_train: 2048, n_test: 2048 }
}

/// Recursively overlays `patch` onto `base`; objects merge, everything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

impl RunConfig {
    /// Defaults for data of dimension `d`.
    pub fn for_dataset(dataset: DatasetSpec) -> Self {
        let d = dataset.dim();
        Self {
            seed: 0,
            dataset,
            train: TrainConfig::for_dim(d),
            eval: EvalConfig::default(),
            snapshot_every: 0,
            snapshot_grid: 21,
            out_dir: None,
            sweep: None,
            bench: None,
        }
    }

    /// Parses a JSON document. Omitted training fields take their defaults
    /// for the dataset's dimension.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut user: Value = serde_json::from_str(text).context("config is not valid JSON")?;
        let Some(obj) = user.as_object_mut() else { bail!("config must be a JSON object") };
        let dataset: DatasetSpec = match obj.remove("dataset") {
            Some(v) => serde_json::from_value(v).context("invalid `dataset`")?,
            None => default_dataset(),
        };
        let mut resolved = serde_json::to_value(Self::for_dataset(dataset))?;
        merge(&mut resolved, Value::Object(std::mem::take(obj)));
        let cfg: Self = serde_json::from_value(resolved).context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        if !(self.eval.epsilon > 0.0) {
            bail!("eval.epsilon must be positive");
        }
        if let Some(s) = &self.sweep {
            if s.lambda_mg.is_empty() || s.lambda_cons.is_empty() || s.seeds == 0 {
                bail!("sweep needs non-empty grids and seeds >= 1");
            }
        }
        if let Some(b) = &self.bench {
            if b.dims.is_empty() || b.estimators.is_empty() || b.seeds == 0 || b.dims.contains(&0) {
                bail!("bench needs dims >= 1, estimators and seeds >= 1");
            }
        }
        Ok(())
    }

    /// Dataset and training configs with seeds derived from `self.seed`.
    pub fn seeded(&self) -> (DatasetSpec, TrainConfig) {
        let dataset = DatasetSpec { seed: derive_seed(self.seed, DATA_SEED_COUNTER), ..self.dataset.clone() };
        let train = TrainConfig { seed: derive_seed(self.seed, TRAIN_SEED_COUNTER), ..self.train.clone() };
        (dataset, train)
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Example configs printed by `print-config`.
pub fn example_config(kind: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::for_dataset(default_dataset());
    match kind {
        "train" => {}
        "sweep" => {
            cfg.dataset = DatasetSpec { kind: DatasetKind::GaussianPair { dim: 4, moments: None }, ..cfg.dataset };
            cfg.train = TrainConfig::for_dim(4);
            cfg.sweep = Some(SweepSpec { lambda_mg: vec![0.0, 0.1, 1.0], lambda_cons: vec![0.0, 0.01, 0.1], seeds: 3 });
        }
        "bench" => {
            cfg.bench = Some(BenchSpec {
                dims: vec![2, 4, 8, 16],
                estimators: vec![Estimator::Regularized, Estimator::Unregularized, Estimator::EntropicMap, Estimator::Constant],
                seeds: 3,
            });
        }
        other => bail!("unknown config kind `{other}` (expected train, sweep or bench)"),
    }
    Ok(cfg)
}

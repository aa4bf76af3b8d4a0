use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::init::AffineMap;
use crate::nn::MapModel;
use crate::ot::{sinkhorn_divergence, SinkhornConfig};

/// Settings for held-out evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Fixed `ε` of the evaluation divergence, applied to the `½‖x − y‖²` cost.
    pub epsilon: f64,
    /// The divergence uses at most this many leading test points.
    pub max_divergence_points: usize,
    pub sinkhorn: SinkhornConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { epsilon: 0.1, max_divergence_points: 1024, sinkhorn: SinkhornConfig::new(1e-6, 5000) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sinkhorn_div: f64,
    /// Only when a ground-truth map is known.
    pub l2_uv: Option<f64>,
    pub n_test: usize,
    pub divergence_points: usize,
}

/// Total variance: trace of the unbiased covariance of the rows.
pub fn total_variance(ys: ArrayView2<'_, f64>) -> Result<f64> {
    let n = ys.nrows();
    if n < 2 {
        return Err(Error::Empty("need at least two points for a variance"));
    }
    let mean = ys.mean_axis(Axis(0)).expect("non-empty");
    let ss: f64 = ys.rows().into_iter().map(|r| (&r - &mean).mapv(|v| v * v).sum()).sum();
    Ok(ss / (n - 1) as f64)
}

/// `100 · mean‖T̂(xᵢ) − T*(xᵢ)‖² / Var(Y)` in percent.
pub fn unexplained_variance(predicted: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>, ys: ArrayView2<'_, f64>) -> Result<f64> {
    if predicted.dim() != truth.dim() {
        return Err(Error::SizeMismatch { left: predicted.nrows(), right: truth.nrows() });
    }
    if predicted.nrows() == 0 {
        return Err(Error::Empty("predictions"));
    }
    let err: f64 = (&predicted - &truth).mapv(|v| v * v).sum() / predicted.nrows() as f64;
    Ok(100.0 * err / total_variance(ys)?)
}

/// Metrics for precomputed predictions `T̂(X_test)`.
pub fn evaluate_predictions(
    xs: ArrayView2<'_, f64>,
    predicted: ArrayView2<'_, f64>,
    ys: ArrayView2<'_, f64>,
    ground_truth: Option<&AffineMap>,
    cfg: &EvalConfig,
) -> Result<Metrics> {
    if xs.nrows() != predicted.nrows() {
        return Err(Error::SizeMismatch { left: xs.nrows(), right: predicted.nrows() });
    }
    if ys.nrows() < 2 || predicted.nrows() < 2 {
        return Err(Error::Empty("need at least two test points"));
    }
    let k = cfg.max_divergence_points.max(2);
    let kp = k.min(predicted.nrows());
    let ky = k.min(ys.nrows());
    let sinkhorn_div = sinkhorn_divergence(
        predicted.slice(s![..kp, ..]),
        ys.slice(s![..ky, ..]),
        &CostSpec::SqEuclidean,
        cfg.epsilon,
        &cfg.sinkhorn,
    )?;
    let l2_uv = match ground_truth {
        Some(t) => Some(unexplained_variance(predicted, t.apply(xs)?.view(), ys)?),
        None => None,
    };
    Ok(Metrics { sinkhorn_div, l2_uv, n_test: xs.nrows(), divergence_points: kp.max(ky) })
}

/// Held-out metrics of a trained map.
pub fn evaluate(
    model: &MapModel,
    xs: ArrayView2<'_, f64>,
    ys: ArrayView2<'_, f64>,
    ground_truth: Option<&AffineMap>,
    cfg: &EvalConfig,
) -> Result<Metrics> {
    let predicted = model.apply(xs)?;
    evaluate_predictions(xs, predicted.view(), ys, ground_truth, cfg)
}

/// The map sending every input to the mean of the training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantMap {
    pub value: Array1<f64>,
}

impl ConstantMap {
    pub fn apply(&self, xs: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((xs.nrows(), self.value.len()));
        out.rows_mut().into_iter().for_each(|mut r| r.assign(&self.value));
        out
    }
}

pub fn constant_baseline(ys: ArrayView2<'_, f64>) -> Result<ConstantMap> {
    let value = ys.mean_axis(Axis(0)).ok_or(Error::Empty("targets"))?;
    Ok(ConstantMap { value })
}

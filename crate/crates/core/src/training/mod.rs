//! Loss assembly, parameter gradients and the optimization loop.
//!
//! The objective on a batch is
//!
//! ```text
//! total = fitting(T♯X_b, Y_b) + λ_mg · gap(T; R_b) + λ_cons · asym(F; X_b)
//! ```
//!
//! where the fitting term is an entropic transport loss under `½‖x − y‖²`,
//! the gap uses the configured ground cost on the reference batch `R_b`, and
//! the asymmetry penalty only applies to structured maps. Gradients of both
//! transport terms hold their plans fixed at the Sinkhorn optimum.

mod adam;
mod metrics;

pub use adam::{AdamState, ADAM_EPS, BETA1, BETA2};
pub use metrics::{
    constant_baseline, evaluate, evaluate_predictions, total_variance, unexplained_variance, ConstantMap, EvalConfig,
    Metrics,
};

use std::path::PathBuf;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::init::{gaussian_init, identity_init, random_init, InitScheme};
use crate::monge_gap::{entropic_monge_gap, monge_gap_cotangents};
use crate::nn::{MapModel, Parameterization};
use crate::ot::{epsilon_rule, SinkhornConfig, TransportPlan};
use crate::regularizers::{conservativity_gradient, conservativity_hutchinson, gaussian_probes, probe_count};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FittingLoss {
    /// Regularized objective `⟨P, C⟩ − εH(P)` between `T♯X_b` and `Y_b`.
    EntropicWasserstein,
    /// Debiased divergence `W(T♯X, Y) − ½W(T♯X, T♯X) − ½W(Y, Y)`.
    SinkhornDivergence,
}

/// How network outputs become map values; `Structured` takes `h` from `cost`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Direct,
    Structured,
    Sphere,
}

/// Where the Monge gap's reference points come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMeasure {
    SameAsSource,
    /// CSV file with one point per row.
    External(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_mg: f64,
    pub lambda_cons: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub lr_init: f64,
    pub lr_end: f64,
    pub schedule_power: f64,
    pub seed: u64,
    pub fitting_loss: FittingLoss,
    /// Ground cost of the Monge gap (and of `h` for structured maps).
    pub cost: CostSpec,
    pub map: MapKind,
    pub init: InitScheme,
    /// Hidden layer widths; input and output widths follow the data.
    pub hidden: Vec<usize>,
    pub reference_measure: ReferenceMeasure,
    /// Fixed entropic regularization for both transport terms. When unset,
    /// `0.01 · mean(C)` is recomputed on every batch.
    pub epsilon: Option<f64>,
    pub sinkhorn: SinkhornConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_mg: 1.0,
            lambda_cons: 0.01,
            batch_size: 256,
            iterations: 1000,
            lr_init: 0.01,
            lr_end: 1e-5,
            schedule_power: 1.5,
            seed: 0,
            fitting_loss: FittingLoss::EntropicWasserstein,
            cost: CostSpec::SqEuclidean,
            map: MapKind::Structured,
            init: InitScheme::Identity,
            hidden: vec![128, 64, 64],
            reference_measure: ReferenceMeasure::SameAsSource,
            epsilon: None,
            sinkhorn: SinkhornConfig::new(1e-5, 1000),
        }
    }
}

/// `(λ_mg, λ_cons)` defaults by data dimension.
pub fn default_lambdas(d: usize) -> (f64, f64) {
    if d >= 128 {
        (10.0, 0.1)
    } else {
        (1.0, 0.01)
    }
}

/// Initial learning rate default by data dimension.
pub fn default_lr_init(d: usize) -> f64 {
    if d >= 64 {
        1e-3
    } else {
        1e-2
    }
}

impl TrainConfig {
    /// Defaults with dimension-dependent weights and learning rate filled in.
    pub fn for_dim(d: usize) -> Self {
        let (lambda_mg, lambda_cons) = default_lambdas(d);
        Self { lambda_mg, lambda_cons, lr_init: default_lr_init(d), ..Self::default() }
    }

    pub fn parameterization(&self) -> Parameterization {
        match self.map {
            MapKind::Direct => Parameterization::Direct,
            MapKind::Structured => Parameterization::StructuredConjugate(self.cost),
            MapKind::Sphere => Parameterization::SphereNormalized,
        }
    }

    pub fn layer_dims(&self, d: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(d);
        dims.extend_from_slice(&self.hidden);
        dims.push(d);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda_mg >= 0.0 && self.lambda_mg.is_finite()) || !(self.lambda_cons >= 0.0 && self.lambda_cons.is_finite()) {
            return bad("lambda_mg and lambda_cons must be finite and >= 0");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.lr_end > 0.0 && self.lr_init >= self.lr_end && self.lr_init.is_finite()) {
            return bad("need lr_init >= lr_end > 0");
        }
        if !(self.schedule_power > 0.0 && self.schedule_power.is_finite()) {
            return bad("schedule_power must be positive");
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return bad("epsilon must be positive");
            }
        }
        if !(self.sinkhorn.tol > 0.0) || self.sinkhorn.max_iter == 0 {
            return bad("sinkhorn needs tol > 0 and max_iter >= 1");
        }
        if self.hidden.iter().any(|w| *w == 0) {
            return bad("hidden widths must be positive");
        }
        match self.map {
            MapKind::Structured if !self.cost.is_structured() => {
                return Err(Error::StructuredCostUnavailable(self.cost.name()));
            }
            MapKind::Sphere if !self.cost.is_sphere() => return bad("sphere maps need a sphere cost"),
            MapKind::Direct | MapKind::Structured if self.cost.is_sphere() => {
                return bad("sphere costs need the sphere map");
            }
            _ => {}
        }
        if self.init == InitScheme::Gaussian && !(self.map == MapKind::Structured && self.cost == CostSpec::SqEuclidean) {
            return bad("gaussian init needs a structured map with the sqeuclidean cost");
        }
        Ok(())
    }
}

/// `lr(t) = (lr_init − lr_end)·(1 − t/T)^p + lr_end`, with `t` clamped to `T`.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    if cfg.iterations == 0 {
        return cfg.lr_init;
    }
    let frac = (step.min(cfg.iterations) as f64) / cfg.iterations as f64;
    (cfg.lr_init - cfg.lr_end) * (1.0 - frac).powf(cfg.schedule_power) + cfg.lr_end
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Counter-based seed derivation: the `counter`-th output of a SplitMix64
/// generator started at `master`. Independent of evaluation order.
pub fn derive_seed(master: u64, counter: u64) -> u64 {
    let mut z = master.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// sub-seeds of TrainConfig::seed
const INIT_STREAM: u64 = 0;
const BATCH_STREAM: u64 = 1;

/// Initial model for `cfg` on data of the pools' dimension.
pub fn build_model(cfg: &TrainConfig, source: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<MapModel> {
    cfg.validate()?;
    let d = source.ncols();
    if target.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: target.ncols() });
    }
    let dims = cfg.layer_dims(d);
    let seed = derive_seed(cfg.seed, INIT_STREAM);
    let param = cfg.parameterization();
    let net = match cfg.init {
        InitScheme::Random => random_init(&dims, seed)?,
        InitScheme::Identity => identity_init(&dims, seed, &param)?,
        InitScheme::Gaussian => gaussian_init(source, target, &dims, seed)?,
    };
    MapModel::new(param, net)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: usize,
    pub fitting: f64,
    pub monge_gap: f64,
    pub conservativity: f64,
    pub total: f64,
    /// `ε` of the Monge gap.
    pub epsilon_used: f64,
    /// `ε` of the fitting loss.
    pub epsilon_fitting: f64,
    pub lr: f64,
    /// Whether every Sinkhorn solve of the step met its tolerance.
    pub sinkhorn_converged: bool,
}

/// `ε` values for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEpsilons {
    pub fitting: f64,
    pub monge_gap: f64,
}

/// One training batch. `reference = None` reuses the source batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub source: Array2<f64>,
    pub target: Array2<f64>,
    pub reference: Option<Array2<f64>>,
    /// Hutchinson probes; empty unless the map is structured.
    pub probes: Array2<f64>,
}

/// Sample pools batches are drawn from.
#[derive(Debug, Clone, Copy)]
pub struct Pools<'a> {
    pub source: ArrayView2<'a, f64>,
    pub target: ArrayView2<'a, f64>,
    pub reference: Option<ArrayView2<'a, f64>>,
}

impl<'a> Pools<'a> {
    pub fn new(source: ArrayView2<'a, f64>, target: ArrayView2<'a, f64>) -> Self {
        Self { source, target, reference: None }
    }

    fn check(&self) -> Result<()> {
        let d = self.source.ncols();
        for (name, pool) in [("source", Some(self.source)), ("target", Some(self.target)), ("reference", self.reference)] {
            let Some(pool) = pool else { continue };
            if pool.ncols() != d {
                return Err(Error::DimensionMismatch { expected: d, got: pool.ncols() });
            }
            if pool.nrows() == 0 {
                return Err(Error::Config(format!("{name} pool is empty")));
            }
        }
        Ok(())
    }
}

fn gather(pool: ArrayView2<'_, f64>, size: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..pool.nrows())).collect();
    pool.select(Axis(0), &idx)
}

/// Uniform draws with replacement: source, target, reference, then probes.
pub fn draw_batch(pools: &Pools<'_>, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Batch {
    let source = gather(pools.source, cfg.batch_size, rng);
    let target = gather(pools.target, cfg.batch_size, rng);
    let reference = pools.reference.map(|r| gather(r, cfg.batch_size, rng));
    let d = pools.source.ncols();
    let probes = if cfg.map == MapKind::Structured {
        gaussian_probes(probe_count(d), d, rng)
    } else {
        Array2::zeros((0, d))
    };
    Batch { source, target, reference, probes }
}

/// `Σⱼ P[i][j] (tᵢ − yⱼ)`: the gradient of `⟨P, C⟩` in `tᵢ` for `C = ½‖t − y‖²`.
fn quadratic_row_cotangent(plan: &TransportPlan, ts: ArrayView2<'_, f64>, ys: ArrayView2<'_, f64>) -> Array2<f64> {
    let p = &plan.matrix;
    let mass = p.sum_axis(Axis(1));
    &ts * &mass.insert_axis(Axis(1)) - p.dot(&ys)
}

/// `Σⱼ P[j][i] (tᵢ − yⱼ)`: the same in the second argument.
fn quadratic_col_cotangent(plan: &TransportPlan, ts: ArrayView2<'_, f64>, ys: ArrayView2<'_, f64>) -> Array2<f64> {
    let p = &plan.matrix;
    let mass = p.sum_axis(Axis(0));
    &ts * &mass.insert_axis(Axis(1)) - p.t().dot(&ys)
}

struct Evaluation {
    loss: LossBreakdown,
    gradient: Option<Vec<f64>>,
}

fn evaluate_batch(model: &MapModel, batch: &Batch, cfg: &TrainConfig, eps: Option<StepEpsilons>, want_grad: bool) -> Result<Evaluation> {
    let xb = batch.source.view();
    let yb = batch.target.view();
    let sq = CostSpec::SqEuclidean;
    let mut converged = true;
    let fixed = |rule: f64, pick: fn(&StepEpsilons) -> f64| eps.as_ref().map(pick).or(cfg.epsilon).unwrap_or(rule);

    let txs = model.apply(xb)?;
    let c_xy = sq.cost_matrix(txs.view(), yb)?;
    let eps_fit = fixed(epsilon_rule(c_xy.view()), |e| e.fitting);
    let sol_xy = cfg.sinkhorn.solve(c_xy.view(), eps_fit)?;
    converged &= sol_xy.converged;
    let mut fitting = sol_xy.regularized_cost;
    let mut cot = if want_grad { Some(quadratic_row_cotangent(&sol_xy.plan, txs.view(), yb)) } else { None };
    drop(c_xy);
    if cfg.fitting_loss == FittingLoss::SinkhornDivergence {
        let c_xx = sq.cost_matrix(txs.view(), txs.view())?;
        let sol_xx = cfg.sinkhorn.solve_symmetric(c_xx.view(), eps_fit)?;
        let c_yy = sq.cost_matrix(yb, yb)?;
        let sol_yy = cfg.sinkhorn.solve_symmetric(c_yy.view(), eps_fit)?;
        converged &= sol_xx.converged && sol_yy.converged;
        fitting -= 0.5 * (sol_xx.regularized_cost + sol_yy.regularized_cost);
        if let Some(cot) = cot.as_mut() {
            let both = quadratic_row_cotangent(&sol_xx.plan, txs.view(), txs.view())
                + quadratic_col_cotangent(&sol_xx.plan, txs.view(), txs.view());
            cot.scaled_add(-0.5, &both);
        }
    }

    let refs = batch.reference.as_ref().map(|r| r.view()).unwrap_or(xb);
    let trefs_owned = match &batch.reference {
        Some(r) => Some(model.apply(r.view())?),
        None => None,
    };
    let trefs = trefs_owned.as_ref().map(|t| t.view()).unwrap_or(txs.view());
    let eps_mg = match eps.map(|e| e.monge_gap).or(cfg.epsilon) {
        Some(e) => e,
        None => epsilon_rule(cfg.cost.cost_matrix(refs, trefs)?.view()),
    };
    let (gap, sol_mg) = entropic_monge_gap(refs, trefs, &cfg.cost, eps_mg, &cfg.sinkhorn)?;
    converged &= sol_mg.converged;

    let mut gradient = None;
    if want_grad {
        let mut cot = cot.take().expect("requested");
        let mut extra: Option<Vec<f64>> = None;
        if cfg.lambda_mg > 0.0 {
            let mg_cot = monge_gap_cotangents(refs, trefs, &cfg.cost, &sol_mg.plan)?;
            if batch.reference.is_none() {
                cot.scaled_add(cfg.lambda_mg, &mg_cot);
            } else {
                let mut g = model.param_gradient(refs, mg_cot.view())?;
                g.iter_mut().for_each(|v| *v *= cfg.lambda_mg);
                extra = Some(g);
            }
        }
        let mut g = model.param_gradient(xb, cot.view())?;
        if let Some(e) = extra {
            g.iter_mut().zip(e).for_each(|(a, b)| *a += b);
        }
        gradient = Some(g);
    }

    let mut conservativity = 0.0;
    if cfg.map == MapKind::Structured {
        if batch.probes.nrows() == 0 {
            return Err(Error::Empty("probe vectors"));
        }
        if want_grad && cfg.lambda_cons > 0.0 {
            let (value, g) = conservativity_gradient(&model.net, xb, batch.probes.view())?;
            conservativity = value.value;
            let total = gradient.as_mut().expect("requested");
            total.iter_mut().zip(g).for_each(|(a, b)| *a += cfg.lambda_cons * b);
        } else {
            conservativity = conservativity_hutchinson(&model.net, xb, batch.probes.view())?.value;
        }
    }

    let total = fitting + cfg.lambda_mg * gap.gap + cfg.lambda_cons * conservativity;
    let loss = LossBreakdown {
        step: 0,
        fitting,
        monge_gap: gap.gap,
        conservativity,
        total,
        epsilon_used: eps_mg,
        epsilon_fitting: eps_fit,
        lr: 0.0,
        sinkhorn_converged: converged,
    };
    Ok(Evaluation { loss, gradient })
}

/// Loss terms on a batch. `eps` overrides the per-batch `ε` rule.
pub fn total_loss(model: &MapModel, batch: &Batch, cfg: &TrainConfig, eps: Option<StepEpsilons>) -> Result<LossBreakdown> {
    Ok(evaluate_batch(model, batch, cfg, eps, false)?.loss)
}

/// Loss terms and the gradient of `total` over the flat parameter vector.
///
/// `ε` is treated as a constant even when the rule derives it from the batch.
pub fn loss_gradient(
    model: &MapModel,
    batch: &Batch,
    cfg: &TrainConfig,
    eps: Option<StepEpsilons>,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let e = evaluate_batch(model, batch, cfg, eps, true)?;
    Ok((e.loss, e.gradient.expect("requested")))
}

/// Draws a batch, computes the gradient and applies one Adam update at
/// `lr_schedule(step)`. On a non-finite loss or gradient the model and
/// optimizer are left untouched.
pub fn train_step(
    model: &mut MapModel,
    optimizer: &mut AdamState,
    pools: &Pools<'_>,
    cfg: &TrainConfig,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let batch = draw_batch(pools, cfg, rng);
    let (mut loss, grad) = loss_gradient(model, &batch, cfg, None)?;
    loss.step = step;
    loss.lr = lr_schedule(step, cfg);
    if !loss.total.is_finite() {
        return Err(Error::StepAborted { step, detail: format!("non-finite loss {loss:?}") });
    }
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::StepAborted { step, detail: format!("non-finite gradient entry {k} ({}); {loss:?}", grad[k]) });
    }
    optimizer.update(model.net.params_mut(), &grad, loss.lr)?;
    Ok(loss)
}

/// Owns a model, its optimizer state and the batch RNG of one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: MapModel,
    pub optimizer: AdamState,
    pub config: TrainConfig,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(model: MapModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if model.parameterization != config.parameterization() {
            return Err(Error::Config("model parameterization differs from the config".into()));
        }
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, BATCH_STREAM));
        Ok(Self { optimizer: AdamState::new(model.num_params()), model, config, rng, step: 0 })
    }

    /// Builds the initial model from the pools and wraps it.
    pub fn from_pools(config: TrainConfig, pools: &Pools<'_>) -> Result<Self> {
        let model = build_model(&config, pools.source, pools.target)?;
        Self::new(model, config)
    }

    /// Number of completed steps.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn step(&mut self, pools: &Pools<'_>) -> Result<LossBreakdown> {
        pools.check()?;
        if pools.source.ncols() != self.model.dim() {
            return Err(Error::DimensionMismatch { expected: self.model.dim(), got: pools.source.ncols() });
        }
        let loss = train_step(&mut self.model, &mut self.optimizer, pools, &self.config, self.step, &mut self.rng)?;
        self.step += 1;
        Ok(loss)
    }

    /// Runs the remaining iterations, calling `observer` after every step.
    pub fn run<F>(&mut self, pools: &Pools<'_>, mut observer: F) -> Result<()>
    where
        F: FnMut(&LossBreakdown, &MapModel) -> Result<()>,
    {
        while self.step < self.config.iterations {
            let loss = self.step(pools)?;
            observer(&loss, &self.model)?;
        }
        Ok(())
    }
}

/// Trains a fresh model for `cfg.iterations` steps and returns it with its loss stream.
pub fn fit(cfg: &TrainConfig, pools: &Pools<'_>) -> Result<(MapModel, Vec<LossBreakdown>)> {
    let mut trainer = Trainer::from_pools(cfg.clone(), pools)?;
    let mut log = Vec::with_capacity(cfg.iterations);
    trainer.run(pools, |l, _| {
        log.push(*l);
        Ok(())
    })?;
    Ok((trainer.model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig { lr_init: 0.01, lr_end: 1e-5, iterations: 100, ..TrainConfig::default() };
        assert_eq!(lr_schedule(0, &cfg), 0.01);
        assert_eq!(lr_schedule(100, &cfg), 1e-5);
        let mid = (0.01 - 1e-5) * 0.5f64.powf(1.5) + 1e-5;
        assert_eq!(lr_schedule(50, &cfg), mid);
        assert!((mid - 3.542e-3).abs() < 1e-6);
        assert_eq!(lr_schedule(500, &cfg), 1e-5);
    }

    #[test]
    fn config_defaults_by_dimension() {
        assert_eq!(default_lambdas(2), (1.0, 0.01));
        assert_eq!(default_lambdas(64), (1.0, 0.01));
        assert_eq!(default_lambdas(128), (10.0, 0.1));
        assert_eq!(TrainConfig::for_dim(64).lr_init, 1e-3);
        assert_eq!(TrainConfig::for_dim(32).lr_init, 1e-2);
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        for bad in [
            TrainConfig { lambda_mg: -1.0, ..ok.clone() },
            TrainConfig { batch_size: 1, ..ok.clone() },
            TrainConfig { lr_end: 0.1, ..ok.clone() },
            TrainConfig { cost: CostSpec::EuclideanDistance, ..ok.clone() },
            TrainConfig { map: MapKind::Sphere, ..ok.clone() },
            TrainConfig { map: MapKind::Direct, init: InitScheme::Gaussian, ..ok.clone() },
            TrainConfig { epsilon: Some(0.0), ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = TrainConfig {
            reference_measure: ReferenceMeasure::External("ref.csv".into()),
            cost: CostSpec::power_norm(1.5).unwrap(),
            ..TrainConfig::default()
        };
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), cfg);
        let partial: TrainConfig = serde_json::from_str(r#"{"lambda_mg": 0.0}"#).unwrap();
        assert_eq!(partial.lambda_mg, 0.0);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lamda_mg": 0.0}"#).is_err());
    }

    #[test]
    fn seeds_differ_and_repeat() {
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        let all: std::collections::BTreeSet<u64> = (0..1000).map(|k| derive_seed(7, k)).collect();
        assert_eq!(all.len(), 1000);
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }

    fn gaussian(n: usize, d: usize, shift: f64, scale: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || shift + scale * rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn zero_lambdas_total_is_fitting() {
        let x = gaussian(64, 2, 0.0, 1.0, 1);
        let y = gaussian(64, 2, 1.0, 0.5, 2);
        let cfg = TrainConfig { lambda_mg: 0.0, lambda_cons: 0.0, hidden: vec![8], batch_size: 16, ..TrainConfig::default() };
        let model = build_model(&cfg, x.view(), y.view()).unwrap();
        let batch = draw_batch(&Pools::new(x.view(), y.view()), &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let l = total_loss(&model, &batch, &cfg, None).unwrap();
        assert_eq!(l.total, l.fitting);
        assert!(l.monge_gap > 0.0);
    }

    #[test]
    fn identity_on_equal_measures() {
        let x = gaussian(32, 2, 0.0, 1.0, 3);
        let mut net = crate::nn::Mlp::zeros(&[2, 4, 2], crate::nn::Activation::Gelu, true).unwrap();
        net.set_residual(&[0.5, 0.2, 0.2, 0.1], &[0.0, 0.0]).unwrap();
        let model = MapModel::new(Parameterization::StructuredConjugate(CostSpec::SqEuclidean), net).unwrap();
        // F is symmetric linear, T = x − F(x) is not the identity but is a gradient field
        let cfg = TrainConfig::default();
        let batch = Batch { source: x.clone(), target: x.clone(), reference: None, probes: gaussian(2, 2, 0.0, 1.0, 4) };
        let l = total_loss(&model, &batch, &cfg, None).unwrap();
        assert_eq!(l.conservativity, 0.0);

        let id = MapModel::new(
            Parameterization::StructuredConjugate(CostSpec::SqEuclidean),
            crate::nn::Mlp::zeros(&[2, 4, 2], crate::nn::Activation::Gelu, false).unwrap(),
        )
        .unwrap();
        let cfg = TrainConfig { fitting_loss: FittingLoss::SinkhornDivergence, sinkhorn: SinkhornConfig::new(1e-10, 20_000), ..cfg };
        let l = total_loss(&id, &batch, &cfg, None).unwrap();
        assert!(l.fitting.abs() < 1e-9, "{}", l.fitting);
        assert!(l.monge_gap > 0.0 && l.monge_gap < 0.1);
        assert_eq!(l.conservativity, 0.0);
        assert_eq!(l.total, l.fitting + l.monge_gap * cfg.lambda_mg);
    }

    fn fd_check(cfg: &TrainConfig, dims: &[usize], reference: bool) {
        let n = 8;
        let x = gaussian(n, dims[0], 0.0, 1.0, 10);
        let y = gaussian(n, dims[0], 1.0, 0.7, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = crate::nn::Mlp::zeros(dims, crate::nn::Activation::Gelu, true).unwrap();
        net.params_mut().iter_mut().for_each(|p| *p = rng.random_range(-0.5..0.5));
        let model = MapModel::new(cfg.parameterization(), net).unwrap();
        let batch = Batch {
            source: x.clone(),
            target: y,
            reference: reference.then(|| gaussian(n, dims[0], 0.3, 1.2, 12)),
            probes: gaussian(2, dims[0], 0.0, 1.0, 13),
        };
        let (l0, g) = loss_gradient(&model, &batch, cfg, None).unwrap();
        let eps = StepEpsilons { fitting: l0.epsilon_fitting, monge_gap: l0.epsilon_used };
        let h = 1e-5;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..model.num_params() {
            let mut a = model.clone();
            a.net.params_mut()[k] += h;
            let mut b = model.clone();
            b.net.params_mut()[k] -= h;
            let fd = (total_loss(&a, &batch, cfg, Some(eps)).unwrap().total - total_loss(&b, &batch, cfg, Some(eps)).unwrap().total)
                / (2.0 * h);
            num += (fd - g[k]).powi(2);
            den += fd * fd;
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-4, "{cfg:?}: {rel}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let base = TrainConfig { lambda_mg: 1.0, lambda_cons: 0.5, sinkhorn: SinkhornConfig::new(1e-10, 20_000), ..TrainConfig::default() };
        fd_check(&base, &[2, 8, 2], false);
        fd_check(&TrainConfig { fitting_loss: FittingLoss::SinkhornDivergence, ..base.clone() }, &[2, 8, 2], false);
        fd_check(&base, &[2, 8, 2], true);
        fd_check(&TrainConfig { map: MapKind::Direct, cost: CostSpec::EuclideanDistance, ..base.clone() }, &[3, 6, 3], false);
        fd_check(
            &TrainConfig { cost: CostSpec::power_norm(1.5).unwrap(), epsilon: Some(0.05), ..base.clone() },
            &[2, 8, 2],
            false,
        );
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let x = gaussian(64, 2, 0.0, 1.0, 1);
        let y = gaussian(64, 2, 1.0, 0.5, 2);
        let cfg = TrainConfig { lr_init: 0.0, lr_end: 0.0, hidden: vec![8], batch_size: 16, iterations: 3, ..TrainConfig::default() };
        let pools = Pools::new(x.view(), y.view());
        let model = build_model(&TrainConfig { lr_end: 1e-5, lr_init: 1e-5, ..cfg.clone() }, x.view(), y.view()).unwrap();
        let mut m = model.clone();
        let mut opt = AdamState::new(m.num_params());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 0..3 {
            train_step(&mut m, &mut opt, &pools, &cfg, t, &mut rng).unwrap();
        }
        assert_eq!(m, model);
    }

    #[test]
    fn short_run_is_deterministic_and_decreases() {
        let x = gaussian(512, 2, 0.0, 1.0, 1);
        let y = gaussian(512, 2, 2.0, 0.5, 2);
        let cfg = TrainConfig { hidden: vec![32, 32], batch_size: 64, iterations: 200, ..TrainConfig::default() };
        let pools = Pools::new(x.view(), y.view());
        let (m1, log1) = fit(&cfg, &pools).unwrap();
        let (m2, log2) = fit(&cfg, &pools).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(log1, log2);
        assert!(log1.iter().all(|l| l.total.is_finite()));
        let head: f64 = log1[..20].iter().map(|l| l.total).sum();
        let tail: f64 = log1[180..].iter().map(|l| l.total).sum();
        assert!(tail < head, "{head} -> {tail}");
    }
}

//! The Monge gap of a map on a sampled reference measure.
//!
//! For reference points `x₁…xₙ` and their images `tᵢ = T(xᵢ)`,
//!
//! ```text
//! M(T) = (1/n) Σᵢ c(xᵢ, tᵢ) − W_{c,ε}(ρ̂, T♯ρ̂)
//! ```
//!
//! i.e. the displacement cost `T` actually pays minus the cheapest way to move
//! the same points onto the same images. It depends on `T` only through the
//! values `tᵢ`, so everything here takes the image matrix rather than a model,
//! except [`monge_gap_gradient`].

use ndarray::{Array2, ArrayView2};

use crate::costs::CostSpec;
use crate::error::{Error, Result};
use crate::nn::MapModel;
use crate::ot::{brute_force_assignment, exact_assignment, SinkhornConfig, SinkhornSolution, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MongeGapValue {
    /// `(1/n) Σᵢ c(xᵢ, T(xᵢ))`
    pub displacement: f64,
    /// Optimal (entropic when `epsilon > 0`) transport cost between `ρ̂` and `T♯ρ̂`.
    pub ot_cost: f64,
    /// `displacement − ot_cost`
    pub gap: f64,
    pub epsilon: f64,
}

impl MongeGapValue {
    fn new(displacement: f64, ot_cost: f64, epsilon: f64) -> Self {
        Self { displacement, ot_cost, gap: displacement - ot_cost, epsilon }
    }
}

fn check_pair(xs: ArrayView2<'_, f64>, txs: ArrayView2<'_, f64>) -> Result<()> {
    if xs.nrows() != txs.nrows() {
        return Err(Error::SizeMismatch { left: xs.nrows(), right: txs.nrows() });
    }
    if xs.nrows() == 0 {
        return Err(Error::Empty("reference samples"));
    }
    Ok(())
}

fn displacement(cost_matrix: &Array2<f64>) -> f64 {
    cost_matrix.diag().sum() / cost_matrix.nrows() as f64
}

/// Monge gap estimate; `epsilon = 0` uses an exact assignment, `epsilon > 0`
/// the entropic objective `⟨P, C⟩ − εH(P)`.
pub fn monge_gap(
    xs: ArrayView2<'_, f64>,
    txs: ArrayView2<'_, f64>,
    cost: &CostSpec,
    epsilon: f64,
    config: &SinkhornConfig,
) -> Result<MongeGapValue> {
    if epsilon == 0.0 {
        check_pair(xs, txs)?;
        let c = cost.cost_matrix(xs, txs)?;
        let a = exact_assignment(c.view())?;
        Ok(MongeGapValue::new(displacement(&c), a.cost, 0.0))
    } else {
        Ok(entropic_monge_gap(xs, txs, cost, epsilon, config)?.0)
    }
}

/// Entropic Monge gap together with the Sinkhorn solution it was computed from.
pub fn entropic_monge_gap(
    xs: ArrayView2<'_, f64>,
    txs: ArrayView2<'_, f64>,
    cost: &CostSpec,
    epsilon: f64,
    config: &SinkhornConfig,
) -> Result<(MongeGapValue, SinkhornSolution)> {
    check_pair(xs, txs)?;
    let c = cost.cost_matrix(xs, txs)?;
    let sol = config.solve(c.view(), epsilon)?;
    Ok((MongeGapValue::new(displacement(&c), sol.regularized_cost, epsilon), sol))
}

/// Monge gap through exhaustive search over permutations (`n ≤ 9`):
/// `(1/n) Σᵢ c(xᵢ, T(xᵢ)) − min_σ (1/n) Σᵢ c(xᵢ, T(x_σ(i)))`.
pub fn monge_gap_permutation(xs: ArrayView2<'_, f64>, txs: ArrayView2<'_, f64>, cost: &CostSpec) -> Result<MongeGapValue> {
    check_pair(xs, txs)?;
    let c = cost.cost_matrix(xs, txs)?;
    let a = brute_force_assignment(c.view())?;
    Ok(MongeGapValue::new(displacement(&c), a.cost, 0.0))
}

/// `D[i][j] = δᵢⱼ/n − P[i][j]`, the weights of `∇θ c(xᵢ, T_θ(xⱼ))` in the
/// gradient of the entropic Monge gap.
pub fn danskin_coefficients(plan: &TransportPlan) -> Result<Array2<f64>> {
    let (n, m) = plan.matrix.dim();
    if n != m {
        return Err(Error::NotSquare { rows: n, cols: m });
    }
    let inv_n = 1.0 / n as f64;
    Ok(Array2::from_shape_fn((n, n), |(i, j)| if i == j { inv_n } else { 0.0 } - plan.matrix[[i, j]]))
}

/// Cotangents `∂M/∂tⱼ = Σᵢ D[i][j] ∇₂c(xᵢ, tⱼ)` for a fixed plan.
///
/// Singular cost gradients are resolved with [`CostSpec::grad_x_jittered`].
pub fn monge_gap_cotangents(
    xs: ArrayView2<'_, f64>,
    txs: ArrayView2<'_, f64>,
    cost: &CostSpec,
    plan: &TransportPlan,
) -> Result<Array2<f64>> {
    check_pair(xs, txs)?;
    let d = danskin_coefficients(plan)?;
    let n = xs.nrows();
    let mut cot = Array2::zeros(txs.dim());
    let xs = xs.as_standard_layout();
    let txs_std = txs.as_standard_layout();
    for j in 0..n {
        let t = txs_std.row(j);
        let t = t.as_slice().expect("standard layout");
        for i in 0..n {
            let w = d[[i, j]];
            if w == 0.0 {
                continue;
            }
            let g = cost.grad_x_jittered(t, xs.row(i).as_slice().expect("standard layout"))?;
            cot.row_mut(j).iter_mut().zip(g).for_each(|(c, gv)| *c += w * gv);
        }
    }
    Ok(cot)
}

#[derive(Debug, Clone)]
pub struct MongeGapGradient {
    pub value: MongeGapValue,
    /// Gradient over the flat parameter vector of the model.
    pub gradient: Vec<f64>,
    pub converged: bool,
}

/// Value and parameter gradient of the entropic Monge gap of `model` on `xs`.
///
/// The plan is held fixed at the Sinkhorn optimum (envelope theorem), so only
/// the dependence of the cost matrix on `T_θ(xⱼ)` is differentiated.
pub fn monge_gap_gradient(
    xs: ArrayView2<'_, f64>,
    model: &MapModel,
    cost: &CostSpec,
    epsilon: f64,
    config: &SinkhornConfig,
) -> Result<MongeGapGradient> {
    if !(epsilon > 0.0) {
        return Err(Error::Config("the Monge gap gradient needs epsilon > 0".into()));
    }
    let txs = model.apply(xs)?;
    let (value, sol) = entropic_monge_gap(xs, txs.view(), cost, epsilon, config)?;
    let cot = monge_gap_cotangents(xs, txs.view(), cost, &sol.plan)?;
    let gradient = model.param_gradient(xs, cot.view())?;
    Ok(MongeGapGradient { value, gradient, converged: sol.converged })
}

//! Discrete optimal transport between uniform empirical measures.

mod assignment;
mod sinkhorn;

pub use assignment::{brute_force_assignment, exact_assignment, mean_cost, Assignment, BRUTE_FORCE_MAX};
pub use sinkhorn::{sinkhorn, sinkhorn_symmetric, SinkhornConfig, SinkhornSolution, TransportPlan};

use ndarray::{Array2, ArrayView2};

use crate::costs::CostSpec;
use crate::error::{Error, Result};

/// Smallest value [`epsilon_rule`] returns.
pub const EPSILON_FLOOR: f64 = 1e-12;

/// `ε = 0.01 · mean(C)`, floored at [`EPSILON_FLOOR`].
pub fn epsilon_rule(cost: ArrayView2<'_, f64>) -> f64 {
    let mean = cost.mean().unwrap_or(0.0);
    (0.01 * mean).max(EPSILON_FLOOR)
}

/// Debiased entropic divergence
/// `S(X, Y) = W_ε(X, Y) − ½(W_ε(X, X) + W_ε(Y, Y))`, using the regularized
/// objective in all three terms.
pub fn sinkhorn_divergence(
    xs: ArrayView2<'_, f64>,
    ys: ArrayView2<'_, f64>,
    cost: &CostSpec,
    epsilon: f64,
    config: &SinkhornConfig,
) -> Result<f64> {
    let xy = config.solve(cost.cost_matrix(xs, ys)?.view(), epsilon)?.regularized_cost;
    let xx = config.solve_symmetric(cost.cost_matrix(xs, xs)?.view(), epsilon)?.regularized_cost;
    let yy = config.solve_symmetric(cost.cost_matrix(ys, ys)?.view(), epsilon)?.regularized_cost;
    Ok(xy - 0.5 * (xx + yy))
}

/// Entropic-map baseline: maps each `X[i]` to the barycenter of `Y` under row
/// `i` of the entropic plan for the quadratic cost.
///
/// Rows are renormalized by their sum, which equals `n·Σⱼ P[i][j]·Y[j]` up to
/// the solver's marginal tolerance.
pub fn entropic_barycentric_map(
    xs: ArrayView2<'_, f64>,
    ys: ArrayView2<'_, f64>,
    epsilon: f64,
    config: &SinkhornConfig,
) -> Result<Array2<f64>> {
    let c = CostSpec::SqEuclidean.cost_matrix(xs, ys)?;
    let sol = config.solve(c.view(), epsilon)?;
    barycentric_projection(&sol.plan, ys)
}

/// Row-normalized barycentric projection `T(xᵢ) = Σⱼ P[i][j] Y[j] / Σⱼ P[i][j]`.
pub fn barycentric_projection(plan: &TransportPlan, ys: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if plan.cols() != ys.nrows() {
        return Err(Error::SizeMismatch { left: plan.cols(), right: ys.nrows() });
    }
    let mut out = Array2::zeros((plan.rows(), ys.ncols()));
    for (i, row) in plan.matrix.rows().into_iter().enumerate() {
        let mass = row.sum();
        if !(mass > 0.0) {
            return Err(Error::NonFinite("transport plan row"));
        }
        for (j, p) in row.iter().enumerate() {
            let w = p / mass;
            out.row_mut(i).scaled_add(w, &ys.row(j));
        }
    }
    Ok(out)
}

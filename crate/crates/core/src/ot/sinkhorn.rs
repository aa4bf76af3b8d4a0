use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A coupling between two uniform empirical measures.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub matrix: Array2<f64>,
}

impl TransportPlan {
    pub fn new(matrix: Array2<f64>) -> Self {
        Self { matrix }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Largest absolute deviation of the row and column sums from `1/n`, `1/m`.
    pub fn marginal_violation(&self) -> f64 {
        let (n, m) = self.matrix.dim();
        let (a, b) = (1.0 / n as f64, 1.0 / m as f64);
        let rows = self.matrix.rows().into_iter().map(|r| (r.sum() - a).abs());
        let cols = self.matrix.columns().into_iter().map(|c| (c.sum() - b).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }
}

/// Stopping rule for [`sinkhorn`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    /// L∞ tolerance on both marginals.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 2000 }
    }
}

impl SinkhornConfig {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self { tol, max_iter }
    }

    pub fn solve(&self, cost: ArrayView2<'_, f64>, epsilon: f64) -> Result<SinkhornSolution> {
        sinkhorn(cost, epsilon, self.tol, self.max_iter)
    }

    pub fn solve_symmetric(&self, cost: ArrayView2<'_, f64>, epsilon: f64) -> Result<SinkhornSolution> {
        sinkhorn_symmetric(cost, epsilon, self.tol, self.max_iter)
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub plan: TransportPlan,
    /// Log-domain potentials: `P[i][j] = exp((f[i] + g[j] − C[i][j]) / ε)`.
    pub f: Array1<f64>,
    pub g: Array1<f64>,
    pub epsilon: f64,
    /// `⟨P, C⟩`
    pub transport_cost: f64,
    /// `⟨P, C⟩ − εH(P)`
    pub regularized_cost: f64,
    pub iterations: usize,
    pub marginal_violation: f64,
    pub converged: bool,
}

// Scalings beyond this magnitude are folded back into the potentials.
const ABSORB_THRESHOLD: f64 = 1e30;
const UNDERFLOW: f64 = 1e-250;
// ε schedule of the warm start: from max|C| down by this factor per stage
// until within this ratio of the target, a few scaling steps per stage.
const WARM_START_DECAY: f64 = 0.5;
const WARM_START_RATIO: f64 = 2.0;
const WARM_START_STEPS: usize = 10;

/// Entropic OT between uniform measures on the rows and columns of `cost`.
///
/// Runs Sinkhorn scaling on a kernel built around the current log-domain
/// potentials; whenever the scalings grow past `1e±30` or a kernel row/column
/// underflows, they are absorbed into the potentials and that half-step is
/// redone exactly in the log domain. This keeps `ε` as small as `1e-3·mean(C)`
/// safe while costing one multiply-add per entry on ordinary iterations.
///
/// Stops when the L∞ marginal violation drops to `tol` or after `max_iter`
/// iterations; in the latter case the best iterate seen is returned with
/// `converged = false`.
///
/// A square symmetric `cost` is handed to [`sinkhorn_symmetric`].
pub fn sinkhorn(cost: ArrayView2<'_, f64>, epsilon: f64, tol: f64, max_iter: usize) -> Result<SinkhornSolution> {
    let (n, m) = cost.dim();
    if n == 0 || m == 0 {
        return Err(Error::Empty("cost matrix"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix"));
    }
    if n == m && is_symmetric(cost) {
        return sinkhorn_symmetric(cost, epsilon, tol, max_iter);
    }
    scaling(cost, epsilon, tol, max_iter)
}

fn scaling(cost: ArrayView2<'_, f64>, epsilon: f64, tol: f64, max_iter: usize) -> Result<SinkhornSolution> {
    let cost = cost.as_standard_layout();
    let mut state = State::new(cost.view(), epsilon);
    let mut iterations = 0;

    // Warm start from a coarse-to-fine ε schedule.
    let scale = cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let mut stages = Vec::new();
    let mut e = scale;
    while e > epsilon * WARM_START_RATIO {
        stages.push(e);
        e *= WARM_START_DECAY;
    }
    for eps in stages.into_iter() {
        state.set_epsilon(eps);
        for _ in 0..WARM_START_STEPS {
            let kv = state.kernel_times_v();
            state.row_update(kv);
            state.col_update();
            if state.needs_absorb() {
                state.absorb();
                state.rebuild_kernel();
            }
            iterations += 1;
        }
    }
    state.set_epsilon(epsilon);

    let mut best = (f64::INFINITY, state.f.clone(), state.g.clone());
    let mut final_iterations = 0;
    loop {
        // Columns are exact after the previous column update, so the row
        // error measured here is the full marginal violation.
        let kv = state.kernel_times_v();
        let err = state.row_error(&kv);
        if err < best.0 {
            best = (err, state.absorbed_f(), state.absorbed_g());
        }
        if err <= tol || final_iterations >= max_iter {
            break;
        }
        final_iterations += 1;
        state.row_update(kv);
        state.col_update();
        if state.needs_absorb() {
            state.absorb();
            state.rebuild_kernel();
        }
    }

    let (_, f, g) = best;
    Ok(finish(cost.view(), epsilon, f, g, iterations + final_iterations, tol))
}

/// Entropic OT of the uniform measure on a point set onto itself, for a
/// symmetric `cost` (e.g. `C[i][j] = c(xᵢ, xⱼ)`).
///
/// Uses the averaged log-domain fixed point `f ← ½(f + Tε(f))` with
/// `g = f`, which on self-transport problems needs tens of iterations where
/// alternating scaling needs thousands.
pub fn sinkhorn_symmetric(cost: ArrayView2<'_, f64>, epsilon: f64, tol: f64, max_iter: usize) -> Result<SinkhornSolution> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(Error::NotSquare { rows: n, cols: m });
    }
    if n == 0 {
        return Err(Error::Empty("cost matrix"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix"));
    }
    if !is_symmetric(cost) {
        return Err(Error::Config("symmetric solver needs a symmetric cost matrix".into()));
    }
    let cost = cost.as_standard_layout();
    let log_a = -(n as f64).ln();
    let a = 1.0 / n as f64;
    let mut f = Array1::<f64>::zeros(n);
    let mut next = Array1::<f64>::zeros(n);
    let mut best = (f64::INFINITY, f.clone());
    let mut iterations = 0;
    loop {
        for (i, row) in cost.rows().into_iter().enumerate() {
            let lse = log_sum_exp(row.iter().zip(f.iter()).map(|(c, fj)| (fj - c) / epsilon));
            next[i] = epsilon * (log_a - lse);
        }
        // row i of exp((fᵢ + fⱼ − C)/ε) sums to a·exp((fᵢ − nextᵢ)/ε)
        let err = f.iter().zip(&next).map(|(fi, ni)| a * ((fi - ni) / epsilon).exp_m1().abs()).fold(0.0, f64::max);
        if err < best.0 {
            best = (err, f.clone());
        }
        if err <= tol || iterations >= max_iter {
            break;
        }
        iterations += 1;
        f.iter_mut().zip(&next).for_each(|(fi, ni)| *fi = 0.5 * (*fi + ni));
    }
    let (_, f) = best;
    Ok(finish(cost.view(), epsilon, f.clone(), f, iterations, tol))
}

fn is_symmetric(cost: ArrayView2<'_, f64>) -> bool {
    let scale = cost.iter().fold(0.0f64, |a, c| a.max(c.abs())).max(1.0);
    cost.indexed_iter().all(|((i, j), c)| j <= i || (c - cost[[j, i]]).abs() <= 1e-12 * scale)
}

struct State<'a> {
    cost: ArrayView2<'a, f64>,
    eps: f64,
    log_a: f64,
    log_b: f64,
    f: Array1<f64>,
    g: Array1<f64>,
    kernel: Array2<f64>,
    u: Array1<f64>,
    v: Array1<f64>,
}

impl<'a> State<'a> {
    fn new(cost: ArrayView2<'a, f64>, eps: f64) -> Self {
        let (n, m) = cost.dim();
        Self {
            cost,
            eps,
            log_a: -(n as f64).ln(),
            log_b: -(m as f64).ln(),
            f: Array1::zeros(n),
            g: Array1::zeros(m),
            kernel: Array2::zeros((n, m)),
            u: Array1::ones(n),
            v: Array1::ones(m),
        }
    }

    /// Switches to a new `ε`, keeping the current potentials.
    fn set_epsilon(&mut self, eps: f64) {
        self.absorb();
        self.eps = eps;
        self.rebuild_kernel();
    }

    fn log_row_update(&mut self) {
        let eps = self.eps;
        for (i, row) in self.cost.rows().into_iter().enumerate() {
            let lse = log_sum_exp(row.iter().zip(self.g.iter()).map(|(c, g)| (g - c) / eps));
            self.f[i] = eps * (self.log_a - lse);
        }
    }

    fn log_col_update(&mut self) {
        let eps = self.eps;
        for (j, col) in self.cost.columns().into_iter().enumerate() {
            let lse = log_sum_exp(col.iter().zip(self.f.iter()).map(|(c, f)| (f - c) / eps));
            self.g[j] = eps * (self.log_b - lse);
        }
    }

    fn rebuild_kernel(&mut self) {
        let eps = self.eps;
        for ((i, j), k) in self.kernel.indexed_iter_mut() {
            *k = ((self.f[i] + self.g[j] - self.cost[[i, j]]) / eps).exp();
        }
        self.u.fill(1.0);
        self.v.fill(1.0);
    }

    fn kernel_times_v(&self) -> Array1<f64> {
        let k = self.kernel.as_slice().expect("kernel is contiguous");
        let v = self.v.as_slice().expect("contiguous");
        let m = v.len();
        Array1::from_iter(k.chunks_exact(m).map(|row| dot4(row, v)))
    }

    fn kernel_t_times_u(&self) -> Array1<f64> {
        let k = self.kernel.as_slice().expect("kernel is contiguous");
        let m = self.v.len();
        let mut out = vec![0.0; m];
        for (row, &u) in k.chunks_exact(m).zip(self.u.iter()) {
            out.iter_mut().zip(row).for_each(|(o, kv)| *o += u * kv);
        }
        Array1::from(out)
    }

    fn row_error(&self, kv: &Array1<f64>) -> f64 {
        let a = self.log_a.exp();
        self.u.iter().zip(kv).map(|(u, k)| (u * k - a).abs()).fold(0.0, f64::max)
    }

    fn row_update(&mut self, kv: Array1<f64>) {
        if kv.iter().any(|k| !(*k > UNDERFLOW) || !k.is_finite()) {
            self.absorb();
            self.log_row_update();
            self.rebuild_kernel();
            return;
        }
        let a = self.log_a.exp();
        self.u.iter_mut().zip(&kv).for_each(|(u, k)| *u = a / k);
    }

    fn col_update(&mut self) {
        let ktu = self.kernel_t_times_u();
        if ktu.iter().any(|k| !(*k > UNDERFLOW) || !k.is_finite()) {
            self.absorb();
            self.log_col_update();
            self.rebuild_kernel();
            return;
        }
        let b = self.log_b.exp();
        self.v.iter_mut().zip(&ktu).for_each(|(v, k)| *v = b / k);
    }

    fn needs_absorb(&self) -> bool {
        let out = |x: &f64| !(*x < ABSORB_THRESHOLD && *x > 1.0 / ABSORB_THRESHOLD);
        self.u.iter().any(out) || self.v.iter().any(out)
    }

    fn absorbed_f(&self) -> Array1<f64> {
        &self.f + &self.u.mapv(|u| self.eps * u.ln())
    }

    fn absorbed_g(&self) -> Array1<f64> {
        &self.g + &self.v.mapv(|v| self.eps * v.ln())
    }

    fn absorb(&mut self) {
        self.f = self.absorbed_f();
        self.g = self.absorbed_g();
        self.u.fill(1.0);
        self.v.fill(1.0);
    }
}

fn finish(
    cost: ArrayView2<'_, f64>,
    epsilon: f64,
    f: Array1<f64>,
    g: Array1<f64>,
    iterations: usize,
    tol: f64,
) -> SinkhornSolution {
    let (n, m) = cost.dim();
    let mut plan = Array2::zeros((n, m));
    let mut transport_cost = 0.0;
    let mut neg_entropy = 0.0;
    for i in 0..n {
        for j in 0..m {
            let c = cost[[i, j]];
            let log_p = (f[i] + g[j] - c) / epsilon;
            let p = log_p.exp();
            plan[[i, j]] = p;
            transport_cost += p * c;
            if p > 0.0 {
                neg_entropy += p * log_p;
            }
        }
    }
    let plan = TransportPlan::new(plan);
    let marginal_violation = plan.marginal_violation();
    SinkhornSolution {
        plan,
        f,
        g,
        epsilon,
        transport_cost,
        regularized_cost: transport_cost + epsilon * neg_entropy,
        iterations,
        marginal_violation,
        converged: marginal_violation <= tol,
    }
}

// four accumulators so the loop vectorizes without reassociation flags
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, ra) = a.split_at(a.len() - a.len() % 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn symmetric_solver_agrees_with_scaling() {
        let x: Vec<f64> = (0..12).map(|i| ((i * 37) % 17) as f64 / 5.0).collect();
        let c = Array2::from_shape_fn((12, 12), |(i, j)| 0.5 * (x[i] - x[j]).powi(2));
        for eps in [1.0, 0.05, 0.005] {
            let a = scaling(c.view(), eps, 1e-12, 200_000).unwrap();
            let b = sinkhorn(c.view(), eps, 1e-12, 10_000).unwrap();
            assert!(b.converged, "{eps}: {}", b.marginal_violation);
            assert!((a.regularized_cost - b.regularized_cost).abs() < 1e-9, "{eps}");
            assert!(b.plan.matrix.iter().zip(b.plan.matrix.t().iter()).all(|(p, q)| p == q));
        }
        assert!(sinkhorn_symmetric(array![[0.0, 1.0], [2.0, 0.0]].view(), 1.0, 1e-9, 10).is_err());
    }

    #[test]
    fn single_point() {
        let s = sinkhorn(array![[0.0]].view(), 1.0, 1e-12, 10).unwrap();
        assert!((s.plan.matrix[[0, 0]] - 1.0).abs() < 1e-15);
        assert_eq!(s.transport_cost, 0.0);
        assert!(s.converged);
    }

    #[test]
    fn two_points_small_epsilon() {
        let s = sinkhorn(array![[0.0, 1.0], [1.0, 0.0]].view(), 1e-3, 1e-9, 100).unwrap();
        assert!(s.converged);
        assert!(s.transport_cost < 1e-3);
        assert!((s.plan.matrix[[0, 0]] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(sinkhorn(array![[f64::NAN]].view(), 1.0, 1e-6, 10), Err(Error::NonFinite(_))));
        assert!(sinkhorn(array![[0.0]].view(), 0.0, 1e-6, 10).is_err());
    }

    #[test]
    fn non_convergence_is_reported() {
        let c = Array2::from_shape_fn((20, 20), |(i, j)| ((i * 7 + j * 13) % 11) as f64);
        let s = sinkhorn(c.view(), 1e-3, 1e-14, 1).unwrap();
        assert!(!s.converged);
        assert!(s.marginal_violation.is_finite());
    }

    #[test]
    fn hard_kernel_underflow() {
        // far-apart points: exp(-C/ε) underflows everywhere off the diagonal
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 10.0).collect();
        let c = Array2::from_shape_fn((8, 8), |(i, j)| 0.5 * (x[i] - x[(j + 3) % 8]).powi(2));
        let s = sinkhorn(c.view(), 1e-2, 1e-10, 1000).unwrap();
        assert!(s.converged, "violation {}", s.marginal_violation);
        assert!(s.transport_cost.is_finite());
    }

    #[test]
    fn rectangular() {
        let c = Array2::from_shape_fn((3, 5), |(i, j)| (i as f64 - j as f64 * 0.5).powi(2));
        let s = sinkhorn(c.view(), 0.1, 1e-10, 5000).unwrap();
        assert!(s.converged);
        for r in s.plan.matrix.rows() {
            assert!((r.sum() - 1.0 / 3.0).abs() < 1e-10);
        }
        for col in s.plan.matrix.columns() {
            assert!((col.sum() - 0.2).abs() < 1e-10);
        }
    }
}

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Exact GeLU, `z·Φ(z)`.
    Gelu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Gelu => z * std_normal_cdf(z),
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Gelu => std_normal_cdf(z) + z * std_normal_pdf(z),
            Activation::Identity => 1.0,
        }
    }

    #[inline]
    pub fn second_derivative(self, z: f64) -> f64 {
        match self {
            Activation::Gelu => std_normal_pdf(z) * (2.0 - z * z),
            Activation::Identity => 0.0,
        }
    }
}

#[inline]
fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z * FRAC_1_SQRT_2))
}

#[inline]
fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Fully connected network `F_θ` with an optional affine skip `x ↦ A·x + b`
/// from input to output.
///
/// Parameters live in one flat vector, laid out as
/// `[W₁, b₁, W₂, b₂, …, W_L, b_L, A, b]` with every matrix row-major
/// (`out × in`). Hidden layers apply the activation; the last layer is linear.
/// Gradients returned by this type use the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    activation: Activation,
    residual: bool,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass.
struct Trace {
    /// `post[0] = x`, `post[l] = σ(pre[l])` for hidden layers.
    post: Vec<Vec<f64>>,
    /// Pre-activations of every layer, index `l − 1` for layer `l`.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// A network with all parameters zero.
    pub fn zeros(layer_dims: &[usize], activation: Activation, residual: bool) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer dims {layer_dims:?}")));
        }
        if residual && layer_dims[0] != layer_dims[layer_dims.len() - 1] {
            return Err(Error::Config("residual layer needs input dim = output dim".into()));
        }
        let mut net = Self { layer_dims: layer_dims.to_vec(), activation, residual, params: Vec::new() };
        net.params = vec![0.0; net.layout_len()];
        Ok(net)
    }

    pub fn from_params(layer_dims: &[usize], activation: Activation, residual: bool, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, activation, residual)?;
        net.set_params(&params)?;
        Ok(net)
    }

    fn layout_len(&self) -> usize {
        let layers: usize = self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let d = self.input_dim();
        layers + if self.residual { d * d + d } else { 0 }
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn has_residual(&self) -> bool {
        self.residual
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 1]
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch { expected: self.params.len(), got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Offsets of `(W_l, b_l)` for layer index `l` (0-based).
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.layer_dims.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.layer_dims[l] * self.layer_dims[l + 1])
    }

    /// Offsets of `(A, b)` of the residual layer.
    fn residual_offsets(&self) -> Option<(usize, usize)> {
        self.residual.then(|| {
            let (_, b_off) = self.layer_offsets(self.num_layers() - 1);
            let a_off = b_off + self.output_dim();
            (a_off, a_off + self.input_dim() * self.input_dim())
        })
    }

    /// Weight matrix of layer `l` (0-based), row-major `out × in`.
    pub fn weight(&self, l: usize) -> &[f64] {
        let (w, b) = self.layer_offsets(l);
        &self.params[w..b]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        let (w, b) = self.layer_offsets(l);
        &mut self.params[w..b]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (_, b) = self.layer_offsets(l);
        &self.params[b..b + self.layer_dims[l + 1]]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (_, b) = self.layer_offsets(l);
        let n = self.layer_dims[l + 1];
        &mut self.params[b..b + n]
    }

    /// Residual `(A, b)`, `A` row-major `d × d`.
    pub fn residual(&self) -> Option<(&[f64], &[f64])> {
        let d = self.input_dim();
        self.residual_offsets()
            .map(|(a, b)| (&self.params[a..a + d * d], &self.params[b..b + d]))
    }

    /// Overwrites the residual layer with `(A, b)`.
    pub fn set_residual(&mut self, a: &[f64], b: &[f64]) -> Result<()> {
        let d = self.input_dim();
        let (ao, bo) = self.residual_offsets().ok_or_else(|| Error::Config("network has no residual layer".into()))?;
        if a.len() != d * d || b.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: b.len() });
        }
        self.params[ao..ao + d * d].copy_from_slice(a);
        self.params[bo..bo + d].copy_from_slice(b);
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let nl = self.num_layers();
        let mut post = Vec::with_capacity(nl);
        let mut pre = Vec::with_capacity(nl);
        post.push(x.to_vec());
        for l in 0..nl {
            let z = affine(self.weight(l), self.bias(l), &post[l]);
            if l + 1 < nl {
                post.push(z.iter().map(|&v| self.activation.value(v)).collect());
            }
            pre.push(z);
        }
        Trace { post, pre }
    }

    fn output_from_trace(&self, trace: &Trace, x: &[f64]) -> Vec<f64> {
        let mut out = trace.pre[self.num_layers() - 1].clone();
        if let Some((a, b)) = self.residual() {
            let ax = matvec(a, x);
            out.iter_mut().zip(ax.iter().zip(b)).for_each(|(o, (v, c))| *o += v + c);
        }
        out
    }

    /// `F_θ(x)` for a single point.
    pub fn forward_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let t = self.trace(x);
        Ok(self.output_from_trace(&t, x))
    }

    /// `F_θ` applied row-wise.
    pub fn forward(&self, xs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if xs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: xs.ncols() });
        }
        let mut out = Array2::zeros((xs.nrows(), self.output_dim()));
        for (i, row) in xs.rows().into_iter().enumerate() {
            let x = row.to_vec();
            let y = self.output_from_trace(&self.trace(&x), &x);
            for (o, v) in out.row_mut(i).iter_mut().zip(y) {
                *o = v;
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output"));
        }
        Ok(out)
    }

    /// Forward pass that also returns a closure-free backward handle: the
    /// output and the trace needed by [`Mlp::accumulate_param_grad`].
    pub(crate) fn forward_traced(&self, x: &[f64]) -> (Vec<f64>, TraceHandle) {
        let t = self.trace(x);
        let out = self.output_from_trace(&t, x);
        (out, TraceHandle(t))
    }

    /// Adds `∂/∂θ ⟨cot, F_θ(x)⟩` into `grad`.
    pub(crate) fn accumulate_param_grad(&self, x: &[f64], handle: &TraceHandle, cot: &[f64], grad: &mut [f64]) {
        let t = &handle.0;
        let nl = self.num_layers();
        let mut delta = cot.to_vec();
        for l in (0..nl).rev() {
            let (wo, bo) = self.layer_offsets(l);
            let input = &t.post[l];
            let n_in = input.len();
            for (r, d) in delta.iter().enumerate() {
                grad[bo + r] += d;
                let g = &mut grad[wo + r * n_in..wo + (r + 1) * n_in];
                g.iter_mut().zip(input).for_each(|(gv, h)| *gv += d * h);
            }
            if l > 0 {
                let e = matvec_t(self.weight(l), &delta, n_in);
                delta = e
                    .iter()
                    .zip(&t.pre[l - 1])
                    .map(|(e, z)| e * self.activation.derivative(*z))
                    .collect();
            }
        }
        if let Some((ao, bo)) = self.residual_offsets() {
            let d = self.input_dim();
            for (r, c) in cot.iter().enumerate() {
                grad[bo + r] += c;
                let g = &mut grad[ao + r * d..ao + (r + 1) * d];
                g.iter_mut().zip(x).for_each(|(gv, xv)| *gv += c * xv);
            }
        }
    }

    /// `∂/∂θ Σᵢ ⟨cotᵢ, F_θ(xᵢ)⟩`.
    pub fn param_gradient(&self, xs: ArrayView2<'_, f64>, cotangents: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if xs.nrows() != cotangents.nrows() {
            return Err(Error::SizeMismatch { left: xs.nrows(), right: cotangents.nrows() });
        }
        if cotangents.ncols() != self.output_dim() {
            return Err(Error::DimensionMismatch { expected: self.output_dim(), got: cotangents.ncols() });
        }
        let mut grad = vec![0.0; self.num_params()];
        for (x, c) in xs.rows().into_iter().zip(cotangents.rows()) {
            let x = x.to_vec();
            self.check_input(&x)?;
            let (_, h) = self.forward_traced(&x);
            self.accumulate_param_grad(&x, &h, &c.to_vec(), &mut grad);
        }
        Ok(grad)
    }

    /// Forward-mode Jacobian-vector product `Jac_x F · v`.
    pub fn jvp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.check_input(v)?;
        let t = self.trace(x);
        Ok(self.jvp_from_trace(&t, v).0)
    }

    /// Returns `Jv` and the tangents `(s_l, t_l)` of every layer.
    fn jvp_from_trace(&self, t: &Trace, v: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let nl = self.num_layers();
        let mut tangents = vec![v.to_vec()];
        let mut s_all = Vec::with_capacity(nl);
        for l in 0..nl {
            let s = matvec(self.weight(l), &tangents[l]);
            if l + 1 < nl {
                let tl = s.iter().zip(&t.pre[l]).map(|(s, z)| s * self.activation.derivative(*z)).collect();
                tangents.push(tl);
            }
            s_all.push(s);
        }
        let mut out = s_all[nl - 1].clone();
        if let Some((a, _)) = self.residual() {
            out.iter_mut().zip(matvec(a, v)).for_each(|(o, av)| *o += av);
        }
        (out, s_all, tangents)
    }

    /// Reverse-mode vector-Jacobian product `Jac_xᵀ F · u`.
    pub fn vjp(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if u.len() != self.output_dim() {
            return Err(Error::DimensionMismatch { expected: self.output_dim(), got: u.len() });
        }
        let t = self.trace(x);
        Ok(self.vjp_from_trace(&t, u).0)
    }

    /// Returns `Jᵀu`, the layer cotangents `δ_l` (index `l − 1` for layer `l`)
    /// and the pre-activation cotangents `e_l` of hidden layers.
    fn vjp_from_trace(&self, t: &Trace, u: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let nl = self.num_layers();
        let mut deltas = vec![Vec::new(); nl];
        let mut es = vec![Vec::new(); nl.saturating_sub(1)];
        deltas[nl - 1] = u.to_vec();
        for l in (1..nl).rev() {
            let e = matvec_t(self.weight(l), &deltas[l], self.layer_dims[l]);
            deltas[l - 1] = e.iter().zip(&t.pre[l - 1]).map(|(e, z)| e * self.activation.derivative(*z)).collect();
            es[l - 1] = e;
        }
        let mut out = matvec_t(self.weight(0), &deltas[0], self.input_dim());
        if let Some((a, _)) = self.residual() {
            let d = self.input_dim();
            out.iter_mut().zip(matvec_t(a, u, d)).for_each(|(o, v)| *o += v);
        }
        (out, deltas, es)
    }

    /// Full input Jacobian (`out × in`, row-major) assembled from basis JVPs.
    pub fn jacobian(&self, x: &[f64]) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let t = self.trace(x);
        let d = self.input_dim();
        let mut jac = Array2::zeros((self.output_dim(), d));
        for k in 0..d {
            let mut e = vec![0.0; d];
            e[k] = 1.0;
            for (r, v) in self.jvp_from_trace(&t, &e).0.into_iter().enumerate() {
                jac[[r, k]] = v;
            }
        }
        Ok(jac)
    }

    /// `‖Jac_x F·v − Jac_xᵀ F·v‖²` for a single point and probe.
    pub fn asymmetry(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        self.check_square()?;
        let r = self.asymmetry_residual(&self.trace(x), v);
        Ok(r.iter().map(|a| a * a).sum())
    }

    fn check_square(&self) -> Result<()> {
        if self.input_dim() != self.output_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: self.output_dim() });
        }
        Ok(())
    }

    fn asymmetry_residual(&self, t: &Trace, v: &[f64]) -> Vec<f64> {
        let jv = self.jvp_from_trace(t, v).0;
        let jtv = self.vjp_from_trace(t, v).0;
        jv.iter().zip(&jtv).map(|(a, b)| a - b).collect()
    }

    /// Value and parameter gradient of `Σᵢ Σⱼ ‖Jac_{xᵢ}F·vⱼ − Jac_{xᵢ}ᵀF·vⱼ‖²`.
    ///
    /// Reverse-mode through the composition of the forward pass, the JVP pass
    /// and the VJP pass; activation curvature enters through `σ''`.
    pub fn asymmetry_gradient(&self, xs: ArrayView2<'_, f64>, probes: ArrayView2<'_, f64>) -> Result<(f64, Vec<f64>)> {
        self.check_square()?;
        let d = self.input_dim();
        if xs.ncols() != d || probes.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: xs.ncols().max(probes.ncols()) });
        }
        let mut grad = vec![0.0; self.num_params()];
        let mut total = 0.0;
        for x in xs.rows() {
            let x = x.to_vec();
            let t = self.trace(&x);
            for v in probes.rows() {
                total += self.accumulate_asymmetry_grad(&t, &v.to_vec(), &mut grad);
            }
        }
        Ok((total, grad))
    }

    fn accumulate_asymmetry_grad(&self, t: &Trace, v: &[f64], grad: &mut [f64]) -> f64 {
        let nl = self.num_layers();
        let act = self.activation;
        let dims = &self.layer_dims;
        let (jv, s_all, tangents) = self.jvp_from_trace(t, v);
        let (jtv, deltas, es) = self.vjp_from_trace(t, v);
        let r: Vec<f64> = jv.iter().zip(&jtv).map(|(a, b)| a - b).collect();
        let value = r.iter().map(|a| a * a).sum();

        // adjoints of the two outputs
        let s_bar_top: Vec<f64> = r.iter().map(|a| 2.0 * a).collect();
        let q: Vec<f64> = r.iter().map(|a| -2.0 * a).collect();

        // pre-activation adjoints collected from the JVP and VJP passes
        let mut z_bar: Vec<Vec<f64>> = (0..nl.saturating_sub(1)).map(|l| vec![0.0; dims[l + 1]]).collect();

        if let Some((ao, _)) = self.residual_offsets() {
            let d = self.input_dim();
            for a in 0..d {
                for b in 0..d {
                    grad[ao + a * d + b] += s_bar_top[a] * v[b] + v[a] * q[b];
                }
            }
        }

        // VJP pass: jtv = W₁ᵀ δ₁, δ_l = σ'(z_l) ⊙ e_l, e_l = W_{l+1}ᵀ δ_{l+1}
        {
            let (w0, _) = self.layer_offsets(0);
            let n_in = dims[0];
            for (r_idx, dl) in deltas[0].iter().enumerate() {
                let g = &mut grad[w0 + r_idx * n_in..w0 + (r_idx + 1) * n_in];
                g.iter_mut().zip(&q).for_each(|(gv, qv)| *gv += dl * qv);
            }
            let mut delta_bar = matvec(self.weight(0), &q);
            for l in 0..nl.saturating_sub(1) {
                // hidden layer l+1 (1-based) has pre-activation t.pre[l]
                let z = &t.pre[l];
                let e = &es[l];
                let e_bar: Vec<f64> = delta_bar.iter().zip(z).map(|(db, z)| db * act.derivative(*z)).collect();
                for k in 0..z.len() {
                    z_bar[l][k] += act.second_derivative(z[k]) * e[k] * delta_bar[k];
                }
                let (wo, _) = self.layer_offsets(l + 1);
                let n_in = dims[l + 1];
                for (r_idx, dn) in deltas[l + 1].iter().enumerate() {
                    let g = &mut grad[wo + r_idx * n_in..wo + (r_idx + 1) * n_in];
                    g.iter_mut().zip(&e_bar).for_each(|(gv, eb)| *gv += dn * eb);
                }
                if l + 2 < nl {
                    delta_bar = matvec(self.weight(l + 1), &e_bar);
                }
            }
        }

        // JVP pass: s_l = W_l t_{l−1}, t_l = σ'(z_l) ⊙ s_l
        {
            let mut s_bar = s_bar_top;
            for l in (0..nl).rev() {
                let (wo, _) = self.layer_offsets(l);
                let input = &tangents[l];
                let n_in = input.len();
                for (r_idx, sb) in s_bar.iter().enumerate() {
                    let g = &mut grad[wo + r_idx * n_in..wo + (r_idx + 1) * n_in];
                    g.iter_mut().zip(input).for_each(|(gv, tv)| *gv += sb * tv);
                }
                if l > 0 {
                    let t_bar = matvec_t(self.weight(l), &s_bar, n_in);
                    let z = &t.pre[l - 1];
                    let s_prev = &s_all[l - 1];
                    for k in 0..n_in {
                        z_bar[l - 1][k] += act.second_derivative(z[k]) * s_prev[k] * t_bar[k];
                    }
                    s_bar = t_bar.iter().zip(z).map(|(tb, z)| tb * act.derivative(*z)).collect();
                }
            }
        }

        // forward pass: z_l = W_l h_{l−1} + b_l
        for l in (0..nl.saturating_sub(1)).rev() {
            let (wo, bo) = self.layer_offsets(l);
            let input = &t.post[l];
            let n_in = input.len();
            let zb = std::mem::take(&mut z_bar[l]);
            for (r_idx, zv) in zb.iter().enumerate() {
                grad[bo + r_idx] += zv;
                let g = &mut grad[wo + r_idx * n_in..wo + (r_idx + 1) * n_in];
                g.iter_mut().zip(input).for_each(|(gv, h)| *gv += zv * h);
            }
            if l > 0 {
                let h_bar = matvec_t(self.weight(l), &zb, n_in);
                let z = &t.pre[l - 1];
                for k in 0..n_in {
                    z_bar[l - 1][k] += act.derivative(z[k]) * h_bar[k];
                }
            }
        }
        value
    }
}

/// Opaque forward trace kept between a forward and a backward call.
pub(crate) struct TraceHandle(Trace);

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(r, bias)| bias + w[r * n_in..(r + 1) * n_in].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

fn matvec(w: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    w.chunks_exact(n_in).map(|row| row.iter().zip(x).map(|(a, c)| a * c).sum()).collect()
}

/// `Wᵀ·y` for row-major `W` with `n_in` columns.
fn matvec_t(w: &[f64], y: &[f64], n_in: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_in];
    for (row, yv) in w.chunks_exact(n_in).zip(y) {
        out.iter_mut().zip(row).for_each(|(o, a)| *o += a * yv);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(dims: &[usize], act: Activation, residual: bool, seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::zeros(dims, act, residual).unwrap();
        for p in net.params_mut() {
            *p = rng.random_range(-0.8..0.8);
        }
        net
    }

    fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8);
        num / den
    }

    #[test]
    fn layout() {
        let net = Mlp::zeros(&[2, 3, 2], Activation::Gelu, true).unwrap();
        assert_eq!(net.num_params(), 2 * 3 + 3 + 3 * 2 + 2 + 4 + 2);
        assert!(Mlp::zeros(&[2, 3, 1], Activation::Gelu, true).is_err());
        assert!(Mlp::zeros(&[2], Activation::Gelu, false).is_err());
    }

    #[test]
    fn zero_net_with_identity_residual_is_identity() {
        let mut net = Mlp::zeros(&[3, 5, 3], Activation::Gelu, true).unwrap();
        net.set_residual(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[0.0; 3]).unwrap();
        let x = array![[0.5, -1.0, 2.0], [3.0, 0.0, -0.25]];
        assert_eq!(net.forward(x.view()).unwrap(), x);
    }

    #[test]
    fn zero_net_with_affine_residual() {
        let mut net = Mlp::zeros(&[2, 4, 4, 2], Activation::Gelu, true).unwrap();
        net.set_residual(&[2.0, 1.0, -1.0, 0.5], &[0.25, -3.0]).unwrap();
        let y = net.forward_point(&[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![2.0 + 2.0 + 0.25, -1.0 + 1.0 - 3.0]);
        assert_eq!(net.jvp(&[0.3, 0.1], &[1.0, -1.0]).unwrap(), vec![1.0, -1.5]);
        assert_eq!(net.vjp(&[0.3, 0.1], &[1.0, -1.0]).unwrap(), vec![3.0, 0.5]);
    }

    #[test]
    fn deterministic_and_finite() {
        let net = random_net(&[3, 16, 16, 3], Activation::Gelu, true, 1);
        let x = array![[0.1, 0.2, 0.3], [-1.0, 2.0, 0.0]];
        let a = net.forward(x.view()).unwrap();
        let b = net.forward(x.view()).unwrap();
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a, b);
    }

    #[test]
    fn dimension_errors() {
        let mut net = random_net(&[3, 4, 2], Activation::Gelu, false, 1);
        assert!(net.forward_point(&[1.0]).is_err());
        assert!(net.vjp(&[1.0, 2.0, 3.0], &[1.0]).is_err());
        assert!(net.asymmetry(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(net.set_params(&[1.0]).is_err());
    }

    #[test]
    fn gelu_derivatives_match_finite_differences() {
        let h = 1e-5;
        let act = Activation::Gelu;
        let mut z = -6.0;
        while z <= 6.0 {
            let fd1 = (act.value(z + h) - act.value(z - h)) / (2.0 * h);
            let fd2 = (act.derivative(z + h) - act.derivative(z - h)) / (2.0 * h);
            assert!((fd1 - act.derivative(z)).abs() < 1e-6, "σ' at {z}");
            assert!((fd2 - act.second_derivative(z)).abs() < 1e-6, "σ'' at {z}");
            z += 0.05;
        }
        // exact form, not the tanh approximation
        assert!((act.value(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
    }

    #[test]
    fn jvp_vjp_duality_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (seed, dims) in [(1, vec![2, 8, 2]), (2, vec![4, 16, 8, 3]), (3, vec![5, 32, 32, 32, 5])] {
            let net = random_net(&dims, Activation::Gelu, dims[0] == dims[dims.len() - 1], seed);
            let x = random_vec(dims[0], &mut rng);
            let v = random_vec(dims[0], &mut rng);
            let u = random_vec(*dims.last().unwrap(), &mut rng);
            let jv = net.jvp(&x, &v).unwrap();
            let jtu = net.vjp(&x, &u).unwrap();
            assert!((dot(&u, &jv) - dot(&jtu, &v)).abs() < 1e-10);

            let h = 1e-5;
            let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b).collect();
            let fp = net.forward_point(&xp).unwrap();
            let fm = net.forward_point(&xm).unwrap();
            for (k, j) in jv.iter().enumerate() {
                assert!(((fp[k] - fm[k]) / (2.0 * h) - j).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn param_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = random_net(&[3, 8, 6, 3], Activation::Gelu, true, 9);
        let xs = ndarray::Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let cot = ndarray::Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let g = net.param_gradient(xs.view(), cot.view()).unwrap();
        let objective = |n: &Mlp| (&n.forward(xs.view()).unwrap() * &cot).sum();
        let h = 1e-6;
        let fd: Vec<f64> = (0..net.num_params())
            .map(|k| {
                let mut p = net.clone();
                p.params_mut()[k] += h;
                let mut m = net.clone();
                m.params_mut()[k] -= h;
                (objective(&p) - objective(&m)) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(&g, &fd) < 1e-5, "{}", rel_err(&g, &fd));
    }

    #[test]
    fn linear_param_gradient_closed_form() {
        // F(x) = W x + b: ∂/∂W Σ ⟨c_i, W x_i⟩ = Σ c_i x_iᵀ
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = random_net(&[3, 2], Activation::Identity, false, 4);
        let xs = ndarray::Array2::from_shape_fn((7, 3), |_| rng.random_range(-1.0..1.0));
        let cot = ndarray::Array2::from_shape_fn((7, 2), |_| rng.random_range(-1.0..1.0));
        let g = net.param_gradient(xs.view(), cot.view()).unwrap();
        let gw = cot.t().dot(&xs);
        let gb = cot.sum_axis(ndarray::Axis(0));
        let expected: Vec<f64> = gw.iter().chain(gb.iter()).copied().collect();
        assert!(rel_err(&g, &expected) < 1e-14);
        let zero = net.param_gradient(xs.view(), ndarray::Array2::zeros((7, 2)).view()).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    fn asymmetry_objective(net: &Mlp, xs: &Array2<f64>, vs: &Array2<f64>) -> f64 {
        let mut s = 0.0;
        for x in xs.rows() {
            for v in vs.rows() {
                s += net.asymmetry(&x.to_vec(), &v.to_vec()).unwrap();
            }
        }
        s
    }

    #[test]
    fn asymmetry_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (seed, dims) in [(1, vec![2, 16, 2]), (2, vec![3, 8, 8, 3]), (3, vec![2, 6, 5, 4, 2])] {
            let net = random_net(&dims, Activation::Gelu, true, seed);
            let d = dims[0];
            let xs = Array2::from_shape_fn((4, d), |_| rng.random_range(-1.0..1.0));
            let vs = Array2::from_shape_fn((2, d), |_| rng.random_range(-1.0..1.0));
            let (value, g) = net.asymmetry_gradient(xs.view(), vs.view()).unwrap();
            assert!((value - asymmetry_objective(&net, &xs, &vs)).abs() < 1e-12 * (1.0 + value));
            let h = 1e-6;
            let fd: Vec<f64> = (0..net.num_params())
                .map(|k| {
                    let mut p = net.clone();
                    p.params_mut()[k] += h;
                    let mut m = net.clone();
                    m.params_mut()[k] -= h;
                    (asymmetry_objective(&p, &xs, &vs) - asymmetry_objective(&m, &xs, &vs)) / (2.0 * h)
                })
                .collect();
            assert!(rel_err(&g, &fd) < 1e-5, "dims {dims:?}: {}", rel_err(&g, &fd));
        }
    }

    #[test]
    fn symmetric_linear_net_has_no_asymmetry() {
        let mut net = Mlp::zeros(&[2, 4, 2], Activation::Gelu, true).unwrap();
        net.set_residual(&[2.0, 0.5, 0.5, -1.0], &[3.0, 4.0]).unwrap();
        let xs = array![[0.1, 0.2], [1.0, -1.0]];
        let vs = array![[1.0, 0.0], [0.3, 0.7]];
        let (value, g) = net.asymmetry_gradient(xs.view(), vs.view()).unwrap();
        assert_eq!(value, 0.0);
        let (ao, bo) = net.residual_offsets().unwrap();
        assert!(g[bo..bo + 2].iter().all(|v| *v == 0.0));
        assert!(g[ao..bo].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn asymmetry_descent_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..10 {
            let net = random_net(&[2, 8, 2], Activation::Gelu, true, 100 + seed);
            let xs = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
            let vs = Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
            let (value, g) = net.asymmetry_gradient(xs.view(), vs.view()).unwrap();
            let mut stepped = net.clone();
            stepped.params_mut().iter_mut().zip(&g).for_each(|(p, gv)| *p -= 1e-3 * gv);
            assert!(asymmetry_objective(&stepped, &xs, &vs) < value);
        }
    }
}

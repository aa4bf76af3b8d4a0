//! Conservativity penalty: how far the Jacobian of a vector field is from
//! symmetric. A field with symmetric Jacobian on a star-shaped domain is a
//! gradient field, which is what structured maps ask of `F_θ`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::Mlp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Exact,
    Hutchinson,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservativityValue {
    pub value: f64,
    pub probes_used: usize,
    pub estimator: Estimator,
}

/// `(1/n) Σᵢ ‖Jac F(xᵢ) − Jac F(xᵢ)ᵀ‖²_F` with full Jacobians.
pub fn conservativity_exact(net: &Mlp, xs: ArrayView2<'_, f64>) -> Result<ConservativityValue> {
    check(net, xs)?;
    let mut total = 0.0;
    for x in xs.rows() {
        let j = net.jacobian(&x.to_vec())?;
        total += (&j - &j.t()).iter().map(|v| v * v).sum::<f64>();
    }
    Ok(ConservativityValue { value: total / xs.nrows() as f64, probes_used: net.input_dim(), estimator: Estimator::Exact })
}

/// `(1/(n·m)) Σᵢ Σⱼ ‖Jac F(xᵢ)·vⱼ − Jac F(xᵢ)ᵀ·vⱼ‖²`.
///
/// Unbiased for [`conservativity_exact`] when the probes are standard
/// Gaussian, since `E‖Mv‖² = ‖M‖²_F`. The sum is averaged over samples and
/// probes so the penalty weight does not depend on batch or probe counts.
pub fn conservativity_hutchinson(net: &Mlp, xs: ArrayView2<'_, f64>, probes: ArrayView2<'_, f64>) -> Result<ConservativityValue> {
    check(net, xs)?;
    if probes.nrows() == 0 {
        return Err(Error::Empty("probe vectors"));
    }
    if probes.ncols() != net.input_dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), got: probes.ncols() });
    }
    let mut total = 0.0;
    for x in xs.rows() {
        let x = x.to_vec();
        for v in probes.rows() {
            total += net.asymmetry(&x, &v.to_vec())?;
        }
    }
    let m = probes.nrows();
    Ok(ConservativityValue {
        value: total / (xs.nrows() * m) as f64,
        probes_used: m,
        estimator: Estimator::Hutchinson,
    })
}

/// Value and parameter gradient of [`conservativity_hutchinson`].
pub fn conservativity_gradient(net: &Mlp, xs: ArrayView2<'_, f64>, probes: ArrayView2<'_, f64>) -> Result<(ConservativityValue, Vec<f64>)> {
    check(net, xs)?;
    if probes.nrows() == 0 {
        return Err(Error::Empty("probe vectors"));
    }
    let (sum, mut grad) = net.asymmetry_gradient(xs, probes)?;
    let scale = 1.0 / (xs.nrows() * probes.nrows()) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    let value = ConservativityValue { value: sum * scale, probes_used: probes.nrows(), estimator: Estimator::Hutchinson };
    Ok((value, grad))
}

/// Number of Hutchinson probes for dimension `d`: `⌈0.2·d⌉`, at least one.
pub fn probe_count(d: usize) -> usize {
    // integer form of ceil(0.2 d), immune to 0.2 not being representable
    d.div_ceil(5).max(1)
}

/// `m` standard-Gaussian probe vectors in `R^d`, one per row.
pub fn gaussian_probes(m: usize, d: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((m, d), || rng.sample(StandardNormal))
}

fn check(net: &Mlp, xs: ArrayView2<'_, f64>) -> Result<()> {
    if net.input_dim() != net.output_dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), got: net.output_dim() });
    }
    if xs.ncols() != net.input_dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), got: xs.ncols() });
    }
    if xs.nrows() == 0 {
        return Err(Error::Empty("samples"));
    }
    Ok(())
}

//! Initial parameters for map networks: near-identity and Gaussian-OT
//! warm starts, plus the PSD square roots the latter needs.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, Parameterization};

/// Scale applied to Glorot-uniform bounds for "low variance" hidden weights.
pub const LOW_VARIANCE_SCALE: f64 = 1e-2;

const SYMMETRY_TOL: f64 = 1e-8;
const EIGEN_TOL: f64 = 1e-10;
const INV_SQRT_FLOOR: f64 = 1e-12;

/// Mean and covariance of a Gaussian approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
}

impl GaussianMoments {
    /// Symmetrizes the covariance and clips eigenvalues in `[−1e-10, 0)` to zero.
    pub fn new(mean: Array1<f64>, covariance: Array2<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.dim() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, got: covariance.nrows() });
        }
        let (vals, vecs) = sym_eigen(&covariance)?;
        if vals.iter().any(|v| *v < -EIGEN_TOL) {
            return Err(Error::NotPsd(format!("covariance eigenvalue {}", vals.iter().cloned().fold(f64::INFINITY, f64::min))));
        }
        let covariance = if vals.iter().any(|v| *v < 0.0) {
            reassemble(&vals.mapv(|v| v.max(0.0)), &vecs)
        } else {
            symmetrize(&covariance)
        };
        Ok(Self { mean, covariance })
    }

    /// Sample mean and unbiased (`n − 1`) covariance of the rows of `xs`.
    pub fn estimate(xs: ArrayView2<'_, f64>) -> Result<Self> {
        let n = xs.nrows();
        if n < 2 {
            return Err(Error::Empty("need at least two samples for a covariance"));
        }
        let mean = xs.mean_axis(Axis(0)).expect("non-empty");
        let centered = &xs - &mean;
        let cov = centered.t().dot(&centered) / (n - 1) as f64;
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn symmetrize(a: &Array2<f64>) -> Array2<f64> {
    (a + &a.t()) * 0.5
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

/// Eigen-decomposition of the symmetrized input.
fn sym_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::NotSquare { rows: r, cols: c });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix"));
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let asym = (a - &a.t()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotPsd(format!("asymmetry {asym:e}")));
    }
    let eig = SymmetricEigen::new(to_na(&symmetrize(a)));
    let vals = Array1::from_iter(eig.eigenvalues.iter().copied());
    let vecs = Array2::from_shape_fn((r, r), |(i, j)| eig.eigenvectors[(i, j)]);
    Ok((vals, vecs))
}

/// `V diag(λ) Vᵀ`, symmetrized.
fn reassemble(vals: &Array1<f64>, vecs: &Array2<f64>) -> Array2<f64> {
    let scaled = vecs * &vals.view().insert_axis(Axis(0));
    symmetrize(&scaled.dot(&vecs.t()))
}

fn psd_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let (vals, vecs) = sym_eigen(a)?;
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if let Some(v) = vals.iter().find(|v| **v < -EIGEN_TOL * scale) {
        return Err(Error::NotPsd(format!("eigenvalue {v:e}")));
    }
    Ok((vals.mapv(|v| v.max(0.0)), vecs))
}

/// Symmetric PSD square root `S` with `S·S = A`.
pub fn psd_sqrt(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (vals, vecs) = psd_eigen(a)?;
    Ok(reassemble(&vals.mapv(f64::sqrt), &vecs))
}

/// `A^{-1/2}`; eigenvalues below `1e-12` are lifted by `1e-12·I` first.
pub fn psd_inv_sqrt(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (mut vals, vecs) = psd_eigen(a)?;
    if vals.iter().any(|v| *v < INV_SQRT_FLOOR) {
        vals.mapv_inplace(|v| v + INV_SQRT_FLOOR);
    }
    Ok(reassemble(&vals.mapv(|v| 1.0 / v.sqrt()), &vecs))
}

/// Affine OT map `x ↦ A·x + b` between two Gaussians for the quadratic cost:
/// `A = Σ₀^{-1/2} (Σ₀^{1/2} Σ₁ Σ₀^{1/2})^{1/2} Σ₀^{-1/2}`, `b = m₁ − A·m₀`.
pub fn gaussian_ot_map(src: &GaussianMoments, tgt: &GaussianMoments) -> Result<(Array2<f64>, Array1<f64>)> {
    if src.dim() != tgt.dim() {
        return Err(Error::DimensionMismatch { expected: src.dim(), got: tgt.dim() });
    }
    let s_half = psd_sqrt(&src.covariance)?;
    let s_inv_half = psd_inv_sqrt(&src.covariance)?;
    if s_inv_half.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPsd("source covariance is singular".into()));
    }
    let middle = psd_sqrt(&symmetrize(&s_half.dot(&tgt.covariance).dot(&s_half)))?;
    let a = symmetrize(&s_inv_half.dot(&middle).dot(&s_inv_half));
    let b = &tgt.mean - &a.dot(&src.mean);
    Ok((a, b))
}

/// `x ↦ A·x + b`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AffineMap {
    pub matrix: Array2<f64>,
    pub shift: Array1<f64>,
}

impl AffineMap {
    pub fn new(matrix: Array2<f64>, shift: Array1<f64>) -> Result<Self> {
        let (r, c) = matrix.dim();
        if r != shift.len() {
            return Err(Error::DimensionMismatch { expected: r, got: shift.len() });
        }
        if r != c {
            return Err(Error::NotSquare { rows: r, cols: c });
        }
        Ok(Self { matrix, shift })
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    /// Applies the map row-wise.
    pub fn apply(&self, xs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if xs.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: xs.ncols() });
        }
        Ok(xs.dot(&self.matrix.t()) + &self.shift)
    }
}

/// Which warm start to use for a map network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// Glorot-uniform weights, no residual.
    Random,
    /// Low-variance weights so that `T_θ ≈ Id`.
    Identity,
    /// Low-variance weights and a residual matching the Gaussian OT map (quadratic cost only).
    Gaussian,
}

fn glorot_fill(net: &mut Mlp, scale: f64, rng: &mut ChaCha8Rng) {
    let dims = net.layer_dims().to_vec();
    for l in 0..net.num_layers() {
        let bound = scale * (6.0 / (dims[l] + dims[l + 1]) as f64).sqrt();
        for w in net.weight_mut(l) {
            *w = rng.random_range(-bound..bound);
        }
    }
}

/// Plain Glorot-uniform network with zero biases and no residual.
pub fn random_init(layer_dims: &[usize], seed: u64) -> Result<Mlp> {
    let mut net = Mlp::zeros(layer_dims, Activation::Gelu, false)?;
    glorot_fill(&mut net, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    Ok(net)
}

/// Network whose map is close to the identity under `parameterization`.
///
/// Direct and sphere maps get an identity residual `(I, 0)`; structured maps
/// need none since `F_θ ≈ 0` already gives `T_θ ≈ Id`.
pub fn identity_init(layer_dims: &[usize], seed: u64, parameterization: &Parameterization) -> Result<Mlp> {
    let residual = !matches!(parameterization, Parameterization::StructuredConjugate(_));
    let mut net = Mlp::zeros(layer_dims, Activation::Gelu, residual)?;
    glorot_fill(&mut net, LOW_VARIANCE_SCALE, &mut ChaCha8Rng::seed_from_u64(seed));
    if residual {
        let d = net.input_dim();
        let eye: Vec<f64> = (0..d * d).map(|k| if k % (d + 1) == 0 { 1.0 } else { 0.0 }).collect();
        net.set_residual(&eye, &vec![0.0; d])?;
    }
    Ok(net)
}

/// `F_θ` for `T_θ = Id − F_θ` whose residual is `(I − A, −b)`, so that
/// `T_θ ≈ x ↦ A·x + b` with `(A, b)` the Gaussian OT map between the moments
/// estimated from `xs` and `ys`.
pub fn gaussian_init(xs: ArrayView2<'_, f64>, ys: ArrayView2<'_, f64>, layer_dims: &[usize], seed: u64) -> Result<Mlp> {
    let src = GaussianMoments::estimate(xs)?;
    let tgt = GaussianMoments::estimate(ys)?;
    gaussian_init_from_moments(&src, &tgt, layer_dims, seed)
}

pub fn gaussian_init_from_moments(
    src: &GaussianMoments,
    tgt: &GaussianMoments,
    layer_dims: &[usize],
    seed: u64,
) -> Result<Mlp> {
    let (a, b) = gaussian_ot_map(src, tgt)?;
    let mut net = Mlp::zeros(layer_dims, Activation::Gelu, true)?;
    glorot_fill(&mut net, LOW_VARIANCE_SCALE, &mut ChaCha8Rng::seed_from_u64(seed));
    let d = net.input_dim();
    if d != src.dim() {
        return Err(Error::DimensionMismatch { expected: d, got: src.dim() });
    }
    let res_a: Vec<f64> = (0..d * d).map(|k| if k % (d + 1) == 0 { 1.0 } else { 0.0 } - a[[k / d, k % d]]).collect();
    let res_b: Vec<f64> = b.iter().map(|v| -v).collect();
    net.set_residual(&res_a, &res_b)?;
    Ok(net)
}

//! Ground costs `c(x, y)`.
//!
//! Every family exposes pointwise values, the gradient in the first argument
//! and pairwise cost matrices. The translation-invariant families
//! (`c(x, y) = h(x - y)` with `h` strictly convex) additionally expose the
//! gradient of the convex conjugate `h*`, which structured maps use to turn a
//! potential gradient into a displacement.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit-norm tolerance for inputs of the sphere costs.
pub const SPHERE_NORM_TOL: f64 = 1e-8;

/// Offset added to every coordinate of `x` when a cost gradient is singular
/// and the caller asked for the jittered variant (see [`CostSpec::grad_x_jittered`]).
pub const GRADIENT_JITTER: f64 = 1e-9;

/// A ground cost family.
///
/// `SqEuclidean` is `½‖x − y‖²`, the same values as `PowerNorm { p: 2 }`,
/// but kept separate so the quadratic case can skip `powf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CostSpec {
    SqEuclidean,
    /// `(1/p)‖x − y‖_p^p` with conjugate exponent `q`, `1/p + 1/q = 1`.
    PowerNorm { p: f64, q: f64 },
    EuclideanDistance,
    /// `arccos(xᵀy)` on the unit sphere.
    SphereGeodesic,
    /// `−log(xᵀy)` on the unit sphere.
    SphereNegLog,
}

impl CostSpec {
    /// `(1/p)‖x − y‖_p^p`; requires `p > 1`.
    pub fn power_norm(p: f64) -> Result<Self> {
        if !(p.is_finite() && p > 1.0) {
            return Err(Error::Config(format!("power-norm cost needs p > 1, got {p}")));
        }
        Ok(CostSpec::PowerNorm { p, q: p / (p - 1.0) })
    }

    pub fn name(&self) -> &'static str {
        match self {
            CostSpec::SqEuclidean => "sqeuclidean",
            CostSpec::PowerNorm { .. } => "powernorm",
            CostSpec::EuclideanDistance => "euclidean",
            CostSpec::SphereGeodesic => "sphere-geodesic",
            CostSpec::SphereNegLog => "sphere-neglog",
        }
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self, CostSpec::SphereGeodesic | CostSpec::SphereNegLog)
    }

    /// Whether the cost has the form `h(x − y)` with a known `∇h*`.
    pub fn is_structured(&self) -> bool {
        matches!(self, CostSpec::SqEuclidean | CostSpec::PowerNorm { .. })
    }

    /// Cost value `c(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dims(x, y)?;
        match *self {
            CostSpec::SqEuclidean => Ok(0.5 * sq_dist(x, y)),
            CostSpec::PowerNorm { p, .. } => {
                Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs().powf(p)).sum::<f64>() / p)
            }
            CostSpec::EuclideanDistance => Ok(sq_dist(x, y).sqrt()),
            CostSpec::SphereGeodesic => {
                let s = self.sphere_dot(x, y)?;
                Ok(s.acos())
            }
            CostSpec::SphereNegLog => {
                let s = self.sphere_dot(x, y)?;
                if s <= 0.0 {
                    return Err(Error::Domain {
                        cost: self.name(),
                        reason: format!("xᵀy = {s} must be positive"),
                    });
                }
                Ok(-s.ln())
            }
        }
    }

    /// Pairwise matrix `C[i][j] = c(X[i], Y[j])`.
    pub fn cost_matrix(&self, xs: ArrayView2<'_, f64>, ys: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if xs.ncols() != ys.ncols() {
            return Err(Error::DimensionMismatch { expected: xs.ncols(), got: ys.ncols() });
        }
        let xs = xs.as_standard_layout();
        let ys = ys.as_standard_layout();
        let (n, m) = (xs.nrows(), ys.nrows());
        let mut c = Array2::zeros((n, m));
        for (i, x) in xs.rows().into_iter().enumerate() {
            let x = x.to_slice().expect("standard layout");
            for (j, y) in ys.rows().into_iter().enumerate() {
                let y = y.to_slice().expect("standard layout");
                c[[i, j]] = match self {
                    // hot path for every fitting loss
                    CostSpec::SqEuclidean => 0.5 * sq_dist(x, y),
                    _ => self.eval(x, y)?,
                };
            }
        }
        Ok(c)
    }

    /// Gradient of `c` in its first argument, `∇₁c(x, y)`.
    ///
    /// Sphere gradients are ambient (not projected onto the tangent space).
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_dims(x, y)?;
        let singular = || Error::Singularity { cost: self.name() };
        match *self {
            CostSpec::SqEuclidean => Ok(x.iter().zip(y).map(|(a, b)| a - b).collect()),
            CostSpec::PowerNorm { p, .. } => x
                .iter()
                .zip(y)
                .map(|(a, b)| {
                    let d = a - b;
                    if d == 0.0 && p < 2.0 {
                        Err(singular())
                    } else {
                        Ok(d.signum() * d.abs().powf(p - 1.0))
                    }
                })
                .collect(),
            CostSpec::EuclideanDistance => {
                let r = sq_dist(x, y).sqrt();
                if r == 0.0 {
                    return Err(singular());
                }
                Ok(x.iter().zip(y).map(|(a, b)| (a - b) / r).collect())
            }
            CostSpec::SphereGeodesic => {
                let s = self.sphere_dot(x, y)?;
                let denom = (1.0 - s * s).sqrt();
                if denom == 0.0 {
                    return Err(singular());
                }
                Ok(y.iter().map(|b| -b / denom).collect())
            }
            CostSpec::SphereNegLog => {
                let s = self.sphere_dot(x, y)?;
                if s <= 0.0 {
                    return Err(Error::Domain {
                        cost: self.name(),
                        reason: format!("xᵀy = {s} must be positive"),
                    });
                }
                if s >= 1.0 {
                    return Err(singular());
                }
                Ok(y.iter().map(|b| -b / s).collect())
            }
        }
    }

    /// Gradient in the second argument, `∇₂c(x, y)`. All families are symmetric.
    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.grad_x(y, x)
    }

    /// [`grad_x`](Self::grad_x), retried once at `x + GRADIENT_JITTER·1`
    /// (renormalized for sphere costs) when the gradient is singular.
    pub fn grad_x_jittered(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        match self.grad_x(x, y) {
            Err(Error::Singularity { .. }) => {
                let mut xj: Vec<f64> = x.iter().map(|v| v + GRADIENT_JITTER).collect();
                if self.is_sphere() {
                    // push off the antipode/pole along a coordinate that differs from x
                    let k = x.iter().position(|v| v.abs() < 0.5).unwrap_or(0);
                    xj[k] += 1e-6;
                    let n = xj.iter().map(|v| v * v).sum::<f64>().sqrt();
                    xj.iter_mut().for_each(|v| *v /= n);
                }
                self.grad_x(&xj, y)
            }
            other => other,
        }
    }

    /// `∇h*(z)` for structured costs `c(x, y) = h(x − y)`.
    pub fn conjugate_gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        match *self {
            CostSpec::SqEuclidean => Ok(z.to_vec()),
            CostSpec::PowerNorm { q, .. } => {
                Ok(z.iter().map(|v| v.signum() * v.abs().powf(q - 1.0)).collect())
            }
            _ => Err(Error::StructuredCostUnavailable(self.name())),
        }
    }

    /// Diagonal of the Hessian of `h*` at `z` (the Jacobian of `∇h*`, which is
    /// diagonal for every structured family).
    pub fn conjugate_hessian_diag(&self, z: &[f64]) -> Result<Vec<f64>> {
        match *self {
            CostSpec::SqEuclidean => Ok(vec![1.0; z.len()]),
            CostSpec::PowerNorm { q, .. } => z
                .iter()
                .map(|v| {
                    if *v == 0.0 && q < 2.0 {
                        Err(Error::Singularity { cost: self.name() })
                    } else {
                        Ok((q - 1.0) * v.abs().powf(q - 2.0))
                    }
                })
                .collect(),
            _ => Err(Error::StructuredCostUnavailable(self.name())),
        }
    }

    /// `∇h(z)` for structured costs; the inverse of [`conjugate_gradient`](Self::conjugate_gradient).
    pub fn h_gradient(&self, z: &[f64]) -> Result<Vec<f64>> {
        match *self {
            CostSpec::SqEuclidean => Ok(z.to_vec()),
            CostSpec::PowerNorm { p, .. } => {
                Ok(z.iter().map(|v| v.signum() * v.abs().powf(p - 1.0)).collect())
            }
            _ => Err(Error::StructuredCostUnavailable(self.name())),
        }
    }

    fn sphere_dot(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        for v in [x, y] {
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > SPHERE_NORM_TOL {
                return Err(Error::Domain {
                    cost: self.name(),
                    reason: format!("input norm {norm} is not 1"),
                });
            }
        }
        Ok(dot(x, y).clamp(-1.0, 1.0))
    }
}

impl fmt::Display for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostSpec::PowerNorm { p, .. } => write!(f, "powernorm:p={p}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for CostSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sqeuclidean" => Ok(CostSpec::SqEuclidean),
            "euclidean" => Ok(CostSpec::EuclideanDistance),
            "sphere-geodesic" => Ok(CostSpec::SphereGeodesic),
            "sphere-neglog" => Ok(CostSpec::SphereNegLog),
            other => {
                let p = other
                    .strip_prefix("powernorm:p=")
                    .ok_or_else(|| Error::Parse(format!("unknown cost '{other}'")))?;
                let p: f64 = p.parse().map_err(|_| Error::Parse(format!("bad exponent in '{other}'")))?;
                CostSpec::power_norm(p)
            }
        }
    }
}

impl TryFrom<String> for CostSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CostSpec> for String {
    fn from(c: CostSpec) -> String {
        c.to_string()
    }
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    Ok(())
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

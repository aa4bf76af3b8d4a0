use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::costs::CostSpec;
use crate::error::{Error, Result};

/// How the network output `F_θ(x)` becomes the map value `T_θ(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "cost")]
pub enum Parameterization {
    /// `T_θ = F_θ`
    Direct,
    /// `T_θ(x) = x − ∇h*(F_θ(x))` for a cost `h(x − y)`.
    StructuredConjugate(CostSpec),
    /// `T_θ = F_θ / ‖F_θ‖₂`
    SphereNormalized,
}

impl Parameterization {
    pub fn tag(&self) -> &'static str {
        match self {
            Parameterization::Direct => "direct",
            Parameterization::StructuredConjugate(_) => "structured",
            Parameterization::SphereNormalized => "sphere",
        }
    }
}

/// A transport map `T_θ` backed by an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapModel {
    pub parameterization: Parameterization,
    pub net: Mlp,
}

impl MapModel {
    pub fn new(parameterization: Parameterization, net: Mlp) -> Result<Self> {
        match parameterization {
            Parameterization::StructuredConjugate(cost) if !cost.is_structured() => {
                return Err(Error::StructuredCostUnavailable(cost.name()));
            }
            Parameterization::StructuredConjugate(_) | Parameterization::SphereNormalized
                if net.input_dim() != net.output_dim() =>
            {
                return Err(Error::DimensionMismatch { expected: net.input_dim(), got: net.output_dim() });
            }
            _ => {}
        }
        Ok(Self { parameterization, net })
    }

    pub fn dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    fn finish_point(&self, x: &[f64], f: Vec<f64>) -> Result<Vec<f64>> {
        match self.parameterization {
            Parameterization::Direct => Ok(f),
            Parameterization::StructuredConjugate(cost) => {
                let disp = cost.conjugate_gradient(&f)?;
                Ok(x.iter().zip(disp).map(|(a, b)| a - b).collect())
            }
            Parameterization::SphereNormalized => {
                let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::Domain { cost: "sphere map", reason: "network output has zero norm".into() });
                }
                Ok(f.into_iter().map(|v| v / norm).collect())
            }
        }
    }

    pub fn apply_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        let f = self.net.forward_point(x)?;
        self.finish_point(x, f)
    }

    /// `T_θ` applied row-wise.
    pub fn apply(&self, xs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let fs = self.net.forward(xs)?;
        let mut out = Array2::zeros(fs.dim());
        for (i, (x, f)) in xs.rows().into_iter().zip(fs.rows()).enumerate() {
            let t = self.finish_point(&x.to_vec(), f.to_vec())?;
            out.row_mut(i).iter_mut().zip(t).for_each(|(o, v)| *o = v);
        }
        Ok(out)
    }

    /// `∂/∂θ Σᵢ ⟨cotᵢ, T_θ(xᵢ)⟩`, chaining through the parameterization.
    pub fn param_gradient(&self, xs: ArrayView2<'_, f64>, cotangents: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if xs.nrows() != cotangents.nrows() {
            return Err(Error::SizeMismatch { left: xs.nrows(), right: cotangents.nrows() });
        }
        if xs.ncols() != self.net.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.net.input_dim(), got: xs.ncols() });
        }
        if cotangents.ncols() != self.net.output_dim() {
            return Err(Error::DimensionMismatch { expected: self.net.output_dim(), got: cotangents.ncols() });
        }
        let mut grad = vec![0.0; self.num_params()];
        for (x, c) in xs.rows().into_iter().zip(cotangents.rows()) {
            let x = x.to_vec();
            let c = c.to_vec();
            let (f, handle) = self.net.forward_traced(&x);
            let f_cot = match self.parameterization {
                Parameterization::Direct => c,
                Parameterization::StructuredConjugate(cost) => {
                    let hess = cost.conjugate_hessian_diag(&f)?;
                    c.iter().zip(hess).map(|(a, h)| -a * h).collect()
                }
                Parameterization::SphereNormalized => {
                    let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        return Err(Error::Domain { cost: "sphere map", reason: "network output has zero norm".into() });
                    }
                    let t: Vec<f64> = f.iter().map(|v| v / norm).collect();
                    let tc: f64 = t.iter().zip(&c).map(|(a, b)| a * b).sum();
                    c.iter().zip(&t).map(|(cv, tv)| (cv - tv * tc) / norm).collect()
                }
            };
            self.net.accumulate_param_grad(&x, &handle, &f_cot, &mut grad);
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(dims: &[usize], residual: bool, seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::zeros(dims, Activation::Gelu, residual).unwrap();
        for p in net.params_mut() {
            *p = rng.random_range(-0.7..0.7);
        }
        net
    }

    #[test]
    fn structured_with_zero_field_is_identity() {
        let net = Mlp::zeros(&[2, 4, 2], Activation::Gelu, false).unwrap();
        let model = MapModel::new(Parameterization::StructuredConjugate(CostSpec::SqEuclidean), net).unwrap();
        let x = array![[1.0, 2.0], [-0.5, 0.25]];
        assert_eq!(model.apply(x.view()).unwrap(), x);
    }

    #[test]
    fn structured_constant_field_translates() {
        let mut net = Mlp::zeros(&[2, 4, 2], Activation::Gelu, false).unwrap();
        net.bias_mut(1).copy_from_slice(&[-1.5, 2.0]);
        let model = MapModel::new(Parameterization::StructuredConjugate(CostSpec::SqEuclidean), net).unwrap();
        assert_eq!(model.apply_point(&[1.0, 1.0]).unwrap(), vec![2.5, -1.0]);
    }

    #[test]
    fn structured_sqeuclidean_is_x_minus_f() {
        let net = random_net(&[3, 8, 3], true, 2);
        let model = MapModel::new(Parameterization::StructuredConjugate(CostSpec::SqEuclidean), net.clone()).unwrap();
        let x = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        assert_eq!(model.apply(x.view()).unwrap(), &x - &net.forward(x.view()).unwrap());
    }

    #[test]
    fn sphere_outputs_are_unit() {
        let model = MapModel::new(Parameterization::SphereNormalized, random_net(&[3, 8, 3], true, 5)).unwrap();
        let x = array![[0.0, 0.6, 0.8], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        for r in model.apply(x.view()).unwrap().rows() {
            assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_invalid_combinations() {
        let net = random_net(&[2, 4, 2], false, 1);
        assert!(MapModel::new(Parameterization::StructuredConjugate(CostSpec::EuclideanDistance), net).is_err());
        let net = random_net(&[2, 4, 3], false, 1);
        assert!(MapModel::new(Parameterization::SphereNormalized, net).is_err());
    }

    #[test]
    fn zero_norm_rejected() {
        let net = Mlp::zeros(&[2, 3, 2], Activation::Gelu, false).unwrap();
        let model = MapModel::new(Parameterization::SphereNormalized, net).unwrap();
        assert!(model.apply_point(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn param_gradient_finite_differences_all_parameterizations() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let cot = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        for p in [
            Parameterization::Direct,
            Parameterization::StructuredConjugate(CostSpec::SqEuclidean),
            Parameterization::StructuredConjugate(CostSpec::power_norm(1.5).unwrap()),
            Parameterization::StructuredConjugate(CostSpec::power_norm(3.0).unwrap()),
            Parameterization::SphereNormalized,
        ] {
            let model = MapModel::new(p, random_net(&[3, 8, 3], true, 31)).unwrap();
            let g = model.param_gradient(xs.view(), cot.view()).unwrap();
            let obj = |m: &MapModel| (&m.apply(xs.view()).unwrap() * &cot).sum();
            let h = 1e-6;
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..model.num_params() {
                let mut a = model.clone();
                a.net.params_mut()[k] += h;
                let mut b = model.clone();
                b.net.params_mut()[k] -= h;
                let fd = (obj(&a) - obj(&b)) / (2.0 * h);
                num += (fd - g[k]).powi(2);
                den += fd * fd;
            }
            assert!((num / den).sqrt() < 1e-5, "{p:?}: {}", (num / den).sqrt());
        }
    }
}

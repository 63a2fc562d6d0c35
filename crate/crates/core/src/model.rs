//! Parametric regression models `η(x, θ)` with analytic parameter gradients.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type EvalFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// A user supplied model given as an evaluation/gradient pair.
#[derive(Clone)]
pub struct CustomModel {
    dim: usize,
    linear: bool,
    eval: Arc<EvalFn>,
    grad: Arc<GradFn>,
}

impl CustomModel {
    /// `linear` declares that the model is linear in its parameters, which lets
    /// the criterion use an exact least squares fit instead of Gauss-Newton.
    pub fn new<E, G>(dim: usize, linear: bool, eval: E, grad: G) -> Self
    where
        E: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            dim,
            linear,
            eval: Arc::new(eval),
            grad: Arc::new(grad),
        }
    }
}

impl fmt::Debug for CustomModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomModel")
            .field("dim", &self.dim)
            .field("linear", &self.linear)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum Family {
    /// `θ_0 + θ_1 x + … + θ_k x^k`
    Polynomial(usize),
    /// `θ_1 x / (x + θ_2)`
    MichaelisMenten,
    /// `θ_1 (1 − exp(−θ_2 x))`
    ExponentialSaturation,
    /// `θ_0 + θ_1 x / (θ_2 + x)`
    Emax3,
    /// `θ_0 + θ_1 / (1 + exp((θ_2 − x) / θ_3))`
    Logistic4,
    Custom(CustomModel),
}

#[derive(Debug, Clone)]
pub struct RegressionModel {
    family: Family,
    label: String,
}

const SINGULAR_EPS: f64 = 1e-12;

impl RegressionModel {
    pub fn new(family: Family, label: impl Into<String>) -> Self {
        Self {
            family,
            label: label.into(),
        }
    }

    pub fn polynomial(degree: usize, label: impl Into<String>) -> Self {
        Self::new(Family::Polynomial(degree), label)
    }

    pub fn michaelis_menten(label: impl Into<String>) -> Self {
        Self::new(Family::MichaelisMenten, label)
    }

    pub fn exponential_saturation(label: impl Into<String>) -> Self {
        Self::new(Family::ExponentialSaturation, label)
    }

    pub fn emax(label: impl Into<String>) -> Self {
        Self::new(Family::Emax3, label)
    }

    pub fn logistic(label: impl Into<String>) -> Self {
        Self::new(Family::Logistic4, label)
    }

    pub fn custom(model: CustomModel, label: impl Into<String>) -> Self {
        Self::new(Family::Custom(model), label)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn param_dim(&self) -> usize {
        match &self.family {
            Family::Polynomial(k) => k + 1,
            Family::MichaelisMenten | Family::ExponentialSaturation => 2,
            Family::Emax3 => 3,
            Family::Logistic4 => 4,
            Family::Custom(c) => c.dim,
        }
    }

    /// True when `η` is linear in `θ`.
    pub fn is_linear(&self) -> bool {
        match &self.family {
            Family::Polynomial(_) => true,
            Family::Custom(c) => c.linear,
            _ => false,
        }
    }

    fn check_len(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn domain(&self, x: f64) -> Error {
        Error::Domain {
            model: self.label.clone(),
            x,
        }
    }

    fn rational_denominator(&self, x: f64, shift: f64) -> Result<f64> {
        let den = x + shift;
        if den.abs() < SINGULAR_EPS * (1.0 + x.abs()) {
            return Err(self.domain(x));
        }
        Ok(den)
    }

    pub fn eval(&self, x: f64, theta: &[f64]) -> Result<f64> {
        self.check_len(theta)?;
        let value = match &self.family {
            Family::Polynomial(_) => theta.iter().rev().fold(0.0, |acc, &c| acc * x + c),
            Family::MichaelisMenten => {
                let den = self.rational_denominator(x, theta[1])?;
                theta[0] * x / den
            }
            Family::ExponentialSaturation => theta[0] * (-(-theta[1] * x).exp_m1()),
            Family::Emax3 => {
                let den = self.rational_denominator(x, theta[2])?;
                theta[0] + theta[1] * x / den
            }
            Family::Logistic4 => {
                if theta[3].abs() < SINGULAR_EPS {
                    return Err(self.domain(x));
                }
                theta[0] + theta[1] / (1.0 + ((theta[2] - x) / theta[3]).exp())
            }
            Family::Custom(c) => (c.eval)(x, theta),
        };
        if !value.is_finite() {
            return Err(self.domain(x));
        }
        Ok(value)
    }

    /// Writes `∂η/∂θ` into `out`, which must have length `param_dim`.
    pub fn grad_into(&self, x: f64, theta: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(theta)?;
        if out.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim(),
                got: out.len(),
            });
        }
        match &self.family {
            Family::Polynomial(_) => {
                let mut p = 1.0;
                for o in out.iter_mut() {
                    *o = p;
                    p *= x;
                }
            }
            Family::MichaelisMenten => {
                let den = self.rational_denominator(x, theta[1])?;
                out[0] = x / den;
                out[1] = -theta[0] * x / (den * den);
            }
            Family::ExponentialSaturation => {
                let e = (-theta[1] * x).exp();
                out[0] = 1.0 - e;
                out[1] = theta[0] * x * e;
            }
            Family::Emax3 => {
                let den = self.rational_denominator(x, theta[2])?;
                out[0] = 1.0;
                out[1] = x / den;
                out[2] = -theta[1] * x / (den * den);
            }
            Family::Logistic4 => {
                if theta[3].abs() < SINGULAR_EPS {
                    return Err(self.domain(x));
                }
                let z = (theta[2] - x) / theta[3];
                // s = 1/(1+e^z), ds/dz = -s(1-s)
                let s = 1.0 / (1.0 + z.exp());
                let ds = -s * (1.0 - s);
                out[0] = 1.0;
                out[1] = s;
                out[2] = theta[1] * ds / theta[3];
                out[3] = -theta[1] * ds * z / theta[3];
            }
            Family::Custom(c) => (c.grad)(x, theta, out),
        }
        if out.iter().any(|g| !g.is_finite()) {
            return Err(self.domain(x));
        }
        Ok(())
    }

    pub fn grad(&self, x: f64, theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.param_dim()];
        self.grad_into(x, theta, &mut out)?;
        Ok(out)
    }
}

/// Largest relative deviation between the analytic gradient and a central
/// finite difference with the given step. Each component is compared with
/// denominator `max(1, |analytic|)`. Returns `+∞` if the model cannot be
/// evaluated at the perturbed parameters.
pub fn check_gradient(model: &RegressionModel, x: f64, theta: &[f64], step: f64) -> f64 {
    let Ok(analytic) = model.grad(x, theta) else {
        return f64::INFINITY;
    };
    let mut probe = theta.to_vec();
    let mut worst: f64 = 0.0;
    for (m, &g) in analytic.iter().enumerate() {
        let h = step * (1.0 + theta[m].abs());
        probe[m] = theta[m] + h;
        let up = model.eval(x, &probe);
        probe[m] = theta[m] - h;
        let down = model.eval(x, &probe);
        probe[m] = theta[m];
        let (Ok(up), Ok(down)) = (up, down) else {
            return f64::INFINITY;
        };
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - g).abs() / g.abs().max(1.0));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eval_examples() {
        let lin = RegressionModel::polynomial(1, "lin");
        assert_eq!(lin.eval(0.0, &[60.0, 0.56]).unwrap(), 60.0);
        let emax = RegressionModel::emax("emax");
        assert_relative_eq!(
            emax.eval(25.0, &[60.0, 294.0, 25.0]).unwrap(),
            207.0,
            epsilon = 1e-12
        );
        let mm = RegressionModel::michaelis_menten("mm");
        assert_relative_eq!(mm.eval(1.0, &[2.0, 1.0]).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn grad_examples() {
        let quad = RegressionModel::polynomial(2, "quad");
        assert_eq!(
            quad.grad(2.0, &[3.0, -1.0, 0.5]).unwrap(),
            vec![1.0, 2.0, 4.0]
        );
        let mm = RegressionModel::michaelis_menten("mm");
        let g = mm.grad(1.0, &[2.0, 1.0]).unwrap();
        assert_relative_eq!(g[0], 0.5);
        assert_relative_eq!(g[1], -0.5);
        let ex = RegressionModel::exponential_saturation("exp");
        assert_eq!(ex.grad(0.0, &[2.5, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn singular_parameters_are_rejected() {
        let mm = RegressionModel::michaelis_menten("mm");
        assert!(matches!(
            mm.eval(1.0, &[2.0, -1.0]),
            Err(Error::Domain { .. })
        ));
        let emax = RegressionModel::emax("emax");
        assert!(emax.grad(3.0, &[0.0, 1.0, -3.0]).is_err());
        let logi = RegressionModel::logistic("logistic");
        assert!(logi.eval(1.0, &[0.0, 1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn wrong_length_is_an_error() {
        let quad = RegressionModel::polynomial(2, "quad");
        assert_eq!(
            quad.eval(1.0, &[1.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 1
            })
        );
    }

    #[test]
    fn gradient_check_examples() {
        let cubic = RegressionModel::polynomial(3, "cubic");
        assert!(check_gradient(&cubic, 0.7, &[1.0; 4], 1e-5) < 1e-8);
        let logi = RegressionModel::logistic("logistic");
        assert!(check_gradient(&logi, 100.0, &[49.62, 290.51, 150.0, 45.51], 1e-4) < 1e-5);
        let emax = RegressionModel::emax("emax");
        assert!(check_gradient(&emax, 50.0, &[60.0, 294.0, 25.0], 1e-4) < 1e-5);
    }

    #[test]
    fn custom_model_round_trip() {
        let sine = CustomModel::new(
            1,
            false,
            |x, t| (t[0] * x).sin(),
            |x, t, g| g[0] = x * (t[0] * x).cos(),
        );
        let m = RegressionModel::custom(sine, "sine");
        assert_eq!(m.param_dim(), 1);
        assert!(!m.is_linear());
        assert!(check_gradient(&m, 0.3, &[2.0], 1e-5) < 1e-8);
    }
}

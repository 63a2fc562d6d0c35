//! The discrimination problem: which models are compared against which, with
//! what weights, and how the stacked parameter vector `θ` is laid out.

use crate::error::{Error, Result};
use crate::model::RegressionModel;

/// One pairwise comparison `(i, j)`: the model `i` with its fixed parameter
/// is approximated by model `j`, whose parameters occupy
/// `theta[offset..offset + dim]` in the stacked vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub fixed: usize,
    pub fitted: usize,
    pub weight: f64,
    pub offset: usize,
    pub dim: usize,
}

impl Comparison {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.dim
    }
}

/// Compact design interval `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::Spec(format!(
                "design interval [{min}, {max}] must be finite with min < max"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn len(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min, self.max)
    }

    /// `count` equispaced points including both endpoints.
    pub fn linspace(&self, count: usize) -> Vec<f64> {
        match count {
            0 => Vec::new(),
            1 => vec![0.5 * (self.min + self.max)],
            _ => (0..count)
                .map(|k| {
                    if k == count - 1 {
                        self.max
                    } else {
                        self.min + self.len() * k as f64 / (count - 1) as f64
                    }
                })
                .collect(),
        }
    }
}

/// Requested comparison before canonicalization (model indices are 0-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonSpec {
    pub fixed: usize,
    pub fitted: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct DiscriminationProblem {
    models: Vec<RegressionModel>,
    fixed_params: Vec<Option<Vec<f64>>>,
    comparisons: Vec<Comparison>,
    interval: Interval,
    n_params: usize,
}

impl DiscriminationProblem {
    /// Validates the inputs, sorts comparisons by `(fixed, fitted)`, normalizes
    /// the weights to sum one and lays out the stacked parameter vector.
    pub fn new(
        models: Vec<RegressionModel>,
        fixed_params: Vec<Option<Vec<f64>>>,
        comparisons: &[ComparisonSpec],
        interval: Interval,
    ) -> Result<Self> {
        let k = models.len();
        if k < 2 {
            return Err(Error::Spec(format!("need at least 2 models, got {k}")));
        }
        if fixed_params.len() != k {
            return Err(Error::Spec(format!(
                "fixed parameter list has {} entries for {k} models",
                fixed_params.len()
            )));
        }
        if comparisons.is_empty() {
            return Err(Error::Spec("need at least one comparison".into()));
        }
        let mut specs = comparisons.to_vec();
        for (idx, c) in specs.iter().enumerate() {
            if c.fixed >= k || c.fitted >= k {
                return Err(Error::Spec(format!(
                    "comparison {idx} references a model outside 0..{k}"
                )));
            }
            if c.fixed == c.fitted {
                return Err(Error::Spec(format!(
                    "comparison {idx} compares model {} with itself",
                    c.fixed
                )));
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(Error::Spec(format!(
                    "comparison {idx} has non-positive weight {}",
                    c.weight
                )));
            }
            match &fixed_params[c.fixed] {
                None => {
                    return Err(Error::Spec(format!(
                        "model `{}` is a fixed side but has no fixed parameter",
                        models[c.fixed].label()
                    )))
                }
                Some(rho) if rho.len() != models[c.fixed].param_dim() => {
                    return Err(Error::Spec(format!(
                        "fixed parameter of model `{}` has length {}, expected {}",
                        models[c.fixed].label(),
                        rho.len(),
                        models[c.fixed].param_dim()
                    )))
                }
                Some(_) => {}
            }
        }
        specs.sort_by_key(|c| (c.fixed, c.fitted));
        if let Some(w) = specs
            .windows(2)
            .find(|w| (w[0].fixed, w[0].fitted) == (w[1].fixed, w[1].fitted))
        {
            return Err(Error::Spec(format!(
                "comparison ({}, {}) listed twice",
                w[0].fixed, w[0].fitted
            )));
        }
        let total: f64 = specs.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            log::info!("normalizing comparison weights (sum was {total})");
        }
        let mut offset = 0;
        let comparisons = specs
            .iter()
            .map(|c| {
                let dim = models[c.fitted].param_dim();
                let cmp = Comparison {
                    fixed: c.fixed,
                    fitted: c.fitted,
                    weight: c.weight / total,
                    offset,
                    dim,
                };
                offset += dim;
                cmp
            })
            .collect();
        Ok(Self {
            models,
            fixed_params,
            comparisons,
            interval,
            n_params: offset,
        })
    }

    pub fn models(&self) -> &[RegressionModel] {
        &self.models
    }

    pub fn comparisons(&self) -> &[Comparison] {
        &self.comparisons
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn fixed_param(&self, model: usize) -> Option<&[f64]> {
        self.fixed_params.get(model)?.as_deref()
    }

    /// Number of comparisons `d`.
    pub fn d(&self) -> usize {
        self.comparisons.len()
    }

    /// Total parameter count `n`.
    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// `λ_i`: number of comparisons in which model `i` is the fixed side.
    pub fn lambda(&self, model: usize) -> usize {
        self.comparisons.iter().filter(|c| c.fixed == model).count()
    }

    pub fn max_fitted_dim(&self) -> usize {
        self.comparisons.iter().map(|c| c.dim).max().unwrap_or(0)
    }

    pub fn fitted_model(&self, c: usize) -> &RegressionModel {
        &self.models[self.comparisons[c].fitted]
    }

    pub fn all_linear(&self) -> bool {
        (0..self.d()).all(|c| self.fitted_model(c).is_linear())
    }

    /// Short `fixed/fitted` label of comparison `c`.
    pub fn comparison_label(&self, c: usize) -> String {
        let cmp = &self.comparisons[c];
        format!(
            "{}/{}",
            self.models[cmp.fixed].label(),
            self.models[cmp.fitted].label()
        )
    }

    /// Value of the fixed side of comparison `c` at `x`.
    pub fn fixed_value(&self, c: usize, x: f64) -> Result<f64> {
        let cmp = &self.comparisons[c];
        let rho = self.fixed_params[cmp.fixed]
            .as_deref()
            .expect("fixed parameter checked on construction");
        self.models[cmp.fixed].eval(x, rho)
    }

    /// Value of the fitted side of comparison `c` at `x`, reading its slice of
    /// the stacked `theta`.
    pub fn fitted_value(&self, c: usize, x: f64, theta: &[f64]) -> Result<f64> {
        let cmp = &self.comparisons[c];
        self.models[cmp.fitted].eval(x, &theta[cmp.range()])
    }

    pub fn eta_fixed(&self, x: f64) -> Result<Vec<f64>> {
        (0..self.d()).map(|c| self.fixed_value(c, x)).collect()
    }

    pub fn eta_theta(&self, x: f64, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        (0..self.d())
            .map(|c| self.fitted_value(c, x, theta))
            .collect()
    }

    /// `ε(x) = η(x) − η(x, θ)` componentwise.
    pub fn residual(&self, x: f64, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        (0..self.d())
            .map(|c| Ok(self.fixed_value(c, x)? - self.fitted_value(c, x, theta)?))
            .collect()
    }

    /// `|ε(x)|²` in the weighted norm.
    pub fn residual_norm_sq(&self, x: f64, theta: &[f64]) -> Result<f64> {
        Ok(self.weighted_norm_sq(&self.residual(x, theta)?))
    }

    /// `Σ p_c r_c²`.
    pub fn weighted_norm_sq(&self, r: &[f64]) -> f64 {
        self.comparisons
            .iter()
            .zip(r)
            .map(|(c, v)| c.weight * v * v)
            .sum()
    }

    /// `Σ p_c r_c s_c`.
    pub fn weighted_inner(&self, r: &[f64], s: &[f64]) -> f64 {
        self.comparisons
            .iter()
            .zip(r.iter().zip(s))
            .map(|(c, (a, b))| c.weight * a * b)
            .sum()
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params {
            return Err(Error::DimensionMismatch {
                expected: self.n_params,
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// Default starting parameters: zeros for linear fits, the fitted model's
    /// own fixed parameter (when it has one) for nonlinear fits.
    pub fn default_theta(&self) -> Result<Vec<f64>> {
        let mut theta = vec![0.0; self.n_params];
        for (c, cmp) in self.comparisons.iter().enumerate() {
            if self.models[cmp.fitted].is_linear() {
                continue;
            }
            match self.fixed_param(cmp.fitted) {
                Some(rho) => theta[cmp.range()].copy_from_slice(rho),
                None => return Err(Error::InitRequired { comparison: c }),
            }
        }
        Ok(theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use approx::assert_relative_eq;

    #[test]
    fn nested_polynomials_layout() {
        let p = examples::nested_polynomials(1.0, 1.0);
        assert_eq!(p.d(), 2);
        assert_eq!(p.n_params(), 5);
        assert_eq!(p.comparisons()[0].range(), 0..2);
        assert_eq!(p.comparisons()[1].range(), 2..5);
    }

    #[test]
    fn all_pairs_have_lambda_two() {
        let models = vec![
            RegressionModel::polynomial(1, "a"),
            RegressionModel::polynomial(2, "b"),
            RegressionModel::polynomial(3, "c"),
        ];
        let rho = vec![Some(vec![1.0, 1.0]), Some(vec![1.0; 3]), Some(vec![1.0; 4])];
        let mut specs = Vec::new();
        for i in (0..3).rev() {
            for j in 0..3 {
                if i != j {
                    specs.push(ComparisonSpec {
                        fixed: i,
                        fitted: j,
                        weight: 1.0,
                    });
                }
            }
        }
        let p = DiscriminationProblem::new(models, rho, &specs, Interval::new(-1.0, 1.0).unwrap())
            .unwrap();
        assert_eq!(p.d(), 6);
        assert_eq!((p.lambda(0), p.lambda(1), p.lambda(2)), (2, 2, 2));
        let order: Vec<_> = p
            .comparisons()
            .iter()
            .map(|c| (c.fixed, c.fitted))
            .collect();
        assert_eq!(order, vec![(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]);
        let total: f64 = p.comparisons().iter().map(|c| c.weight).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn dose_response_dimensions() {
        let p = examples::dose_response();
        assert_eq!(p.d(), 6);
        assert_eq!(p.n_params(), 15);
    }

    #[test]
    fn eta_examples() {
        let p = examples::nested_polynomials(1.0, 1.0);
        assert_eq!(p.eta_fixed(1.0).unwrap(), vec![3.0, 4.0]);
        assert_eq!(p.eta_theta(0.3, &[0.0; 5]).unwrap(), vec![0.0, 0.0]);
        let theta = [1.5, 1.0, 1.0, 2.0, 1.0];
        assert_eq!(p.eta_theta(0.0, &theta).unwrap(), vec![1.5, 1.0]);

        let sat = examples::saturation_models();
        assert_eq!(sat.eta_fixed(0.0).unwrap(), vec![0.0, 0.0]);
        // (1,2) fits the exponential model, (2,1) the Michaelis-Menten model.
        let theta = [1.721, 0.865, 3.008, 1.809];
        let v = sat.eta_theta(10.0, &theta).unwrap();
        assert_relative_eq!(v[0], 1.721 * (1.0 - (-8.65f64).exp()), epsilon = 1e-12);
        assert_relative_eq!(v[1], 3.008 * 10.0 / 11.809, epsilon = 1e-12);

        let dr = examples::dose_response();
        let f0 = dr.eta_fixed(0.0).unwrap();
        let logistic0 = 49.62 + 290.51 / (1.0 + (150.0f64 / 45.51).exp());
        let expected = [60.0, 60.0, 60.0, logistic0, logistic0, logistic0];
        for (a, b) in f0.iter().zip(expected) {
            assert_relative_eq!(*a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn weighted_norm_examples() {
        let p = examples::nested_polynomials(1.0, 1.0);
        assert_eq!(p.weighted_norm_sq(&[3.0, 4.0]), 12.5);
        assert_eq!(p.weighted_norm_sq(&[0.0, 0.0]), 0.0);
        let single = DiscriminationProblem::new(
            vec![
                RegressionModel::polynomial(0, "c"),
                RegressionModel::polynomial(1, "l"),
            ],
            vec![None, Some(vec![0.0, 1.0])],
            &[ComparisonSpec {
                fixed: 1,
                fitted: 0,
                weight: 3.0,
            }],
            Interval::new(0.0, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(single.weighted_norm_sq(&[2.0]), 4.0);
    }

    #[test]
    fn residual_matches_direct_model_calls() {
        let p = examples::dose_response();
        let theta: Vec<f64> = (0..p.n_params()).map(|k| 0.1 * k as f64 + 1.0).collect();
        for &x in &[0.0, 17.0, 250.0, 500.0] {
            let r = p.residual(x, &theta).unwrap();
            for (c, cmp) in p.comparisons().iter().enumerate() {
                let rho = p.fixed_param(cmp.fixed).unwrap();
                let direct = p.models()[cmp.fixed].eval(x, rho).unwrap()
                    - p.models()[cmp.fitted].eval(x, &theta[cmp.range()]).unwrap();
                assert_eq!(r[c], direct);
            }
        }
    }

    #[test]
    fn construction_errors() {
        let models = || {
            vec![
                RegressionModel::polynomial(1, "a"),
                RegressionModel::polynomial(2, "b"),
            ]
        };
        let iv = Interval::new(0.0, 1.0).unwrap();
        let rho = || vec![None, Some(vec![1.0, 1.0, 1.0])];
        let ok = ComparisonSpec {
            fixed: 1,
            fitted: 0,
            weight: 1.0,
        };
        assert!(DiscriminationProblem::new(models(), rho(), &[ok], iv).is_ok());
        let missing_rho = ComparisonSpec {
            fixed: 0,
            fitted: 1,
            weight: 1.0,
        };
        assert!(DiscriminationProblem::new(models(), rho(), &[missing_rho], iv).is_err());
        let zero = ComparisonSpec { weight: 0.0, ..ok };
        assert!(DiscriminationProblem::new(models(), rho(), &[zero], iv).is_err());
        assert!(DiscriminationProblem::new(models(), rho(), &[ok, ok], iv).is_err());
        assert!(Interval::new(1.0, 1.0).is_err());
    }
}

//! Built-in problems used throughout the tests and shipped as CLI problem files.

use crate::model::RegressionModel;
use crate::problem::{ComparisonSpec, DiscriminationProblem, Interval};

/// Linear vs quadratic and quadratic vs cubic on `[-1, 1]` with equal weights.
/// The fixed models are `1 + x + rho2 x²` and `1 + x + x² + rho3 x³`.
pub fn nested_polynomials(rho2: f64, rho3: f64) -> DiscriminationProblem {
    let models = vec![
        RegressionModel::polynomial(1, "linear"),
        RegressionModel::polynomial(2, "quadratic"),
        RegressionModel::polynomial(3, "cubic"),
    ];
    let fixed = vec![
        None,
        Some(vec![1.0, 1.0, rho2]),
        Some(vec![1.0, 1.0, 1.0, rho3]),
    ];
    let comparisons = [
        ComparisonSpec {
            fixed: 1,
            fitted: 0,
            weight: 0.5,
        },
        ComparisonSpec {
            fixed: 2,
            fitted: 1,
            weight: 0.5,
        },
    ];
    DiscriminationProblem::new(
        models,
        fixed,
        &comparisons,
        Interval {
            min: -1.0,
            max: 1.0,
        },
    )
    .expect("valid built-in problem")
}

/// Reference set used as the starting point for [`nested_polynomials`].
pub const NESTED_POLYNOMIALS_REFERENCE: [f64; 7] = [-1.0, -0.5, -0.1, 0.0, 0.1, 0.5, 1.0];

/// Michaelis-Menten `(2, 1)` against exponential saturation `(2.5, 0.5)` on
/// `[0, 10]`, both directions with weight 1/2.
pub fn saturation_models() -> DiscriminationProblem {
    let models = vec![
        RegressionModel::michaelis_menten("michaelis_menten"),
        RegressionModel::exponential_saturation("exponential"),
    ];
    let fixed = vec![Some(vec![2.0, 1.0]), Some(vec![2.5, 0.5])];
    let comparisons = [
        ComparisonSpec {
            fixed: 0,
            fitted: 1,
            weight: 0.5,
        },
        ComparisonSpec {
            fixed: 1,
            fitted: 0,
            weight: 0.5,
        },
    ];
    DiscriminationProblem::new(
        models,
        fixed,
        &comparisons,
        Interval {
            min: 0.0,
            max: 10.0,
        },
    )
    .expect("valid built-in problem")
}

/// Starting parameters for [`saturation_models`]: the exponential fit starts
/// at `(2, 0.5)`, the Michaelis-Menten fit at `(1, 1)`.
pub const SATURATION_MODELS_THETA: [f64; 4] = [2.0, 0.5, 1.0, 1.0];
pub const SATURATION_MODELS_REFERENCE: [f64; 6] = [1.0, 2.0, 4.0, 6.0, 8.0, 10.0];

/// The four dose-response candidates (linear, quadratic, Emax, logistic) on
/// `[0, 500]`, each model compared against every lower-indexed one with
/// weight 1/6.
pub fn dose_response() -> DiscriminationProblem {
    let models = vec![
        RegressionModel::polynomial(1, "linear"),
        RegressionModel::polynomial(2, "quadratic"),
        RegressionModel::emax("emax"),
        RegressionModel::logistic("logistic"),
    ];
    let fixed = vec![
        Some(vec![60.0, 0.56]),
        Some(vec![60.0, 7.0 * 600.0 / 2250.0, -7.0 / 2250.0]),
        Some(vec![60.0, 294.0, 25.0]),
        Some(vec![49.62, 290.51, 150.0, 45.51]),
    ];
    let mut comparisons = Vec::new();
    for i in 0..4 {
        for j in 0..i {
            comparisons.push(ComparisonSpec {
                fixed: i,
                fitted: j,
                weight: 1.0 / 6.0,
            });
        }
    }
    DiscriminationProblem::new(
        models,
        fixed,
        &comparisons,
        Interval {
            min: 0.0,
            max: 500.0,
        },
    )
    .expect("valid built-in problem")
}

/// `{0, 30, 60, …, 450, 500}`.
pub fn dose_response_reference() -> Vec<f64> {
    let mut s: Vec<f64> = (0..=15).map(|k| 30.0 * k as f64).collect();
    s.push(500.0);
    s
}

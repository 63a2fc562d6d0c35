//! The T_p criterion: inner least squares fits `θ*_(i,j)`, the weighted sum
//! `T(ξ)`, the equivalence-theorem function `ψ(x, ξ)` and efficiency bounds.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::approx::local_maxima;
use crate::design::Design;
use crate::error::{Error, Result};
use crate::linalg::lstsq;
use crate::problem::DiscriminationProblem;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence threshold on the scale-free stationarity measure.
    pub grad_tol: f64,
    /// A run that stops above this stationarity measure has stalled.
    pub stall_tol: f64,
    pub restarts: usize,
    /// Relative size of the multistart perturbations.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            grad_tol: 1e-10,
            stall_tol: 1e-6,
            restarts: 8,
            perturbation: 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub theta: Vec<f64>,
    /// `Δ_(i,j)(θ, ξ)`
    pub delta: f64,
    /// Stationarity measure at `theta`, see [`stationarity`].
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionValue {
    pub t: f64,
    pub theta_star: Vec<f64>,
    pub per_comparison: Vec<f64>,
}

/// Weighted residuals `√w_s (η_i(x_s, ρ_i) − η_j(x_s, θ))` and Jacobian rows
/// `√w_s ∇_θ η_j(x_s, θ)` for comparison `c`.
fn weighted_system(
    problem: &DiscriminationProblem,
    design: &Design,
    c: usize,
    theta_c: &[f64],
    with_jacobian: bool,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let model = problem.fitted_model(c);
    let dim = model.param_dim();
    let nu = design.len();
    let mut r = DVector::zeros(nu);
    let mut jac = DMatrix::zeros(if with_jacobian { nu } else { 0 }, dim);
    let mut g = vec![0.0; dim];
    for (s, (x, w)) in design.iter().enumerate() {
        let sw = w.sqrt();
        r[s] = sw * (problem.fixed_value(c, x)? - model.eval(x, theta_c)?);
        if with_jacobian {
            model.grad_into(x, theta_c, &mut g)?;
            for m in 0..dim {
                jac[(s, m)] = sw * g[m];
            }
        }
    }
    Ok((r, jac))
}

/// Largest cosine between the weighted residual and a Jacobian column. It is
/// zero exactly at a stationary point of `Δ` and does not depend on the
/// scaling of either the data or the parameters.
fn cosine_measure(r: &DVector<f64>, jac: &DMatrix<f64>) -> f64 {
    let rn = r.norm();
    if rn == 0.0 {
        return 0.0;
    }
    (0..jac.ncols())
        .map(|m| {
            let col = jac.column(m);
            let cn = col.norm();
            if cn == 0.0 {
                0.0
            } else {
                col.dot(r).abs() / (cn * rn)
            }
        })
        .fold(0.0, f64::max)
}

/// Stationarity of `Δ_(i,j)` at `theta_c`: the largest cosine between the
/// weighted residual vector and a weighted gradient column.
pub fn stationarity(
    problem: &DiscriminationProblem,
    design: &Design,
    c: usize,
    theta_c: &[f64],
) -> Result<f64> {
    let (r, jac) = weighted_system(problem, design, c, theta_c, true)?;
    Ok(cosine_measure(&r, &jac))
}

/// Minimizes `Δ_(i,j)(θ, ξ)` for comparison `c` starting from `init`.
///
/// Models that are linear in `θ` are solved in one least squares step
/// (minimum norm correction when the design has too few points). Nonlinear
/// models use damped Gauss-Newton with step halving.
pub fn best_fit(
    problem: &DiscriminationProblem,
    design: &Design,
    c: usize,
    init: &[f64],
    opts: &FitOptions,
) -> Result<Fit> {
    let model = problem.fitted_model(c);
    if init.len() != model.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.param_dim(),
            got: init.len(),
        });
    }
    let mut theta = init.to_vec();
    if model.is_linear() {
        let (r, jac) = weighted_system(problem, design, c, &theta, true)?;
        let (step, _) = lstsq(&jac, &r);
        theta.iter_mut().zip(step.iter()).for_each(|(t, s)| *t += s);
        let (r, jac) = weighted_system(problem, design, c, &theta, true)?;
        return Ok(Fit {
            theta,
            delta: r.norm_squared(),
            grad_norm: cosine_measure(&r, &jac),
        });
    }

    let (mut r, mut jac) = weighted_system(problem, design, c, &theta, true)?;
    let mut delta = r.norm_squared();
    let scale = design
        .iter()
        .map(|(x, w)| problem.fixed_value(c, x).map(|f| w * f * f))
        .sum::<Result<f64>>()?
        .max(1.0);
    for _ in 0..opts.max_iter {
        let measure = cosine_measure(&r, &jac);
        if measure < opts.grad_tol || delta <= 1e-28 * scale {
            break;
        }
        let (step, _) = lstsq(&jac, &r);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(a, s)| a + t * s)
                .collect();
            if let Ok((r_new, _)) = weighted_system(problem, design, c, &trial, false) {
                let d_new = r_new.norm_squared();
                if d_new < delta {
                    theta = trial;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        let (r_new, jac_new) = weighted_system(problem, design, c, &theta, true)?;
        let d_new = r_new.norm_squared();
        let improvement = delta - d_new;
        r = r_new;
        jac = jac_new;
        delta = d_new;
        if improvement <= 1e-15 * delta.max(1e-300) && t < 1e-6 {
            break;
        }
    }
    let grad_norm = cosine_measure(&r, &jac);
    if grad_norm > opts.stall_tol && delta > 1e-28 * scale {
        return Err(Error::NoDecrease {
            comparison: c,
            grad_norm,
        });
    }
    Ok(Fit {
        theta,
        delta,
        grad_norm,
    })
}

/// [`best_fit`] with a deterministic multistart fallback when the first run
/// stalls.
pub fn best_fit_multistart(
    problem: &DiscriminationProblem,
    design: &Design,
    c: usize,
    init: &[f64],
    opts: &FitOptions,
) -> Result<Fit> {
    let first = best_fit(problem, design, c, init, opts);
    if !matches!(first, Err(Error::NoDecrease { .. })) {
        return first;
    }
    log::debug!(
        "comparison {c}: Gauss-Newton stalled, trying {} restarts",
        opts.restarts
    );
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (c as u64).wrapping_mul(0x9E37_79B9));
    let mut best: Option<Fit> = None;
    for _ in 0..opts.restarts {
        let start: Vec<f64> = init
            .iter()
            .map(|&v| {
                let u: f64 = rng.random_range(-1.0..1.0);
                v + opts.perturbation * u * v.abs().max(1e-3)
            })
            .collect();
        if let Ok(fit) = best_fit(problem, design, c, &start, opts) {
            if best.as_ref().is_none_or(|b| fit.delta < b.delta) {
                best = Some(fit);
            }
        }
    }
    best.ok_or(first.unwrap_err())
}

/// `T(ξ) = Σ p_(i,j) min_θ Δ_(i,j)(θ, ξ)` with the minimizers stacked in
/// canonical comparison order.
pub fn evaluate_t(
    problem: &DiscriminationProblem,
    design: &Design,
    init: &[f64],
    opts: &FitOptions,
) -> Result<CriterionValue> {
    problem.check_theta(init)?;
    let mut theta_star = vec![0.0; problem.n_params()];
    let mut per_comparison = Vec::with_capacity(problem.d());
    let mut t = 0.0;
    for (c, cmp) in problem.comparisons().iter().enumerate() {
        let fit = best_fit_multistart(problem, design, c, &init[cmp.range()], opts)?;
        theta_star[cmp.range()].copy_from_slice(&fit.theta);
        t += cmp.weight * fit.delta;
        per_comparison.push(fit.delta);
    }
    Ok(CriterionValue {
        t,
        theta_star,
        per_comparison,
    })
}

/// `ψ(x, ξ) = Σ p_(i,j) [η_i(x, ρ_i) − η_j(x, θ*_(i,j))]²`.
pub fn psi(problem: &DiscriminationProblem, theta_star: &[f64], x: f64) -> Result<f64> {
    problem.residual_norm_sq(x, theta_star)
}

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub t: f64,
    pub theta_star: Vec<f64>,
    pub max_psi: f64,
    pub argmax: f64,
    /// Refined local maxima of `ψ` within `tol` (relative) of the maximum.
    pub argmax_set: Vec<f64>,
    /// `max_s |ψ(x_s) − T|` over the support.
    pub support_slack: f64,
    pub is_optimal: bool,
}

/// Checks the equivalence theorem: `ξ` is optimal iff `ψ(x, ξ) ≤ T(ξ)` on
/// the whole interval.
pub fn equivalence_check(
    problem: &DiscriminationProblem,
    design: &Design,
    init: &[f64],
    grid_size: usize,
    tol: f64,
    opts: &FitOptions,
) -> Result<EquivalenceReport> {
    let value = evaluate_t(problem, design, init, opts)?;
    let theta = &value.theta_star;
    let maxima = local_maxima(
        |x| psi(problem, theta, x).unwrap_or(f64::INFINITY),
        problem.interval(),
        grid_size.max(100),
    );
    let (argmax, max_psi) =
        maxima
            .iter()
            .copied()
            .fold((f64::NAN, f64::NEG_INFINITY), |best, m| {
                if m.1 > best.1 {
                    m
                } else {
                    best
                }
            });
    let argmax_set = maxima
        .iter()
        .filter(|m| m.1 >= max_psi - tol * max_psi.abs())
        .map(|m| m.0)
        .collect();
    let support_slack = design
        .points
        .iter()
        .map(|&x| psi(problem, theta, x).map(|v| (v - value.t).abs()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let is_optimal = max_psi <= value.t * (1.0 + tol);
    Ok(EquivalenceReport {
        t: value.t,
        theta_star: value.theta_star,
        max_psi,
        argmax,
        argmax_set,
        support_slack,
        is_optimal,
    })
}

/// Guaranteed efficiency `T(ξ) / ‖ε‖²`, clipped to `[0, 1]`.
pub fn efficiency_bound(t_value: f64, sup_err_sq: f64) -> f64 {
    if !(sup_err_sq > 0.0) || !(t_value > 0.0) {
        return 0.0;
    }
    (t_value / sup_err_sq).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use approx::assert_relative_eq;

    fn exact_design() -> Design {
        Design::new(vec![-1.0, 0.0, 1.0], vec![0.25, 0.5, 0.25]).unwrap()
    }

    #[test]
    fn line_fit_to_quadratic_on_exact_design() {
        let p = examples::nested_polynomials(1.0, 1.0);
        let fit = best_fit(&p, &exact_design(), 0, &[0.0, 0.0], &FitOptions::default()).unwrap();
        assert_relative_eq!(fit.theta[0], 1.5, epsilon = 1e-12);
        assert_relative_eq!(fit.theta[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(fit.delta, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn line_fit_matches_grid_oracle() {
        let p = examples::nested_polynomials(1.0, 1.0);
        let d = Design::new(vec![-0.8, 0.1, 0.7], vec![0.3, 0.3, 0.4]).unwrap();
        let fit = best_fit(&p, &d, 0, &[0.0, 0.0], &FitOptions::default()).unwrap();
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let h = 0.002;
        for a in 0..=1500 {
            for b in 0..=1500 {
                let (t0, t1) = (a as f64 * h, b as f64 * h);
                let delta: f64 = d
                    .iter()
                    .map(|(x, w)| w * (1.0 + x + x * x - t0 - t1 * x).powi(2))
                    .sum();
                if delta < best.0 {
                    best = (delta, t0, t1);
                }
            }
        }
        assert!((fit.theta[0] - best.1).abs() <= h);
        assert!((fit.theta[1] - best.2).abs() <= h);
        assert!(fit.delta <= best.0 + 1e-12);
    }

    #[test]
    fn linear_model_reproduces_itself() {
        let p = examples::nested_polynomials(1.0, 1.0);
        // the quadratic fitted to the cubic 1 + x + x² + x³ on four points is
        // not exact, but the line fitted to a line is.
        let d = Design::uniform(vec![-1.0, -0.2, 0.4]).unwrap();
        let fit = best_fit(&p, &d, 1, &[0.0; 3], &FitOptions::default()).unwrap();
        assert!(fit.delta < 1e-24);
    }

    #[test]
    fn exact_design_value() {
        let p = examples::nested_polynomials(1.0, 1.0);
        let v = evaluate_t(&p, &exact_design(), &[0.0; 5], &FitOptions::default()).unwrap();
        assert_relative_eq!(v.t, 0.125, epsilon = 1e-12);
        assert_relative_eq!(
            v.t,
            0.5 * v.per_comparison[0] + 0.5 * v.per_comparison[1],
            epsilon = 1e-15
        );
    }

    #[test]
    fn one_point_design_has_zero_value() {
        let p = examples::nested_polynomials(1.0, 1.0);
        let d = Design::new(vec![0.3], vec![1.0]).unwrap();
        let v = evaluate_t(&p, &d, &[0.0; 5], &FitOptions::default()).unwrap();
        assert!(v.t.abs() < 1e-24);
    }

    #[test]
    fn psi_examples() {
        let p = examples::nested_polynomials(1.0, 1.0);
        let v = evaluate_t(&p, &exact_design(), &[0.0; 5], &FitOptions::default()).unwrap();
        assert_relative_eq!(psi(&p, &v.theta_star, 0.0).unwrap(), 0.125, epsilon = 1e-12);
        let x: f64 = 0.5;
        let closed = (x.powi(6) - x.powi(4) + 0.25) / 2.0;
        assert_relative_eq!(psi(&p, &v.theta_star, x).unwrap(), closed, epsilon = 1e-12);
        assert_relative_eq!(closed, 0.1015625);
    }

    #[test]
    fn equivalence_on_exact_and_uniform_designs() {
        let p = examples::nested_polynomials(1.0, 1.0);
        let opts = FitOptions::default();
        let rep = equivalence_check(&p, &exact_design(), &[0.0; 5], 2001, 1e-6, &opts).unwrap();
        assert!(rep.is_optimal);
        assert_eq!(rep.argmax_set.len(), 3);
        for (got, want) in rep.argmax_set.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        let two = Design::uniform(vec![-1.0, 1.0]).unwrap();
        let rep = equivalence_check(&p, &two, &[0.0; 5], 2001, 1e-3, &opts).unwrap();
        assert!(!rep.is_optimal);
    }

    #[test]
    fn efficiency_examples() {
        assert!((efficiency_bound(0.1246, 0.1258) - 0.9906).abs() < 5e-4);
        assert_eq!(efficiency_bound(0.0, 0.3), 0.0);
        assert_eq!(efficiency_bound(0.3, 0.3), 1.0);
    }

    #[test]
    fn reported_saturation_design() {
        let p = examples::saturation_models();
        let d = Design::new(vec![0.5, 3.4, 10.0], vec![0.311, 0.415, 0.274]).unwrap();
        let v = evaluate_t(
            &p,
            &d,
            &examples::SATURATION_MODELS_THETA,
            &FitOptions::default(),
        )
        .unwrap();
        assert!((v.t - 0.006786).abs() < 1e-5, "T = {}", v.t);
        // exponential fit, then Michaelis-Menten fit
        let expected = [1.721, 0.865, 3.008, 1.809];
        for (a, b) in v.theta_star.iter().zip(expected) {
            assert!((a - b).abs() < 2e-2, "{:?}", v.theta_star);
        }
    }

    #[test]
    fn value_is_permutation_and_duplicate_invariant() {
        let p = examples::nested_polynomials(1.0, 4.0);
        let opts = FitOptions::default();
        let a = Design::new(vec![-0.7, 0.2, 0.9, -0.1], vec![0.1, 0.4, 0.3, 0.2]).unwrap();
        let b = Design::new(vec![0.9, -0.1, 0.2, -0.7], vec![0.3, 0.2, 0.4, 0.1]).unwrap();
        let c = Design::new(
            vec![0.9, -0.1, 0.2, -0.7, 0.2],
            vec![0.3, 0.2, 0.2, 0.1, 0.2],
        )
        .unwrap();
        let ta = evaluate_t(&p, &a, &[0.0; 5], &opts).unwrap().t;
        let tb = evaluate_t(&p, &b, &[0.0; 5], &opts).unwrap().t;
        let tc = evaluate_t(&p, &c, &[0.0; 5], &opts).unwrap().t;
        assert_relative_eq!(ta, tb, epsilon = 1e-12);
        assert_relative_eq!(ta, tc, epsilon = 1e-12);
    }
}

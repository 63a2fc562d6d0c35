//! Atkinson-Fedorov exchange algorithm: move mass toward the maximizer of
//! `ψ(·, ξ_s)` with vanishing step lengths.

use crate::approx::{local_maxima, DEFAULT_GRID};
use crate::criterion::{efficiency_bound, evaluate_t, psi, FitOptions};
use crate::design::{Design, DEFAULT_MERGE_TOL};
use crate::error::Result;
use crate::problem::DiscriminationProblem;

/// Mass below which support points are dropped during the exchange.
pub const AF_MASS_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct AfOptions {
    pub max_iter: usize,
    pub eff_target: f64,
    pub grid_size: usize,
    pub mass_tol: f64,
    pub merge_tol: f64,
    pub fit: FitOptions,
}

impl Default for AfOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            eff_target: 0.999,
            grid_size: DEFAULT_GRID,
            mass_tol: AF_MASS_TOL,
            merge_tol: DEFAULT_MERGE_TOL,
            fit: FitOptions::default(),
        }
    }
}

/// Step length `α_s = 1/(s + 1)`.
pub fn step_length(s: usize) -> f64 {
    1.0 / (s as f64 + 1.0)
}

/// One row of the trajectory, describing `ξ_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct AfRecord {
    pub s: usize,
    pub sup_psi: f64,
    pub t: f64,
    pub bound: f64,
    pub argmax: f64,
    pub support_size: usize,
}

#[derive(Debug, Clone)]
pub struct AfStep {
    pub next: Design,
    pub record: AfRecord,
    pub theta_star: Vec<f64>,
}

/// Evaluates `ξ_s` and returns `(1 − α) ξ_s + α δ_{x*}` with `x*` the
/// maximizer of `ψ(·, ξ_s)`, cleaned with the exchange tolerances.
pub fn af_step(
    problem: &DiscriminationProblem,
    design: &Design,
    s: usize,
    alpha: f64,
    theta_seed: &[f64],
    opts: &AfOptions,
) -> Result<AfStep> {
    let value = evaluate_t(problem, design, theta_seed, &opts.fit)?;
    let theta = &value.theta_star;
    let (argmax, sup_psi) = local_maxima(
        |x| psi(problem, theta, x).unwrap_or(f64::INFINITY),
        problem.interval(),
        opts.grid_size,
    )
    .into_iter()
    .fold((f64::NAN, f64::NEG_INFINITY), |best, m| {
        if m.1 > best.1 {
            m
        } else {
            best
        }
    });
    // the support itself may carry the maximum when the grid misses it
    let (argmax, sup_psi) = design.points.iter().fold((argmax, sup_psi), |best, &x| {
        let v = psi(problem, theta, x).unwrap_or(f64::INFINITY);
        if v > best.1 {
            (x, v)
        } else {
            best
        }
    });

    let mut points = design.points.clone();
    let mut masses: Vec<f64> = design.masses.iter().map(|m| (1.0 - alpha) * m).collect();
    points.push(argmax);
    masses.push(alpha);
    let next = Design::new(points, masses)?.clean(
        opts.mass_tol,
        opts.merge_tol,
        problem.interval().len(),
    )?;
    Ok(AfStep {
        next,
        record: AfRecord {
            s,
            sup_psi,
            t: value.t,
            bound: efficiency_bound(value.t, sup_psi),
            argmax,
            support_size: design.len(),
        },
        theta_star: value.theta_star,
    })
}

#[derive(Debug, Clone)]
pub struct AfResult {
    /// Design with the best bound seen.
    pub design: Design,
    pub theta_star: Vec<f64>,
    pub t: f64,
    pub sup_psi: f64,
    pub eff_bound: f64,
    pub trajectory: Vec<AfRecord>,
    pub converged: bool,
}

impl AfResult {
    /// Running maximum of the bound column.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.trajectory
            .iter()
            .scan(0.0f64, |best, r| {
                *best = best.max(r.bound);
                Some(*best)
            })
            .collect()
    }
}

/// Iterates [`af_step`] from `init` (default: uniform on `n + 1` equispaced
/// points) with `α_s = 1/(s + 1)`, `s = 1, 2, …`, until the bound reaches
/// `eff_target` or `max_iter` designs have been evaluated.
pub fn af_solve(
    problem: &DiscriminationProblem,
    opts: &AfOptions,
    init: Option<Design>,
    theta_seed: &[f64],
) -> Result<AfResult> {
    problem.check_theta(theta_seed)?;
    let mut design = match init {
        Some(d) => d,
        None => Design::uniform(problem.interval().linspace(problem.n_params() + 1))?,
    };
    let mut seed = theta_seed.to_vec();
    let mut trajectory = Vec::new();
    let mut best: Option<(Design, Vec<f64>, AfRecord)> = None;
    for s in 1..=opts.max_iter.max(1) {
        let step = match af_step(problem, &design, s, step_length(s), &seed, opts) {
            Ok(step) => step,
            Err(e) if !trajectory.is_empty() => {
                log::warn!("exchange step {s} failed: {e}");
                break;
            }
            Err(e) => return Err(e),
        };
        log::debug!(
            "s={s} sup ψ={:.6e} T={:.6e} bound={:.4}",
            step.record.sup_psi,
            step.record.t,
            step.record.bound
        );
        if best.as_ref().is_none_or(|b| step.record.bound > b.2.bound) {
            best = Some((design.clone(), step.theta_star.clone(), step.record.clone()));
        }
        let done = step.record.bound >= opts.eff_target;
        trajectory.push(step.record);
        seed = step.theta_star;
        if done {
            break;
        }
        design = step.next;
    }
    let (design, theta_star, record) = best.expect("at least one step");
    Ok(AfResult {
        design,
        theta_star,
        t: record.t,
        sup_psi: record.sup_psi,
        eff_bound: record.bound,
        converged: record.bound >= opts.eff_target,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use approx::assert_relative_eq;

    #[test]
    fn step_schedule() {
        assert_eq!(step_length(1), 0.5);
        assert!((1..100).all(|s| step_length(s + 1) < step_length(s)));
    }

    #[test]
    fn optimal_design_keeps_support() {
        let p = examples::nested_polynomials(1.0, 1.0);
        let d = Design::new(vec![-1.0, 0.0, 1.0], vec![0.25, 0.5, 0.25]).unwrap();
        let step = af_step(&p, &d, 1, 0.5, &[0.0; 5], &AfOptions::default()).unwrap();
        assert_eq!(step.next.len(), 3);
        assert_relative_eq!(step.record.t, 0.125, epsilon = 1e-12);
        assert_relative_eq!(step.record.bound, 1.0, epsilon = 1e-9);
        for (a, b) in step.next.masses.iter().zip(&d.masses) {
            assert!((a - b).abs() <= 0.5 + 1e-12);
        }
        assert!((step.next.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_step_leaves_design_unchanged() {
        let p = examples::nested_polynomials(1.0, 1.0);
        let d = Design::uniform(vec![-1.0, 0.2, 0.7]).unwrap();
        let step = af_step(&p, &d, 3, 0.0, &[0.0; 5], &AfOptions::default()).unwrap();
        assert_eq!(step.next, d);
    }

    #[test]
    fn trajectory_is_never_empty() {
        let p = examples::nested_polynomials(1.0, 1.0);
        let opts = AfOptions {
            max_iter: 0,
            ..AfOptions::default()
        };
        let r = af_solve(&p, &opts, None, &[0.0; 5]).unwrap();
        assert_eq!(r.trajectory.len(), 1);
        assert_eq!(r.trajectory[0].s, 1);
    }

    #[test]
    fn masses_are_conserved_along_the_run() {
        let p = examples::nested_polynomials(1.0, 1.0);
        let opts = AfOptions {
            max_iter: 30,
            ..AfOptions::default()
        };
        let mut d = Design::uniform(vec![-1.0, 0.0, 1.0]).unwrap();
        let mut seed = vec![0.0; 5];
        for s in 1..=opts.max_iter {
            let step = af_step(&p, &d, s, step_length(s), &seed, &opts).unwrap();
            assert!((step.next.masses.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(step.record.t <= step.record.sup_psi * (1.0 + 1e-12));
            d = step.next;
            seed = step.theta_star;
        }
    }
}

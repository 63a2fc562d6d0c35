//! Vector-valued Chebyshev approximation: the error function `ε = η − η(·, θ)`,
//! its extreme points, the linearized minimax programs on a reference set and
//! the Kolmogorov optimality certificate.
//!
//! The approximating space is the direct sum of one subspace per comparison.
//! For comparison `c` the basis functions are the parameter gradients
//! `∂η_j/∂θ_m(·, θ_c)`, embedded in component `c`, so that
//! `⟨ε(x), v_m(x)⟩ = p_c ε_c(x) ∂_m η_j(x, θ_c)`.

use crate::error::{Error, Result};
use crate::linalg::golden_max;
use crate::problem::{DiscriminationProblem, Interval};
use crate::simplex::{solve_lp, LinearProgram, LpStatus, Relation, Sense};

pub const DEFAULT_GRID: usize = 2001;
pub const DEFAULT_TAU_EXT: f64 = 0.02;

/// Refined local maxima of `f` on `interval`: a uniform grid scan followed by
/// golden-section refinement on each bracketing pair of cells. Endpoints are
/// candidates whenever they dominate their neighbour. Sorted by location.
pub fn local_maxima<F>(f: F, interval: Interval, grid_size: usize) -> Vec<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    let grid = interval.linspace(grid_size.max(3));
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let last = grid.len() - 1;
    let tol = 1e-10 * interval.len();
    let mut out: Vec<(f64, f64)> = Vec::new();
    for k in 0..=last {
        let left = if k == 0 {
            f64::NEG_INFINITY
        } else {
            values[k - 1]
        };
        let right = if k == last {
            f64::NEG_INFINITY
        } else {
            values[k + 1]
        };
        let is_max = values[k] >= right && (values[k] > left || (k == 0 && values[k] >= right));
        if !is_max {
            continue;
        }
        let lo = grid[k.saturating_sub(1)];
        let hi = grid[(k + 1).min(last)];
        let (mut x, mut v) = golden_max(&f, lo, hi, tol);
        if values[k] > v {
            x = grid[k];
            v = values[k];
        }
        match out.last_mut() {
            Some(prev) if (x - prev.0).abs() <= 1e-9 * interval.len() => {
                if v > prev.1 {
                    *prev = (x, v);
                }
            }
            _ => out.push((x, v)),
        }
    }
    out
}

/// `ε(x) = η(x) − η(x, θ)` for a fixed parameter vector.
#[derive(Debug, Clone)]
pub struct ErrorFunction<'a> {
    pub problem: &'a DiscriminationProblem,
    pub theta: Vec<f64>,
}

impl<'a> ErrorFunction<'a> {
    pub fn new(problem: &'a DiscriminationProblem, theta: Vec<f64>) -> Result<Self> {
        problem.check_theta(&theta)?;
        Ok(Self { problem, theta })
    }

    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        self.problem.residual(x, &self.theta)
    }

    /// `|ε(x)|²`.
    pub fn norm_sq(&self, x: f64) -> Result<f64> {
        self.problem.residual_norm_sq(x, &self.theta)
    }

    /// `|ε(x)|²`, or `+∞` where a model is singular.
    pub fn norm_sq_or_inf(&self, x: f64) -> f64 {
        self.norm_sq(x).unwrap_or(f64::INFINITY)
    }

    /// `max_{x∈S} |ε(x)|²`.
    pub fn max_on(&self, points: &[f64]) -> f64 {
        points
            .iter()
            .map(|&x| self.norm_sq_or_inf(x))
            .fold(0.0, f64::max)
    }

    /// Gradient basis values `∂η_j/∂θ(x, θ_c)` for comparison `c`.
    pub fn basis(&self, c: usize, x: f64) -> Result<Vec<f64>> {
        let cmp = &self.problem.comparisons()[c];
        self.problem
            .fitted_model(c)
            .grad(x, &self.theta[cmp.range()])
    }

    /// `r_m(x) = ⟨ε(x), v_m(x)⟩` for the basis of comparison `c`.
    pub fn inner_with_basis(&self, c: usize, x: f64) -> Result<Vec<f64>> {
        let eps_c =
            self.problem.fixed_value(c, x)? - self.problem.fitted_value(c, x, &self.theta)?;
        let p = self.problem.comparisons()[c].weight;
        Ok(self
            .basis(c, x)?
            .into_iter()
            .map(|g| p * eps_c * g)
            .collect())
    }
}

/// `‖ε‖² = sup_X |ε(x)|²` and its location.
pub fn sup_norm_sq(eps: &ErrorFunction<'_>, grid_size: usize) -> (f64, f64) {
    local_maxima(|x| eps.norm_sq_or_inf(x), eps.problem.interval(), grid_size)
        .into_iter()
        .fold((f64::NEG_INFINITY, f64::NAN), |best, (x, v)| {
            if v > best.0 {
                (v, x)
            } else {
                best
            }
        })
}

/// Local maxima of `|ε|²` reaching at least `(1 − τ) ‖ε‖²`, sorted.
pub fn extreme_points(eps: &ErrorFunction<'_>, grid_size: usize, tau: f64) -> Vec<f64> {
    let maxima = local_maxima(|x| eps.norm_sq_or_inf(x), eps.problem.interval(), grid_size);
    let top = maxima.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
    maxima
        .into_iter()
        .filter(|m| m.1 >= (1.0 - tau) * top)
        .map(|m| m.0)
        .collect()
}

/// Working set of candidate support points with marks for the points that
/// received mass in the last linearized programs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    pub points: Vec<f64>,
    pub marks: Vec<bool>,
}

impl ReferenceSet {
    pub fn new(mut points: Vec<f64>) -> Self {
        points.sort_by(f64::total_cmp);
        points.dedup();
        let marks = vec![false; points.len()];
        Self { points, marks }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Inserts `x` unless an existing point lies within `min_dist`. Returns
    /// whether it was added.
    pub fn insert(&mut self, x: f64, min_dist: f64) -> bool {
        if self.points.iter().any(|&p| (p - x).abs() <= min_dist) {
            return false;
        }
        let pos = self.points.partition_point(|&p| p < x);
        self.points.insert(pos, x);
        self.marks.insert(pos, false);
        true
    }

    /// Adds `x`, or moves the nearest point within `min_dist` onto `x` (its
    /// mark is kept). Returns whether the set changed.
    pub fn insert_or_shift(&mut self, x: f64, min_dist: f64) -> bool {
        let nearest = self
            .points
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
            .map(|(k, &p)| (k, p));
        match nearest {
            Some((k, p)) if (p - x).abs() <= min_dist => {
                if p == x {
                    return false;
                }
                let mark = self.marks.remove(k);
                self.points.remove(k);
                let pos = self.points.partition_point(|&q| q < x);
                self.points.insert(pos, x);
                self.marks.insert(pos, mark);
                true
            }
            _ => self.insert(x, min_dist),
        }
    }

    pub fn marked(&self) -> Vec<f64> {
        self.points
            .iter()
            .zip(&self.marks)
            .filter(|(_, &m)| m)
            .map(|(&p, _)| p)
            .collect()
    }

    pub fn clear_marks(&mut self) {
        self.marks.iter_mut().for_each(|m| *m = false);
    }
}

/// Result of the linearized minimax program restricted to one comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceStep {
    /// Newton correction for the comparison's parameter slice.
    pub alpha: Vec<f64>,
    /// Optimal level `E ≥ 0`.
    pub e: f64,
    /// Dual weights of the reference points.
    pub weights: Vec<f64>,
}

/// Solves
///
/// ```text
/// min E  s.t.  2 Σ_m α_m ⟨ε(x_i), v_m(x_i)⟩ + E ≥ |ε(x_i)|²,  x_i ∈ S,  E ≥ 0
/// ```
///
/// with `α` free and `v_m` the basis of comparison `c`. The bound `E ≥ 0`
/// keeps the program bounded when `θ` is not dual feasible on `S`.
pub fn primal_subspace_lp(
    eps: &ErrorFunction<'_>,
    points: &[f64],
    c: usize,
) -> Result<SubspaceStep> {
    if points.is_empty() {
        return Err(Error::LpFailure("empty reference set".into()));
    }
    let dim = eps.problem.comparisons()[c].dim;
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|&x| eps.inner_with_basis(c, x))
        .collect::<Result<_>>()?;
    let rhs: Vec<f64> = points
        .iter()
        .map(|&x| eps.norm_sq(x))
        .collect::<Result<_>>()?;
    let scale: Vec<f64> = (0..dim)
        .map(|m| rows.iter().map(|r| (2.0 * r[m]).abs()).fold(0.0, f64::max))
        .collect();
    // variables: scaled α (free; fixed at 0 if its column vanishes), then E
    let mut lp = LinearProgram::new(
        (0..=dim)
            .map(|m| if m == dim { 1.0 } else { 0.0 })
            .collect(),
        Sense::Minimize,
    );
    for m in 0..dim {
        if scale[m] > 0.0 {
            lp.set_free(m);
        } else {
            lp.set_bounds(m, 0.0, 0.0);
        }
    }
    for (r, &b) in rows.iter().zip(&rhs) {
        let mut coefs: Vec<f64> = (0..dim)
            .map(|m| {
                if scale[m] > 0.0 {
                    2.0 * r[m] / scale[m]
                } else {
                    0.0
                }
            })
            .collect();
        coefs.push(1.0);
        lp.add_row(coefs, Relation::Ge, b);
    }
    let sol = solve_lp(&lp);
    if sol.status != LpStatus::Optimal {
        return Err(Error::LpFailure(format!(
            "subspace program for comparison {c} returned {:?}",
            sol.status
        )));
    }
    let e = sol.x[dim].max(0.0);
    let mut scaled_alpha = sol.x[..dim].to_vec();
    if e == 0.0 {
        // the regularization is active and the optimal α is far from unique;
        // an arbitrary vertex can be so long that no damping factor helps, so
        // take the correction of least ℓ1 norm (α = α⁺ − α⁻) among them
        let mut lp = LinearProgram::new(vec![1.0; 2 * dim], Sense::Minimize);
        for m in 0..dim {
            if scale[m] == 0.0 {
                lp.set_bounds(m, 0.0, 0.0);
                lp.set_bounds(dim + m, 0.0, 0.0);
            }
        }
        for (r, &b) in rows.iter().zip(&rhs) {
            let coefs: Vec<f64> = (0..dim)
                .map(|m| {
                    if scale[m] > 0.0 {
                        2.0 * r[m] / scale[m]
                    } else {
                        0.0
                    }
                })
                .collect();
            let row = coefs
                .iter()
                .copied()
                .chain(coefs.iter().map(|v| -v))
                .collect();
            lp.add_row(row, Relation::Ge, b);
        }
        let short = solve_lp(&lp);
        if short.is_optimal() {
            scaled_alpha = (0..dim).map(|m| short.x[m] - short.x[dim + m]).collect();
        }
    }
    let alpha = (0..dim)
        .map(|m| {
            if scale[m] > 0.0 {
                scaled_alpha[m] / scale[m]
            } else {
                0.0
            }
        })
        .collect();
    let weights = sol.duals.iter().map(|&y| y.max(0.0)).collect();
    Ok(SubspaceStep { alpha, e, weights })
}

/// Dual feasibility of the current approximation on `S` for the subspace of
/// comparison `c`: looks for weights `w ≥ 0`, `Σ w = 1`, with
/// `Σ w_i ⟨ε(x_i), v(x_i)⟩ = 0` for every basis function, maximizing
/// `Σ w_i |ε(x_i)|²`. Returns the weights when such a point exists.
pub fn dual_feasible(
    eps: &ErrorFunction<'_>,
    points: &[f64],
    c: usize,
) -> Result<Option<Vec<f64>>> {
    let dim = eps.problem.comparisons()[c].dim;
    let nu = points.len();
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|&x| eps.inner_with_basis(c, x))
        .collect::<Result<_>>()?;
    let obj: Vec<f64> = points
        .iter()
        .map(|&x| eps.norm_sq(x))
        .collect::<Result<_>>()?;
    let mut lp = LinearProgram::new(obj, Sense::Maximize);
    for m in 0..dim {
        let scale = rows.iter().map(|r| r[m].abs()).fold(0.0, f64::max);
        if scale == 0.0 {
            continue;
        }
        lp.add_row(
            rows.iter().map(|r| r[m] / scale).collect(),
            Relation::Eq,
            0.0,
        );
    }
    lp.add_row(vec![1.0; nu], Relation::Eq, 1.0);
    let sol = solve_lp(&lp);
    match sol.status {
        LpStatus::Optimal => Ok(Some(sol.x.iter().map(|&w| w.max(0.0)).collect())),
        LpStatus::Infeasible => Ok(None),
        other => Err(Error::LpFailure(format!("dual program returned {other:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KolmogorovCertificate {
    pub is_best: bool,
    /// Optimal `δ`, relative to `max_A |ε|²`.
    pub delta: f64,
    /// Improving direction in the stacked parameter space (zero when `is_best`
    /// or outside the requested comparisons).
    pub direction: Vec<f64>,
    /// Carathéodory weights on `A`, from the row duals.
    pub weights: Vec<f64>,
}

/// Kolmogorov criterion on the extreme set `A` for the subspaces of the
/// listed comparisons: solves `max δ` subject to
/// `Σ_m α_m ⟨ε(x), v_m(x)⟩ ≥ δ` on `A` with `|α_m| ≤ 1`. The basis is
/// normalized so that `δ` is measured in units of `max_A |ε|²`;
/// `is_best` holds when `δ* ≤ 1e-8`.
pub fn kolmogorov_check(
    eps: &ErrorFunction<'_>,
    extreme: &[f64],
    comparisons: &[usize],
) -> Result<KolmogorovCertificate> {
    if extreme.is_empty() {
        return Err(Error::LpFailure("empty extreme set".into()));
    }
    let problem = eps.problem;
    let level = eps.max_on(extreme);
    // (comparison, basis index, column values over A)
    let mut cols: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for &c in comparisons {
        let per_point: Vec<Vec<f64>> = extreme
            .iter()
            .map(|&x| eps.inner_with_basis(c, x))
            .collect::<Result<_>>()?;
        for m in 0..problem.comparisons()[c].dim {
            cols.push((c, m, per_point.iter().map(|r| r[m]).collect()));
        }
    }
    let scales: Vec<f64> = cols
        .iter()
        .map(|(_, _, v)| {
            let mx = v.iter().map(|a| a.abs()).fold(0.0, f64::max);
            if mx > 0.0 && level > 0.0 {
                level / mx
            } else {
                0.0
            }
        })
        .collect();
    let nv = cols.len();
    let mut objective = vec![0.0; nv + 1];
    objective[nv] = 1.0;
    let mut lp = LinearProgram::new(objective, Sense::Maximize);
    for k in 0..nv {
        lp.set_bounds(k, -1.0, 1.0);
    }
    lp.set_free(nv);
    for (i, _) in extreme.iter().enumerate() {
        let mut coefs: Vec<f64> = cols
            .iter()
            .zip(&scales)
            .map(|((_, _, v), s)| v[i] * s / level.max(f64::MIN_POSITIVE))
            .collect();
        coefs.push(-1.0);
        lp.add_row(coefs, Relation::Ge, 0.0);
    }
    let sol = solve_lp(&lp);
    if sol.status != LpStatus::Optimal {
        return Err(Error::LpFailure(format!(
            "Kolmogorov program returned {:?}",
            sol.status
        )));
    }
    let delta = sol.x[nv];
    let is_best = delta <= 1e-8;
    let mut direction = vec![0.0; problem.n_params()];
    if !is_best {
        for (k, (c, m, _)) in cols.iter().enumerate() {
            direction[problem.comparisons()[*c].offset + m] = sol.x[k] * scales[k];
        }
    }
    let raw: Vec<f64> = sol.duals.iter().map(|y| y.abs()).collect();
    let total: f64 = raw.iter().sum();
    let weights = if total > 0.0 {
        raw.iter().map(|w| w / total).collect()
    } else {
        raw
    };
    Ok(KolmogorovCertificate {
        is_best,
        delta,
        direction,
        weights,
    })
}

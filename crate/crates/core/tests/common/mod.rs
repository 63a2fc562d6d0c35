#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use tpdesign::simplex::{LinearProgram, LpSolution, LpStatus, Relation, Sense};

/// What brute force says about `min/max cᵀx` over `{x ≥ 0, rows}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truth {
    Optimal(f64),
    Unbounded,
    Infeasible,
}

/// Smallest `cᵀx` over the basic feasible solutions of `{x ≥ 0, rows}`.
/// Every vertex is the unique solution of the equality rows plus
/// `n − rank(eq)` other active constraints, so all such systems of full
/// column rank are solved and the consistent, feasible ones kept. Dependent rows are
/// fine this way. `None` if there is no vertex.
fn min_over_vertices(c: &[f64], rows: &[(Vec<f64>, Relation, f64)]) -> Option<f64> {
    let n = c.len();
    let mut eq = Vec::new();
    let mut other = Vec::new();
    for (row, rel, rhs) in rows {
        if *rel == Relation::Eq {
            eq.push((row.clone(), *rhs));
        } else {
            other.push((row.clone(), *rhs));
        }
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        other.push((e, 0.0));
    }
    let eq_rank = if eq.is_empty() {
        0
    } else {
        let m = DMatrix::from_fn(eq.len(), n, |r, j| eq[r].0[j]);
        let sv = m.singular_values();
        sv.iter()
            .filter(|&&v| v > 1e-10 * sv.max().max(1.0))
            .count()
    };
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << other.len()) {
        if mask.count_ones() as usize + eq_rank != n {
            continue;
        }
        let active: Vec<&(Vec<f64>, f64)> = eq
            .iter()
            .chain(
                (0..other.len())
                    .filter(|&k| mask & (1 << k) != 0)
                    .map(|k| &other[k]),
            )
            .collect();
        let a = DMatrix::from_fn(active.len(), n, |r, j| active[r].0[j]);
        let b = DVector::from_fn(active.len(), |r, _| active[r].1);
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&v| v > 1e-10 * smax.max(1.0))
            .count();
        if rank < n {
            continue;
        }
        let Ok(x) = svd.solve(&b, 1e-10 * smax.max(1.0)) else {
            continue;
        };
        let consistent = (&a * &x - &b)
            .iter()
            .zip(b.iter())
            .all(|(r, v)| r.abs() <= 1e-9 * (1.0 + v.abs()));
        let feasible = consistent
            && x.iter().all(|&v| v >= -1e-9)
            && rows.iter().all(|(row, rel, rhs)| {
                let lhs: f64 = row.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
                let tol = 1e-9 * (1.0 + rhs.abs());
                match rel {
                    Relation::Le => lhs <= rhs + tol,
                    Relation::Ge => lhs >= rhs - tol,
                    Relation::Eq => (lhs - rhs).abs() <= tol,
                }
            });
        if feasible {
            let obj: f64 = c.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
            best = Some(best.map_or(obj, |v: f64| v.min(obj)));
        }
    }
    best
}

/// Vertex enumeration on the polyhedron and on the normalized recession cone.
pub fn brute_force(lp: &LinearProgram) -> Truth {
    assert!(
        lp.bounds.iter().all(|&b| b == (0.0, f64::INFINITY)),
        "oracle handles x ≥ 0 only"
    );
    let sign = if lp.sense == Sense::Maximize {
        -1.0
    } else {
        1.0
    };
    let c: Vec<f64> = lp.objective.iter().map(|v| sign * v).collect();
    let rows: Vec<(Vec<f64>, Relation, f64)> = lp
        .rows
        .iter()
        .map(|r| (r.coefs.clone(), r.relation, r.rhs))
        .collect();
    let Some(best) = min_over_vertices(&c, &rows) else {
        return Truth::Infeasible;
    };
    // extreme rays: vertices of {d ≥ 0, Ad (rel) 0, Σd = 1}
    let mut cone: Vec<(Vec<f64>, Relation, f64)> = rows
        .iter()
        .map(|(a, rel, _)| (a.clone(), *rel, 0.0))
        .collect();
    cone.push((vec![1.0; c.len()], Relation::Eq, 1.0));
    match min_over_vertices(&c, &cone) {
        Some(slope) if slope < -1e-9 => Truth::Unbounded,
        _ => Truth::Optimal(sign * best),
    }
}

/// `m × n` program with small integer data so that degenerate vertices are
/// common. Half of the programs get a `Σx ≤ 10` row to keep them bounded.
pub fn random_lp(rng: &mut impl RngCore, m: usize, n: usize) -> LinearProgram {
    let sense = if rng.random_bool(0.5) {
        Sense::Minimize
    } else {
        Sense::Maximize
    };
    let objective = (0..n).map(|_| rng.random_range(-4i32..=4) as f64).collect();
    let mut lp = LinearProgram::new(objective, sense);
    for _ in 0..m {
        let coefs = (0..n).map(|_| rng.random_range(-3i32..=4) as f64).collect();
        let relation = match rng.random_range(0..5) {
            0 => Relation::Eq,
            1 | 2 => Relation::Ge,
            _ => Relation::Le,
        };
        lp.add_row(coefs, relation, rng.random_range(-2i32..=8) as f64);
    }
    if rng.random_bool(0.5) {
        lp.add_row(vec![1.0; n], Relation::Le, 10.0);
    }
    lp
}

/// Largest violation of the optimality conditions reported by the solver:
/// `(primal feasibility, duality gap, complementary slackness)`, each already
/// divided by the scale used in the tolerance.
pub fn kkt_residuals(lp: &LinearProgram, sol: &LpSolution) -> (f64, f64, f64) {
    assert_eq!(sol.status, LpStatus::Optimal);
    let rhs_inf = lp.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
    let mut feas: f64 = sol.x.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
    let mut cs: f64 = 0.0;
    for (r, y) in lp.rows.iter().zip(&sol.duals) {
        let lhs: f64 = r.coefs.iter().zip(&sol.x).map(|(a, b)| a * b).sum();
        let slack = lhs - r.rhs;
        let viol = match r.relation {
            Relation::Le => slack.max(0.0),
            Relation::Ge => (-slack).max(0.0),
            Relation::Eq => slack.abs(),
        };
        feas = feas.max(viol);
        if r.relation != Relation::Eq {
            cs = cs.max((y * slack).abs());
        }
    }
    for (x, d) in sol.x.iter().zip(&sol.reduced_costs) {
        cs = cs.max((x * d).abs());
    }
    let cx: f64 = lp.objective.iter().zip(&sol.x).map(|(a, b)| a * b).sum();
    let yb: f64 = lp.rows.iter().zip(&sol.duals).map(|(r, y)| r.rhs * y).sum();
    (
        feas / (1.0 + rhs_inf),
        (cx - yb).abs() / (1.0 + cx.abs()),
        cs,
    )
}

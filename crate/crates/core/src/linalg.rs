//! Small numerical helpers shared by the criterion and the solver.

use nalgebra::{DMatrix, DVector};

/// Relative singular value cutoff for rank decisions.
pub const RANK_TOL: f64 = 1e-12;

/// Least squares solution of `a x ≈ b` through an SVD of the column-scaled
/// matrix. Singular values below `RANK_TOL · σ_max` are dropped, so a rank
/// deficient system yields the minimum norm solution in scaled coordinates.
/// Returns the solution and the numerical rank.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, usize) {
    let (m, n) = a.shape();
    if n == 0 {
        return (DVector::zeros(0), 0);
    }
    if m == 0 {
        return (DVector::zeros(n), 0);
    }
    let scale: Vec<f64> = (0..n)
        .map(|j| {
            let norm = a.column(j).norm();
            if norm > 0.0 {
                norm
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(m, n, |i, j| a[(i, j)] / scale[j]);
    let svd = scaled.svd(true, true);
    let smax = svd
        .singular_values
        .iter()
        .fold(0.0f64, |acc, s| acc.max(*s));
    let cutoff = RANK_TOL * smax.max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let z = svd.solve(b, cutoff).unwrap_or_else(|_| DVector::zeros(n));
    let x = DVector::from_fn(n, |j, _| z[j] / scale[j]);
    (x, rank)
}

/// Maximizes `f` on `[lo, hi]` by golden-section search down to an interval
/// of width `tol`. Also compares against the endpoint values so that a
/// monotone function returns its boundary maximum exactly.
pub fn golden_max<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iter = 0;
    while (b - a) > tol && iter < 200 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        iter += 1;
    }
    let mid = 0.5 * (a + b);
    let mut best = (mid, f(mid));
    for x in [lo, hi] {
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

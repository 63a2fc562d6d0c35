//! Dense two-phase primal simplex with dual values.
//!
//! Sized for the small programs that arise on reference sets (tens of
//! variables and rows). Variables may be bounded below by a finite value or be
//! free, and may carry a finite upper bound. Dual values are reported as
//! shadow prices: `duals[i] = ∂(optimal objective)/∂(rhs_i)` in the caller's
//! sense (minimize or maximize).

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coefs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub sense: Sense,
    pub rows: Vec<Row>,
    /// `(lower, upper)` per variable; `-∞`/`+∞` for unbounded sides.
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    /// All variables start with bounds `[0, +∞)`.
    pub fn new(objective: Vec<f64>, sense: Sense) -> Self {
        let n = objective.len();
        Self {
            objective,
            sense,
            rows: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coefs: Vec<f64>, relation: Relation, rhs: f64) -> usize {
        assert_eq!(
            coefs.len(),
            self.num_vars(),
            "row length must match objective"
        );
        self.rows.push(Row {
            coefs,
            relation,
            rhs,
        });
        self.rows.len() - 1
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.bounds[var] = (lower, upper);
    }

    pub fn set_free(&mut self, var: usize) {
        self.bounds[var] = (f64::NEG_INFINITY, f64::INFINITY);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Unbounded,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// One shadow price per row of the program.
    pub duals: Vec<f64>,
    /// `c_j − Σ_i duals_i a_ij` per variable.
    pub reduced_costs: Vec<f64>,
}

impl LpSolution {
    fn status_only(status: LpStatus, lp: &LinearProgram) -> Self {
        Self {
            status,
            x: vec![0.0; lp.num_vars()],
            objective: f64::NAN,
            duals: vec![0.0; lp.rows.len()],
            reduced_costs: vec![0.0; lp.num_vars()],
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

const PIVOT_TOL: f64 = 1e-9;

/// How an original variable is expressed through non-negative columns:
/// `x = shift + Σ sign · y_col`.
#[derive(Debug, Clone)]
struct VarMap {
    shift: f64,
    cols: Vec<(usize, f64)>,
}

/// Standard form `A y = b, y ≥ 0, b ≥ 0`, minimize `c·y`.
struct StandardForm {
    a: DMatrix<f64>,
    b: Vec<f64>,
    cost: Vec<f64>,
    /// Initial basic column for every row.
    initial_basis: Vec<usize>,
    is_artificial: Vec<bool>,
    /// ±1 multiplier applied to each row to make its rhs non-negative.
    row_sign: Vec<f64>,
    var_maps: Vec<VarMap>,
    user_rows: usize,
}

fn standardize(lp: &LinearProgram) -> StandardForm {
    let nv = lp.num_vars();
    let mut var_maps = Vec::with_capacity(nv);
    let mut n_struct = 0;
    // (structural column, upper limit) rows for finite ranges
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for &(lo, hi) in &lp.bounds {
        if lo.is_finite() {
            let col = n_struct;
            n_struct += 1;
            if hi.is_finite() {
                bound_rows.push((col, hi - lo));
            }
            var_maps.push(VarMap {
                shift: lo,
                cols: vec![(col, 1.0)],
            });
        } else if hi.is_finite() {
            let col = n_struct;
            n_struct += 1;
            var_maps.push(VarMap {
                shift: hi,
                cols: vec![(col, -1.0)],
            });
        } else {
            let col = n_struct;
            n_struct += 2;
            var_maps.push(VarMap {
                shift: 0.0,
                cols: vec![(col, 1.0), (col + 1, -1.0)],
            });
        }
    }

    // Rows in terms of structural columns.
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for row in &lp.rows {
        let mut coefs = vec![0.0; n_struct];
        let mut rhs = row.rhs;
        for (j, &a) in row.coefs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let vm = &var_maps[j];
            rhs -= a * vm.shift;
            for &(col, sign) in &vm.cols {
                coefs[col] += a * sign;
            }
        }
        rows.push((coefs, row.relation, rhs));
    }
    for &(col, ub) in &bound_rows {
        let mut coefs = vec![0.0; n_struct];
        coefs[col] = 1.0;
        rows.push((coefs, Relation::Le, ub));
    }

    let m = rows.len();
    let mut row_sign = vec![1.0; m];
    for (i, (coefs, rel, rhs)) in rows.iter_mut().enumerate() {
        if *rhs < 0.0 {
            row_sign[i] = -1.0;
            coefs.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
            *rel = match *rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let n_cols = n_struct + n_slack + n_art;
    let mut a = DMatrix::zeros(m, n_cols);
    let mut b = vec![0.0; m];
    let mut initial_basis = vec![0; m];
    let mut is_artificial = vec![false; n_cols];
    let mut slack = n_struct;
    let mut art = n_struct + n_slack;
    for (i, (coefs, rel, rhs)) in rows.iter().enumerate() {
        for (j, &v) in coefs.iter().enumerate() {
            a[(i, j)] = v;
        }
        b[i] = *rhs;
        match rel {
            Relation::Le => {
                a[(i, slack)] = 1.0;
                initial_basis[i] = slack;
                slack += 1;
            }
            Relation::Ge => {
                a[(i, slack)] = -1.0;
                slack += 1;
                a[(i, art)] = 1.0;
                is_artificial[art] = true;
                initial_basis[i] = art;
                art += 1;
            }
            Relation::Eq => {
                a[(i, art)] = 1.0;
                is_artificial[art] = true;
                initial_basis[i] = art;
                art += 1;
            }
        }
    }

    let sense = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut cost = vec![0.0; n_cols];
    for (j, &c) in lp.objective.iter().enumerate() {
        for &(col, sign) in &var_maps[j].cols {
            cost[col] += sense * c * sign;
        }
    }

    StandardForm {
        a,
        b,
        cost,
        initial_basis,
        is_artificial,
        row_sign,
        var_maps,
        user_rows: lp.rows.len(),
    }
}

struct Tableau {
    /// `m × (n + 1)`; last column holds the basic values.
    t: DMatrix<f64>,
    basis: Vec<usize>,
    /// Reduced costs, last entry holds `−objective`.
    obj: Vec<f64>,
    degenerate_pivots: usize,
    pivots: usize,
}

enum PhaseOutcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl Tableau {
    fn new(sf: &StandardForm) -> Self {
        let (m, n) = sf.a.shape();
        let mut t = DMatrix::zeros(m, n + 1);
        t.view_mut((0, 0), (m, n)).copy_from(&sf.a);
        for i in 0..m {
            t[(i, n)] = sf.b[i];
        }
        Self {
            t,
            basis: sf.initial_basis.clone(),
            obj: vec![0.0; n + 1],
            degenerate_pivots: 0,
            pivots: 0,
        }
    }

    fn n_cols(&self) -> usize {
        self.t.ncols() - 1
    }

    fn set_costs(&mut self, cost: &[f64]) {
        let n = self.n_cols();
        self.obj[..n].copy_from_slice(cost);
        self.obj[n] = 0.0;
        for (i, &bv) in self.basis.iter().enumerate() {
            let cb = cost[bv];
            if cb != 0.0 {
                for j in 0..=n {
                    self.obj[j] -= cb * self.t[(i, j)];
                }
            }
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let n = self.n_cols();
        let p = self.t[(row, col)];
        for j in 0..=n {
            self.t[(row, j)] /= p;
        }
        for i in 0..self.t.nrows() {
            if i == row {
                continue;
            }
            let f = self.t[(i, col)];
            if f != 0.0 {
                for j in 0..=n {
                    let v = self.t[(row, j)];
                    self.t[(i, j)] -= f * v;
                }
                self.t[(i, col)] = 0.0;
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for j in 0..=n {
                self.obj[j] -= f * self.t[(row, j)];
            }
            self.obj[col] = 0.0;
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    fn run(&mut self, allowed: &[bool], max_pivots: usize) -> PhaseOutcome {
        let n = self.n_cols();
        let m = self.t.nrows();
        let bland_after = 10 * (m + n);
        loop {
            if self.pivots >= max_pivots {
                return PhaseOutcome::IterationLimit;
            }
            let scale = 1.0 + self.obj[..n].iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let tol = PIVOT_TOL * scale;
            let bland = self.degenerate_pivots > bland_after;
            let mut entering = None;
            let mut best = -tol;
            for j in 0..n {
                if !allowed[j] || self.basis.contains(&j) {
                    continue;
                }
                let rc = self.obj[j];
                if rc < -tol {
                    if bland {
                        entering = Some(j);
                        break;
                    }
                    if rc < best {
                        best = rc;
                        entering = Some(j);
                    }
                }
            }
            let Some(e) = entering else {
                return PhaseOutcome::Optimal;
            };

            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..m {
                let a = self.t[(i, e)];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.t[(i, n)].max(0.0) / a;
                let take = match leave {
                    None => true,
                    Some(l) => {
                        let tie = (ratio - best_ratio).abs() <= 1e-12 * (1.0 + best_ratio.abs());
                        if tie {
                            if bland {
                                self.basis[i] < self.basis[l]
                            } else {
                                a > self.t[(l, e)]
                            }
                        } else {
                            ratio < best_ratio
                        }
                    }
                };
                if take {
                    leave = Some(i);
                    best_ratio = ratio;
                }
            }
            let Some(l) = leave else {
                return PhaseOutcome::Unbounded;
            };
            if best_ratio <= 1e-12 {
                self.degenerate_pivots += 1;
            }
            self.pivot(l, e);
        }
    }
}

/// Solves `lp` with the two-phase simplex method. Never panics on degenerate
/// or inconsistent input; failures are reported through [`LpStatus`].
pub fn solve_lp(lp: &LinearProgram) -> LpSolution {
    if lp
        .rows
        .iter()
        .any(|r| !r.rhs.is_finite() || r.coefs.iter().any(|v| !v.is_finite()))
        || lp.objective.iter().any(|v| !v.is_finite())
    {
        return LpSolution::status_only(LpStatus::Infeasible, lp);
    }
    if lp
        .bounds
        .iter()
        .any(|&(lo, hi)| lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY)
    {
        return LpSolution::status_only(LpStatus::Infeasible, lp);
    }

    let sf = standardize(lp);
    let (m, n) = sf.a.shape();
    let max_pivots = 200 * (m + n) + 1000;
    let mut tab = Tableau::new(&sf);

    // Phase 1: minimize the sum of artificial variables.
    let phase1_cost: Vec<f64> = sf
        .is_artificial
        .iter()
        .map(|&a| if a { 1.0 } else { 0.0 })
        .collect();
    if sf.is_artificial.iter().any(|&a| a) {
        tab.set_costs(&phase1_cost);
        let all = vec![true; n];
        match tab.run(&all, max_pivots) {
            PhaseOutcome::Optimal => {}
            PhaseOutcome::Unbounded => unreachable!("phase 1 objective is bounded below"),
            PhaseOutcome::IterationLimit => {
                return LpSolution::status_only(LpStatus::IterationLimit, lp)
            }
        }
        let bnorm = sf.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if -tab.obj[n] > 1e-9 * (1.0 + bnorm) {
            return LpSolution::status_only(LpStatus::Infeasible, lp);
        }
        // Drive remaining artificials out of the basis where possible.
        for i in 0..m {
            if !sf.is_artificial[tab.basis[i]] {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..n {
                if sf.is_artificial[j] || tab.basis.contains(&j) {
                    continue;
                }
                let v = tab.t[(i, j)].abs();
                if v > PIVOT_TOL && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                tab.pivot(i, j);
            }
        }
    }

    // Phase 2.
    tab.set_costs(&sf.cost);
    let allowed: Vec<bool> = sf.is_artificial.iter().map(|&a| !a).collect();
    match tab.run(&allowed, max_pivots) {
        PhaseOutcome::Optimal => {}
        PhaseOutcome::Unbounded => return LpSolution::status_only(LpStatus::Unbounded, lp),
        PhaseOutcome::IterationLimit => {
            return LpSolution::status_only(LpStatus::IterationLimit, lp)
        }
    }

    // Recover primal and dual values from the optimal basis with a fresh
    // factorization rather than the accumulated tableau.
    let mut y_std = vec![0.0; n];
    for (i, &bv) in tab.basis.iter().enumerate() {
        y_std[bv] = tab.t[(i, n)].max(0.0);
    }
    let mut duals_std: Vec<f64> = (0..m)
        .map(|i| {
            let col = sf.initial_basis[i];
            // Reduced cost of the initial basic column is c_col − y_i.
            sf.cost[col] - tab.obj[col]
        })
        .collect();
    let basis_matrix = DMatrix::from_fn(m, m, |r, c| sf.a[(r, tab.basis[c])]);
    let lu = basis_matrix.clone().lu();
    if let Some(xb) = lu.solve(&DVector::from_vec(sf.b.clone())) {
        if xb.iter().all(|v| v.is_finite()) {
            for (i, &bv) in tab.basis.iter().enumerate() {
                y_std[bv] = xb[i].max(0.0);
            }
        }
    }
    let cb = DVector::from_fn(m, |i, _| sf.cost[tab.basis[i]]);
    if let Some(y) = basis_matrix.transpose().lu().solve(&cb) {
        if y.iter().all(|v| v.is_finite()) {
            duals_std = y.iter().copied().collect();
        }
    }

    let x: Vec<f64> = sf
        .var_maps
        .iter()
        .map(|vm| vm.shift + vm.cols.iter().map(|&(c, s)| s * y_std[c]).sum::<f64>())
        .collect();
    let sense = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let duals: Vec<f64> = (0..sf.user_rows)
        .map(|i| sense * sf.row_sign[i] * duals_std[i])
        .collect();
    let objective: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    let reduced_costs = (0..lp.num_vars())
        .map(|j| {
            lp.objective[j]
                - lp.rows
                    .iter()
                    .zip(&duals)
                    .map(|(r, y)| r.coefs[j] * y)
                    .sum::<f64>()
        })
        .collect();
    LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        duals,
        reduced_costs,
    }
}

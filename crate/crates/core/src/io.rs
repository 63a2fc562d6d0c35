//! Text formats: design files, the iteration table and CSV exports.

use std::fmt::Write as _;

use crate::af::AfRecord;
use crate::design::Design;
use crate::error::{Error, Result};
use crate::problem::DiscriminationProblem;
use crate::solver::IterationRecord;

/// Two columns `x w`, one support point per line. Numbers use the shortest
/// representation that reads back to the same `f64`.
pub fn format_design(design: &Design) -> String {
    let mut out = String::from("# x w\n");
    for (x, w) in design.iter() {
        let _ = writeln!(out, "{x} {w}");
    }
    out
}

/// Reads a design file. Blank lines and `#` comments are skipped. A sorted
/// design whose masses already sum to one is taken verbatim, so a file
/// written by [`format_design`] reads back bit for bit.
pub fn parse_design(text: &str) -> Result<Design> {
    let mut points = Vec::new();
    let mut masses = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::InvalidDesign(format!(
                "line {}: expected 2 columns `x w`, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| {
                Error::InvalidDesign(format!("line {}: not a number: `{s}`", lineno + 1))
            })
        };
        points.push(parse(fields[0])?);
        masses.push(parse(fields[1])?);
    }
    let sorted = points.windows(2).all(|w| w[0] < w[1]);
    let total: f64 = masses.iter().sum();
    let finite = points.iter().chain(&masses).all(|v| v.is_finite());
    if !points.is_empty()
        && sorted
        && finite
        && masses.iter().all(|&m| m > 0.0)
        && (total - 1.0).abs() <= 1e-12
    {
        return Ok(Design { points, masses });
    }
    Design::new(points, masses)
}

/// Six significant digits, switching to exponent notation outside
/// `[1e-3, 1e6)`.
fn sig6(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        return "0".into();
    }
    if !(1e-3..1e6).contains(&a) {
        return format!("{v:.5e}");
    }
    let decimals = (5 - a.log10().floor() as i32).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Points rounded to four decimals with trailing zeros dropped.
fn point_list(points: &[f64]) -> String {
    let items: Vec<String> = points
        .iter()
        .map(|&x| {
            let s = format!("{x:.4}");
            let s = s.trim_end_matches('0').trim_end_matches('.');
            if s == "-0" {
                "0".to_string()
            } else {
                s.to_string()
            }
        })
        .collect();
    format!("{{{}}}", items.join(", "))
}

/// Aligned table with columns `j`, `‖ε_{j,1}‖²`, `‖ε_{j,2}‖²`, `T(ξ_j)`, the
/// efficiency bound, the support and the reference set (reported only when
/// it changed).
pub fn iteration_table(log: &[IterationRecord]) -> String {
    let header = [
        "j",
        "|eps_j1|^2",
        "|eps_j2|^2",
        "T(xi_j)",
        "bound",
        "support",
        "reference",
    ];
    let mut rows: Vec<[String; 7]> = Vec::new();
    let mut previous: Option<&[f64]> = None;
    for r in log {
        let opt = |v: Option<f64>| v.map(sig6).unwrap_or_default();
        let reference = if previous == Some(r.reference.as_slice()) {
            String::new()
        } else {
            point_list(&r.reference)
        };
        previous = Some(&r.reference);
        rows.push([
            r.j.to_string(),
            sig6(r.sup_err_part1),
            opt(r.sup_err_part2),
            opt(r.t_value),
            r.eff_bound.map(|b| format!("{b:.4}")).unwrap_or_default(),
            if r.support.is_empty() {
                String::new()
            } else {
                point_list(&r.support)
            },
            reference,
        ]);
    }
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let mut s = String::new();
        for (k, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            // numbers right aligned, point lists left aligned
            if k < 5 {
                let _ = write!(s, "{cell:>w$}  ");
            } else {
                let _ = write!(s, "{cell:<w$}  ");
            }
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    for row in &rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

/// `s,sup_psi,T,bound` rows.
pub fn af_trajectory_csv(trajectory: &[AfRecord]) -> String {
    let mut out = String::from("s,sup_psi,T,bound\n");
    for r in trajectory {
        let _ = writeln!(out, "{},{},{},{}", r.s, r.sup_psi, r.t, r.bound);
    }
    out
}

/// Aligned variant of [`af_trajectory_csv`] for terminals.
pub fn af_table(trajectory: &[AfRecord]) -> String {
    let mut out = format!(
        "{:>4}  {:>12}  {:>12}  {:>8}\n",
        "s", "|psi|", "T(xi_s)", "bound"
    );
    for r in trajectory {
        let _ = writeln!(
            out,
            "{:>4}  {:>12}  {:>12}  {:>8.4}",
            r.s,
            sig6(r.sup_psi),
            sig6(r.t),
            r.bound
        );
    }
    out
}

/// `ψ(x)` on `grid_size` equispaced points with one extra column per
/// comparison holding its weighted contribution `p ε²`.
pub fn psi_curve_csv(
    problem: &DiscriminationProblem,
    theta_star: &[f64],
    grid_size: usize,
) -> Result<String> {
    problem.check_theta(theta_star)?;
    let mut out = String::from("x,psi");
    for c in 0..problem.d() {
        out.push(',');
        out.push_str(&problem.comparison_label(c));
    }
    out.push('\n');
    for x in problem.interval().linspace(grid_size) {
        let r = problem.residual(x, theta_star)?;
        let parts: Vec<f64> = problem
            .comparisons()
            .iter()
            .zip(&r)
            .map(|(c, e)| c.weight * e * e)
            .collect();
        let _ = write!(out, "{x},{}", parts.iter().sum::<f64>());
        for v in parts {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

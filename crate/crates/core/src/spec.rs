//! JSON problem files.
//!
//! ```json
//! {
//!   "design_space": {"min": -1, "max": 1},
//!   "models": [{"name": "linear", "family": "polynomial", "degree": 1}, ...],
//!   "fixed_params": {"quadratic": [1, 1, 1]},
//!   "comparisons": [{"fixed": "quadratic", "fitted": "linear", "weight": 0.5}],
//!   "init": {"theta": [[0, 0]], "reference": [-1, 0, 1], "fit_reference": false},
//!   "solver": {"max_iter": 50},
//!   "af": {"max_iter": 200}
//! }
//! ```
//!
//! `init.theta` lists one vector per comparison in file order.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::af::AfOptions;
use crate::design::Design;
use crate::error::{Error, Result};
use crate::model::RegressionModel;
use crate::problem::{ComparisonSpec, DiscriminationProblem, Interval};
use crate::solver::{SolverInit, SolverOptions};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalSpec {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    /// `polynomial`, `michaelis_menten`, `exponential_saturation`, `emax` or
    /// `logistic`.
    pub family: String,
    #[serde(default)]
    pub degree: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonEntry {
    pub fixed: String,
    pub fitted: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    #[serde(default)]
    pub theta: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub reference: Option<Vec<f64>>,
    #[serde(default)]
    pub fit_reference: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub max_iter: Option<usize>,
    pub eff_target: Option<f64>,
    pub grid_size: Option<usize>,
    pub tau_ext: Option<f64>,
    pub mass_tol: Option<f64>,
    pub merge_tol: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub points: Vec<f64>,
    pub masses: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AfSpec {
    pub max_iter: Option<usize>,
    pub eff_target: Option<f64>,
    pub grid_size: Option<usize>,
    pub mass_tol: Option<f64>,
    pub merge_tol: Option<f64>,
    pub init_design: Option<DesignSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub design_space: IntervalSpec,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub fixed_params: BTreeMap<String, Vec<f64>>,
    pub comparisons: Vec<ComparisonEntry>,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub af: AfSpec,
}

/// Parses a problem file. Errors name the offending field path and the
/// line and column.
pub fn parse_spec(text: &str) -> Result<ProblemSpec> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let inner = err.inner();
        let message = inner.to_string();
        let mut path = err.path().to_string();
        // a missing field is reported at its parent; point at the field itself
        if let Some(field) = message
            .strip_prefix("missing field `")
            .and_then(|rest| rest.split('`').next())
        {
            path = if path == "." {
                field.to_string()
            } else {
                format!("{path}.{field}")
            };
        }
        Error::Spec(format!("{path}: {message}"))
    })
}

fn build_model(idx: usize, spec: &ModelSpec) -> Result<RegressionModel> {
    let name = spec.name.clone();
    let model = match spec.family.as_str() {
        "polynomial" => match spec.degree {
            Some(k) => RegressionModel::polynomial(k, name),
            None => {
                return Err(Error::Spec(format!(
                    "models[{idx}].degree: required for polynomial models"
                )))
            }
        },
        "michaelis_menten" => RegressionModel::michaelis_menten(name),
        "exponential_saturation" => RegressionModel::exponential_saturation(name),
        "emax" => RegressionModel::emax(name),
        "logistic" => RegressionModel::logistic(name),
        other => {
            return Err(Error::Spec(format!(
                "models[{idx}].family: unknown family `{other}`"
            )))
        }
    };
    if spec.degree.is_some() && spec.family != "polynomial" {
        return Err(Error::Spec(format!(
            "models[{idx}].degree: only polynomial models take a degree"
        )));
    }
    Ok(model)
}

/// Builds the problem described by `spec`.
pub fn build_problem(spec: &ProblemSpec) -> Result<DiscriminationProblem> {
    let interval = Interval::new(spec.design_space.min, spec.design_space.max)
        .map_err(|e| Error::Spec(format!("design_space: {e}")))?;
    let mut index = BTreeMap::new();
    let mut models = Vec::with_capacity(spec.models.len());
    for (i, m) in spec.models.iter().enumerate() {
        if index.insert(m.name.as_str(), i).is_some() {
            return Err(Error::Spec(format!(
                "models[{i}].name: duplicate model `{}`",
                m.name
            )));
        }
        models.push(build_model(i, m)?);
    }
    let lookup = |field: &str, name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Spec(format!("{field}: unknown model `{name}`")))
    };
    let mut fixed = vec![None; models.len()];
    for (name, rho) in &spec.fixed_params {
        fixed[lookup(&format!("fixed_params.{name}"), name)?] = Some(rho.clone());
    }
    let comparisons = spec
        .comparisons
        .iter()
        .enumerate()
        .map(|(c, e)| {
            Ok(ComparisonSpec {
                fixed: lookup(&format!("comparisons[{c}].fixed"), &e.fixed)?,
                fitted: lookup(&format!("comparisons[{c}].fitted"), &e.fitted)?,
                weight: e.weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DiscriminationProblem::new(models, fixed, &comparisons, interval)
}

/// Position of each file comparison in the canonical order of `problem`.
fn canonical_positions(spec: &ProblemSpec, problem: &DiscriminationProblem) -> Vec<usize> {
    spec.comparisons
        .iter()
        .map(|e| {
            let label = |i: usize| problem.models()[i].label().to_string();
            problem
                .comparisons()
                .iter()
                .position(|c| label(c.fixed) == e.fixed && label(c.fitted) == e.fitted)
                .expect("comparison present after build")
        })
        .collect()
}

/// Initial parameter vector in canonical order, if the file provides one.
pub fn initial_theta(
    spec: &ProblemSpec,
    problem: &DiscriminationProblem,
) -> Result<Option<Vec<f64>>> {
    let Some(per_comparison) = &spec.init.theta else {
        return Ok(None);
    };
    if per_comparison.len() != spec.comparisons.len() {
        return Err(Error::Spec(format!(
            "init.theta: {} vectors for {} comparisons",
            per_comparison.len(),
            spec.comparisons.len()
        )));
    }
    let mut theta = vec![0.0; problem.n_params()];
    for (k, pos) in canonical_positions(spec, problem).into_iter().enumerate() {
        let cmp = &problem.comparisons()[pos];
        if per_comparison[k].len() != cmp.dim {
            return Err(Error::Spec(format!(
                "init.theta[{k}]: length {}, expected {}",
                per_comparison[k].len(),
                cmp.dim
            )));
        }
        theta[cmp.range()].copy_from_slice(&per_comparison[k]);
    }
    Ok(Some(theta))
}

/// Parameters used to seed criterion evaluations: the file's `init.theta`,
/// else the problem default.
pub fn seed_theta(spec: &ProblemSpec, problem: &DiscriminationProblem) -> Result<Vec<f64>> {
    match initial_theta(spec, problem)? {
        Some(t) => Ok(t),
        None => problem.default_theta(),
    }
}

pub fn solver_init(spec: &ProblemSpec, problem: &DiscriminationProblem) -> Result<SolverInit> {
    let mut theta = initial_theta(spec, problem)?;
    if theta.is_none() && spec.init.fit_reference {
        theta = Some(problem.default_theta()?);
    }
    Ok(SolverInit {
        theta,
        reference: spec.init.reference.clone(),
        fit_reference: spec.init.fit_reference,
    })
}

pub fn solver_options(spec: &ProblemSpec) -> SolverOptions {
    let s = &spec.solver;
    let mut o = SolverOptions::default();
    o.max_iter = s.max_iter.unwrap_or(o.max_iter);
    o.eff_target = s.eff_target.unwrap_or(o.eff_target);
    o.grid_size = s.grid_size.unwrap_or(o.grid_size);
    o.tau_ext = s.tau_ext.unwrap_or(o.tau_ext);
    o.mass_tol = s.mass_tol.unwrap_or(o.mass_tol);
    o.merge_tol = s.merge_tol.unwrap_or(o.merge_tol);
    o.fit.seed = s.seed.unwrap_or(o.fit.seed);
    o
}

pub fn af_options(spec: &ProblemSpec) -> AfOptions {
    let s = &spec.af;
    let mut o = AfOptions::default();
    o.max_iter = s.max_iter.unwrap_or(o.max_iter);
    o.eff_target = s.eff_target.unwrap_or(o.eff_target);
    o.grid_size = s.grid_size.unwrap_or(o.grid_size);
    o.mass_tol = s.mass_tol.unwrap_or(o.mass_tol);
    o.merge_tol = s.merge_tol.unwrap_or(o.merge_tol);
    o.fit.seed = spec.solver.seed.unwrap_or(o.fit.seed);
    o
}

pub fn af_init_design(spec: &ProblemSpec) -> Result<Option<Design>> {
    spec.af
        .init_design
        .as_ref()
        .map(|d| Design::new(d.points.clone(), d.masses.clone()))
        .transpose()
}

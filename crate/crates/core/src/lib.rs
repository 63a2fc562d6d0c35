//! T_p-optimal discriminating designs for competing regression models.
//!
//! The optimal design problem is solved through its dual, a vector-valued
//! Chebyshev approximation problem: a Remez-type iteration alternates damped
//! Newton steps on a reference set with a saddle point computation of the
//! design masses. The classical Atkinson-Fedorov exchange algorithm is
//! included as a baseline, and every design can be checked with the
//! equivalence theorem.

pub mod af;
pub mod approx;
pub mod criterion;
pub mod design;
pub mod error;
pub mod examples;
pub mod io;
pub mod linalg;
pub mod model;
pub mod problem;
pub mod simplex;
pub mod solver;
pub mod spec;

pub use design::Design;
pub use error::{Error, Result};
pub use model::{check_gradient, CustomModel, Family, RegressionModel};
pub use problem::{Comparison, ComparisonSpec, DiscriminationProblem, Interval};

//! Approximate designs: finitely supported probability measures on the
//! design interval.

use std::fmt;

use crate::error::{Error, Result};
use crate::problem::Interval;

pub const DEFAULT_MASS_TOL: f64 = 1e-8;
/// Relative to the interval length.
pub const DEFAULT_MERGE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub points: Vec<f64>,
    pub masses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    LengthMismatch { points: usize, masses: usize },
    Empty,
    NonPositiveMass { index: usize, mass: f64 },
    MassSum(f64),
    NotIncreasing { index: usize },
    OutsideInterval { index: usize, point: f64 },
    NotFinite { index: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LengthMismatch { points, masses } => {
                write!(f, "{points} points but {masses} masses")
            }
            Violation::Empty => write!(f, "empty support"),
            Violation::NonPositiveMass { index, mass } => {
                write!(f, "mass {mass} at index {index} is not positive")
            }
            Violation::MassSum(s) => write!(f, "mass sum ≠ 1 (got {s})"),
            Violation::NotIncreasing { index } => {
                write!(f, "points not strictly increasing at index {index}")
            }
            Violation::OutsideInterval { index, point } => {
                write!(f, "support outside X: point {point} at index {index}")
            }
            Violation::NotFinite { index } => write!(f, "non-finite entry at index {index}"),
        }
    }
}

impl Design {
    /// Builds a design from unsorted `(point, mass)` pairs: sorts by point,
    /// sums duplicated points and rescales the masses to total one. Masses
    /// must be non-negative with a positive total.
    pub fn new(points: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if points.len() != masses.len() {
            return Err(Error::InvalidDesign(format!(
                "{} points but {} masses",
                points.len(),
                masses.len()
            )));
        }
        if points.iter().chain(&masses).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDesign("non-finite entry".into()));
        }
        if masses.iter().any(|&m| m < 0.0) {
            return Err(Error::InvalidDesign("negative mass".into()));
        }
        let mut pairs: Vec<(f64, f64)> = points
            .into_iter()
            .zip(masses)
            .filter(|&(_, m)| m > 0.0)
            .collect();
        if pairs.is_empty() {
            return Err(Error::EmptyDesign);
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut points: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut masses: Vec<f64> = Vec::with_capacity(pairs.len());
        for (x, m) in pairs {
            if points.last() == Some(&x) {
                *masses.last_mut().unwrap() += m;
            } else {
                points.push(x);
                masses.push(m);
            }
        }
        let total: f64 = masses.iter().sum();
        masses.iter_mut().for_each(|m| *m /= total);
        Ok(Self { points, masses })
    }

    pub fn uniform(points: Vec<f64>) -> Result<Self> {
        let masses = vec![1.0; points.len()];
        Self::new(points, masses)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().copied().zip(self.masses.iter().copied())
    }

    /// Drops points with mass below `mass_tol`, merges neighbours closer than
    /// `merge_tol · interval_len` into their mass-weighted centroid and
    /// renormalizes. Idempotent for fixed tolerances: after a merge adjacent
    /// centroids are at least the merge distance apart.
    pub fn clean(&self, mass_tol: f64, merge_tol: f64, interval_len: f64) -> Result<Design> {
        let mut pairs: Vec<(f64, f64)> = self
            .iter()
            .filter(|&(_, m)| m >= mass_tol && m > 0.0)
            .collect();
        if pairs.is_empty() {
            return Err(Error::EmptyDesign);
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let dist = merge_tol * interval_len;
        let mut points: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut masses: Vec<f64> = Vec::with_capacity(pairs.len());
        for (x, m) in pairs {
            match (points.last_mut(), masses.last_mut()) {
                (Some(cx), Some(cm)) if x - *cx < dist => {
                    *cx = (*cx * *cm + x * m) / (*cm + m);
                    *cm += m;
                }
                _ => {
                    points.push(x);
                    masses.push(m);
                }
            }
        }
        let total: f64 = masses.iter().sum();
        masses.iter_mut().for_each(|m| *m /= total);
        Ok(Design { points, masses })
    }

    /// Reports every violated invariant; an empty list means the design is valid.
    pub fn validate(&self, interval: Interval) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.points.len() != self.masses.len() {
            out.push(Violation::LengthMismatch {
                points: self.points.len(),
                masses: self.masses.len(),
            });
            return out;
        }
        if self.points.is_empty() {
            out.push(Violation::Empty);
            return out;
        }
        for (index, (x, m)) in self.iter().enumerate() {
            if !x.is_finite() || !m.is_finite() {
                out.push(Violation::NotFinite { index });
                continue;
            }
            if m <= 0.0 {
                out.push(Violation::NonPositiveMass { index, mass: m });
            }
            if !interval.contains(x) {
                out.push(Violation::OutsideInterval { index, point: x });
            }
            if index > 0 && self.points[index - 1] >= x {
                out.push(Violation::NotIncreasing { index });
            }
        }
        let sum: f64 = self.masses.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            out.push(Violation::MassSum(sum));
        }
        out
    }

    pub fn is_valid(&self, interval: Interval) -> bool {
        self.validate(interval).is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const UNIT: Interval = Interval {
        min: -1.0,
        max: 1.0,
    };

    #[test]
    fn clean_is_noop_on_clean_design() {
        let d = Design::new(vec![-1.0, 0.0, 1.0], vec![0.25, 0.5, 0.25]).unwrap();
        assert_eq!(d.clean(1e-8, 1e-8, 2.0).unwrap(), d);
    }

    #[test]
    fn clean_prunes_light_points() {
        let d = Design {
            points: vec![0.0, 1e-9, 1.0],
            masses: vec![0.5, 1e-12, 0.5],
        };
        let c = d.clean(1e-8, 0.0, 1.0).unwrap();
        assert_eq!(c.points, vec![0.0, 1.0]);
        assert_eq!(c.masses, vec![0.5, 0.5]);
    }

    #[test]
    fn clean_merges_neighbours() {
        let d = Design::new(vec![0.99, 1.0], vec![0.5, 0.5]).unwrap();
        let c = d.clean(1e-8, 0.01, UNIT.len()).unwrap();
        assert_eq!(c.len(), 1);
        assert_relative_eq!(c.points[0], 0.995, epsilon = 1e-15);
        assert_relative_eq!(c.masses[0], 1.0);
    }

    #[test]
    fn clean_everything_is_an_error() {
        let d = Design::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(d.clean(0.9, 0.0, 1.0), Err(Error::EmptyDesign));
    }

    #[test]
    fn validate_examples() {
        let d = Design::new(vec![-1.0, 0.0, 1.0], vec![0.25, 0.5, 0.25]).unwrap();
        assert!(d.validate(UNIT).is_empty());

        let heavy = Design {
            points: vec![-0.5, 0.5],
            masses: vec![0.6, 0.6],
        };
        let v = heavy.validate(UNIT);
        assert!(matches!(v.as_slice(), [Violation::MassSum(_)]));
        assert!(v[0].to_string().starts_with("mass sum ≠ 1"));

        let outside = Design {
            points: vec![0.0, 2.0],
            masses: vec![0.5, 0.5],
        };
        let v = outside.validate(UNIT);
        assert!(matches!(
            v.as_slice(),
            [Violation::OutsideInterval { index: 1, .. }]
        ));
        assert!(v[0].to_string().starts_with("support outside X"));
    }

    #[test]
    fn new_sorts_and_merges_duplicates() {
        let d = Design::new(vec![1.0, -1.0, 1.0], vec![1.0, 2.0, 1.0]).unwrap();
        assert_eq!(d.points, vec![-1.0, 1.0]);
        assert_eq!(d.masses, vec![0.5, 0.5]);
    }

    fn arb_design() -> impl Strategy<Value = Design> {
        prop::collection::vec((-1.0f64..1.0, 1e-10f64..1.0), 1..12).prop_map(|pairs| {
            let (p, m): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            Design::new(p, m).unwrap()
        })
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(d in arb_design(), mass_tol in 0.0f64..0.05, merge_tol in 0.0f64..0.1) {
            if let Ok(once) = d.clean(mass_tol, merge_tol, 2.0) {
                let twice = once.clean(mass_tol, merge_tol, 2.0).unwrap();
                prop_assert_eq!(once.len(), twice.len());
                for (a, b) in once.iter().zip(twice.iter()) {
                    prop_assert!((a.0 - b.0).abs() < 1e-12);
                    prop_assert!((a.1 - b.1).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn clean_keeps_a_probability_measure(d in arb_design(), merge_tol in 0.0f64..0.2) {
            let c = d.clean(1e-8, merge_tol, 2.0).unwrap();
            prop_assert!(c.validate(UNIT).is_empty());
        }
    }
}

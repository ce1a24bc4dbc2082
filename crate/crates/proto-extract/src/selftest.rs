//! Built-in checks against values that can be worked out by hand.

use std::fmt;

use proto_extract_core::barycenter::{fit_prototypes, PrototypeFitConfig};
use proto_extract_core::counterfactual::mccf_l2;
use proto_extract_core::oracle::LinearModel;
use proto_extract_core::ot::{dirac_distance_sq, wasserstein2_sq, DiscreteDistribution};
use proto_extract_core::surrogate::fidelity;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedValues {
    /// Squared distance from the origin to a Dirac at (3, 4).
    pub dirac_sq: f64,
    /// W₂² between uniform {0, 1} and uniform {0.5, 1.5}.
    pub shifted_1d: f64,
    /// First coordinate of q₁ for Diracs at ∓e₁ with a counterfactual at 0.
    pub mirror_fixed_point: f64,
    /// Counterfactual of (−2, 0) under w = (1, 0), b = 0, margin 0.05.
    pub projection: f64,
    /// Fidelity of a model against itself.
    pub self_fidelity: f64,
}

pub const EXPECTED: ExpectedValues = ExpectedValues {
    dirac_sq: 25.0,
    shifted_1d: 0.25,
    mirror_fixed_point: 2.0 / 3.0,
    projection: 0.200_670_695_462_151_24,
    self_fidelity: 1.0,
};

pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub expected: f64,
    pub got: Result<f64, String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        matches!(self.got, Ok(v) if (v - self.expected).abs() <= TOLERANCE)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "pass" } else { "FAIL" };
        match &self.got {
            Ok(v) => write!(
                f,
                "{status}  {:<22} expected {:.12}  got {v:.12}",
                self.name, self.expected
            ),
            Err(e) => write!(
                f,
                "{status}  {:<22} expected {:.12}  error: {e}",
                self.name, self.expected
            ),
        }
    }
}

fn run(f: impl FnOnce() -> proto_extract_core::Result<f64>) -> Result<f64, String> {
    f().map_err(|e| e.to_string())
}

pub fn run_checks(expected: &ExpectedValues) -> Vec<Check> {
    vec![
        Check {
            name: "dirac distance",
            expected: expected.dirac_sq,
            got: run(|| {
                let q = DiscreteDistribution::dirac(vec![3.0, 4.0])?;
                dirac_distance_sq(&[0.0, 0.0], &q)
            }),
        },
        Check {
            name: "shifted 1-d transport",
            expected: expected.shifted_1d,
            got: run(|| {
                let a = DiscreteDistribution::uniform(vec![vec![0.0], vec![1.0]])?;
                let b = DiscreteDistribution::uniform(vec![vec![0.5], vec![1.5]])?;
                wasserstein2_sq(&a, &b)
            }),
        },
        Check {
            name: "mirror fixed point",
            expected: expected.mirror_fixed_point,
            got: run(|| {
                let cfg = PrototypeFitConfig {
                    k: 1,
                    ..Default::default()
                };
                let pair = fit_prototypes(
                    &[vec![-1.0, 0.0]],
                    &[vec![1.0, 0.0]],
                    &[vec![0.0, 0.0]],
                    &cfg,
                )?;
                Ok(pair.q1.support[0][0])
            }),
        },
        Check {
            name: "counterfactual",
            expected: expected.projection,
            got: run(|| {
                let m = LinearModel::new(vec![1.0, 0.0], 0.0)?;
                Ok(mccf_l2(&m, &[-2.0, 0.0], 0.05)?[0])
            }),
        },
        Check {
            name: "self fidelity",
            expected: expected.self_fidelity,
            got: run(|| {
                let m = LinearModel::new(vec![1.0, -2.0], 0.3)?;
                let refs: Vec<Vec<f64>> = (0..25)
                    .map(|i| vec![(i % 5) as f64 / 4.0 - 0.5, (i / 5) as f64 / 4.0 - 0.5])
                    .collect();
                fidelity(&m, &m, &refs)
            }),
        },
    ]
}

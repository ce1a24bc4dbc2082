//! Surrogate models built from query answers, and fidelity.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::barycenter::{fit_prototypes, PrototypeFitConfig, PrototypePair};
use crate::error::{Error, Result};
use crate::oracle::{train_logistic, Label, LinearModel, QueryResponse, Target, TrainConfig};
use crate::ot::dirac_distance_sq;
use crate::Point;

/// Anything that assigns a hard label to a point.
pub trait Classifier {
    fn classify(&self, x: &[f64]) -> Result<Label>;
}

impl Classifier for LinearModel {
    fn classify(&self, x: &[f64]) -> Result<Label> {
        self.predict_label(x)
    }
}

impl<F> Classifier for F
where
    F: Fn(&[f64]) -> Result<Label>,
{
    fn classify(&self, x: &[f64]) -> Result<Label> {
        self(x)
    }
}

/// Query answers split by label: `d0` (0), `d1` (1) and the counterfactuals
/// `d_cf` (soft label 0.5), one per class-0 answer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryDataset {
    pub d0: Vec<Point>,
    pub d1: Vec<Point>,
    pub d_cf: Vec<Point>,
}

impl QueryDataset {
    pub fn queries(&self) -> usize {
        self.d0.len() + self.d1.len()
    }
}

pub fn build_query_dataset<'a, I>(responses: I) -> Result<QueryDataset>
where
    I: IntoIterator<Item = (&'a [f64], &'a QueryResponse)>,
{
    let mut qd = QueryDataset::default();
    for (x, r) in responses {
        match (r.label, &r.counterfactual) {
            (Label::Zero, Some(cf)) => {
                qd.d0.push(x.to_vec());
                qd.d_cf.push(cf.clone());
            }
            (Label::Zero, None) => {
                return Err(Error::MalformedResponse("class 0 without counterfactual"))
            }
            (Label::One, None) => qd.d1.push(x.to_vec()),
            (Label::One, Some(_)) => {
                return Err(Error::MalformedResponse("class 1 with counterfactual"))
            }
        }
    }
    Ok(qd)
}

/// Nearest-prototype classifier over `(Q₀, Q₁)` with abstention margin `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSurrogate {
    pub prototypes: PrototypePair,
    pub tau: f64,
}

impl PrototypeSurrogate {
    pub fn fit(qd: &QueryDataset, cfg: &PrototypeFitConfig, tau: f64) -> Result<Self> {
        if !(tau >= 0.0) {
            return Err(Error::InvalidConfig("tau must be non-negative".into()));
        }
        let prototypes = fit_prototypes(&qd.d0, &qd.d1, &qd.d_cf, cfg)?;
        Ok(Self { prototypes, tau })
    }

    /// `W₂(δ_x, Q₀)` and `W₂(δ_x, Q₁)`.
    pub fn distances(&self, x: &[f64]) -> Result<(f64, f64)> {
        let a = libm::sqrt(dirac_distance_sq(x, &self.prototypes.q0)?);
        let b = libm::sqrt(dirac_distance_sq(x, &self.prototypes.q1)?);
        Ok((a, b))
    }

    /// Class 0 if `a < b − τ`, class 1 if `b < a − τ`; inside the band the
    /// nearer prototype wins and exact ties go to class 1.
    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        let (a, b) = self.distances(x)?;
        let label = if a < b - self.tau {
            Label::Zero
        } else if b < a - self.tau {
            Label::One
        } else {
            Label::from(b <= a)
        };
        Ok(label)
    }
}

impl Classifier for PrototypeSurrogate {
    fn classify(&self, x: &[f64]) -> Result<Label> {
        self.predict(x)
    }
}

/// Logistic regression on `d0` labelled 0 and `d1 ∪ d_cf` labelled 1.
pub fn fit_baseline1(qd: &QueryDataset, cfg: &TrainConfig) -> Result<LinearModel> {
    let mut features = Vec::with_capacity(qd.d0.len() + qd.d1.len() + qd.d_cf.len());
    let mut labels = Vec::with_capacity(features.capacity());
    for x in &qd.d0 {
        features.push(x.clone());
        labels.push(Label::Zero);
    }
    for x in qd.d1.iter().chain(&qd.d_cf) {
        features.push(x.clone());
        labels.push(Label::One);
    }
    train_logistic(&features, &labels, cfg)
}

/// Fraction of `d_ref` on which `surrogate` agrees with the target's label.
pub fn fidelity<T, S>(target: &T, surrogate: &S, d_ref: &[Point]) -> Result<f64>
where
    T: Target + ?Sized,
    S: Classifier + ?Sized,
{
    if d_ref.is_empty() {
        return Err(Error::Empty("reference set"));
    }
    let mut agree = 0usize;
    for x in d_ref {
        if target.predict_label(x)? == surrogate.classify(x)? {
            agree += 1;
        }
    }
    Ok(agree as f64 / d_ref.len() as f64)
}

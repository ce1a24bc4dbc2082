//! The target model and its query interface.
//!
//! Extraction code only ever sees an [`Oracle`]: it answers with a label and,
//! for class-0 predictions only, a counterfactual. The wrapped model is not
//! reachable through it.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::counterfactual::{self, CfConfig};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, dot, sigmoid};
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Zero,
    One,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Zero => 0,
            Label::One => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.as_u8())
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

impl TryFrom<u8> for Label {
    type Error = &'static str;
    fn try_from(v: u8) -> core::result::Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Zero),
            1 => Ok(Label::One),
            _ => Err("label must be 0 or 1"),
        }
    }
}

impl From<bool> for Label {
    fn from(b: bool) -> Self {
        if b {
            Label::One
        } else {
            Label::Zero
        }
    }
}

/// A probabilistic binary classifier.
pub trait Target {
    fn dim(&self) -> usize;

    fn predict_proba(&self, x: &[f64]) -> Result<f64>;

    /// Class 1 iff the probability is at least 0.5.
    fn predict_label(&self, x: &[f64]) -> Result<Label> {
        Ok(Label::from(self.predict_proba(x)? >= 0.5))
    }
}

/// Logistic regression: `σ(w·x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("weights"));
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self { weights, bias })
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    /// The point on the decision boundary for 1-D models.
    pub fn boundary_1d(&self) -> Option<f64> {
        match self.weights.as_slice() {
            [w] if *w != 0.0 => Some(-self.bias / w),
            _ => None,
        }
    }
}

impl Target for LinearModel {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.decision(x)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Coefficient of `½‖w‖²` added to the mean log-loss; the bias is not
    /// penalized.
    pub l2: f64,
    pub max_iters: usize,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2: 1e-2,
            max_iters: 200,
            tol: 1e-10,
        }
    }
}

fn mean_loss(features: &[Point], y: &[f64], theta: &[f64], l2: f64) -> f64 {
    let d = theta.len() - 1;
    let n = features.len() as f64;
    let mut loss = 0.0;
    for (x, &t) in features.iter().zip(y) {
        let z = dot(&theta[..d], x) + theta[d];
        // log(1 + e^z) - t z, computed stably
        let softplus = if z > 0.0 {
            z + libm::log1p(libm::exp(-z))
        } else {
            libm::log1p(libm::exp(z))
        };
        loss += softplus - t * z;
    }
    loss / n + 0.5 * l2 * dot(&theta[..d], &theta[..d])
}

/// Fits L2-regularized logistic regression by damped Newton iterations from
/// a zero start. Full-batch and deterministic.
pub fn train_logistic(
    features: &[Point],
    labels: &[Label],
    cfg: &TrainConfig,
) -> Result<LinearModel> {
    if features.len() != labels.len() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "{} rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if features.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if !(cfg.l2 >= 0.0) {
        return Err(Error::InvalidConfig("l2 must be non-negative".into()));
    }
    let d = features[0].len();
    if d == 0 {
        return Err(Error::Empty("features"));
    }
    for x in features {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
    }
    let has0 = labels.contains(&Label::Zero);
    let has1 = labels.contains(&Label::One);
    if !(has0 && has1) {
        return Err(Error::SingleClass);
    }

    let y: Vec<f64> = labels.iter().map(|l| l.as_f64()).collect();
    let n = features.len() as f64;
    let p = d + 1;
    let mut theta = vec![0.0; p];
    let mut loss = mean_loss(features, &y, &theta, cfg.l2);

    for _ in 0..cfg.max_iters {
        let mut grad = vec![0.0; p];
        let mut hess = vec![0.0; p * p];
        for (x, &t) in features.iter().zip(&y) {
            let prob = sigmoid(dot(&theta[..d], x) + theta[d]);
            let r = prob - t;
            let s = prob * (1.0 - prob);
            for a in 0..p {
                let xa = if a < d { x[a] } else { 1.0 };
                grad[a] += r * xa;
                for b in 0..=a {
                    let xb = if b < d { x[b] } else { 1.0 };
                    hess[a * p + b] += s * xa * xb;
                }
            }
        }
        for a in 0..p {
            grad[a] /= n;
            for b in 0..=a {
                hess[a * p + b] /= n;
                hess[b * p + a] = hess[a * p + b];
            }
        }
        for a in 0..d {
            grad[a] += cfg.l2 * theta[a];
            hess[a * p + a] += cfg.l2;
        }
        if libm::sqrt(dot(&grad, &grad)) <= cfg.tol {
            break;
        }

        // A small ridge keeps the solve well-posed on separable data.
        for a in 0..p {
            hess[a * p + a] += 1e-12;
        }
        let dir = cholesky_solve(&hess, &grad).unwrap_or_else(|| grad.clone());
        let slope = dot(&grad, &dir);
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, g)| t - step * g).collect();
            let cand_loss = mean_loss(features, &y, &cand, cfg.l2);
            if cand_loss <= loss - 1e-4 * step * slope {
                theta = cand;
                loss = cand_loss;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }

    let bias = theta.pop().unwrap();
    LinearModel::new(theta, bias)
}

/// Answer to a single query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub label: Label,
    /// Present exactly when `label` is class 0.
    pub counterfactual: Option<Point>,
}

/// Query-only access to a target model and its counterfactual generator.
pub struct Oracle<'a> {
    model: &'a LinearModel,
    cf: &'a CfConfig,
    counter: AtomicUsize,
}

impl<'a> Oracle<'a> {
    pub fn new(model: &'a LinearModel, cf: &'a CfConfig) -> Self {
        Self {
            model,
            cf,
            counter: AtomicUsize::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Number of `query` calls so far.
    pub fn queries(&self) -> usize {
        self.counter.load(Ordering::SeqCst)
    }

    /// Labels `x`; class-0 answers carry a counterfactual that the target
    /// classifies as 1.
    pub fn query(&self, x: &[f64]) -> Result<QueryResponse> {
        self.counter.fetch_add(1, Ordering::SeqCst);
        let label = self.model.predict_label(x)?;
        if label == Label::One {
            return Ok(QueryResponse {
                label,
                counterfactual: None,
            });
        }
        let cf = counterfactual::generate(self.model, x, self.cf)?;
        if self.model.predict_label(&cf)? != Label::One {
            return Err(Error::InvalidCounterfactual { x: x.to_vec() });
        }
        Ok(QueryResponse {
            label,
            counterfactual: Some(cf),
        })
    }
}

//! Counterfactual generators for class-0 inputs.
//!
//! All generators target class 1 and must return a point the model
//! classifies as 1. For linear models the L2 minimum-cost counterfactual has
//! a closed form ([`mccf_l2`]); [`mccf_iterative`] runs the penalized search
//! `min (f(x') − 1)² + λ·d(x, x')` with a decreasing λ schedule.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, logit, norm_sq, sigmoid, sq_dist};
use crate::oracle::{Label, LinearModel, Target};
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfCost {
    L2,
    L1,
    NearestNeighbor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfConfig {
    pub cost: CfCost,
    /// Use the iterative search for L2 instead of the closed form.
    pub iterative: bool,
    /// Counterfactuals must reach probability `0.5 + target_margin`.
    pub target_margin: f64,
    pub lambda_init: f64,
    /// λ is divided by this after every round of the schedule.
    pub lambda_multiplier: f64,
    pub max_iters: usize,
    pub step_size: f64,
    /// Class-1 candidates for [`CfCost::NearestNeighbor`].
    #[serde(skip)]
    pub neighbor_pool: Option<Vec<Point>>,
    /// Clamp counterfactuals to `[0, 1]` and re-check validity.
    pub clip_unit: bool,
}

impl Default for CfConfig {
    fn default() -> Self {
        Self {
            cost: CfCost::L2,
            iterative: false,
            target_margin: 0.05,
            lambda_init: 0.1,
            lambda_multiplier: 2.0,
            max_iters: 20_000,
            step_size: 0.1,
            neighbor_pool: None,
            clip_unit: false,
        }
    }
}

impl CfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_margin > 0.0 && self.target_margin < 0.5) {
            return Err(Error::InvalidConfig(
                "target_margin must lie in (0, 0.5)".into(),
            ));
        }
        if !(self.lambda_multiplier > 1.0) {
            return Err(Error::InvalidConfig(
                "lambda_multiplier must exceed 1".into(),
            ));
        }
        if !(self.lambda_init > 0.0) || !(self.step_size > 0.0) {
            return Err(Error::InvalidConfig(
                "lambda_init and step_size must be positive".into(),
            ));
        }
        Ok(())
    }

    fn target_proba(&self) -> f64 {
        0.5 + self.target_margin
    }
}

/// Closest point (in L2) to `x` whose predicted probability is at least
/// `0.5 + margin`: the projection of `x` onto that level set of `w·x + b`.
/// Inputs already past the level set are returned unchanged.
pub fn mccf_l2(model: &LinearModel, x: &[f64], margin: f64) -> Result<Point> {
    let z = model.decision(x)?;
    let wn = norm_sq(&model.weights);
    if wn < 1e-24 {
        return Err(Error::DegenerateModel);
    }
    let target = logit(0.5 + margin);
    let t = (target - z).max(0.0) / wn;
    Ok(x.iter()
        .zip(&model.weights)
        .map(|(xi, wi)| xi + t * wi)
        .collect())
}

fn distance(cost: CfCost, x: &[f64], y: &[f64]) -> f64 {
    match cost {
        CfCost::L1 => x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(),
        _ => sq_dist(x, y),
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Penalized counterfactual search. The L2 cost uses the squared distance
/// and plain gradient steps; the L1 cost uses proximal (soft-threshold)
/// steps so untouched coordinates stay exactly at their input values. Once
/// an iterate becomes valid the crossing point with the target level set is
/// located by bisection along the last step.
pub fn mccf_iterative(model: &LinearModel, x: &[f64], cfg: &CfConfig) -> Result<Point> {
    cfg.validate()?;
    if !matches!(cfg.cost, CfCost::L2 | CfCost::L1) {
        return Err(Error::InvalidConfig(
            "iterative search supports L2 and L1 costs".into(),
        ));
    }
    if model.predict_label(x)? != Label::Zero {
        return Err(Error::AlreadyDesiredClass);
    }
    if norm_sq(&model.weights) < 1e-24 {
        return Err(Error::DegenerateModel);
    }
    let target = cfg.target_proba();
    let w = &model.weights;
    let objective = |p: &[f64], lambda: f64| {
        let f = sigmoid(dot(w, p) + model.bias);
        (f - 1.0) * (f - 1.0) + lambda * distance(cfg.cost, x, p)
    };

    let mut cur = x.to_vec();
    let mut lambda = cfg.lambda_init;
    let mut iters = 0;
    while iters < cfg.max_iters {
        let mut eta = cfg.step_size;
        let mut val = objective(&cur, lambda);
        while iters < cfg.max_iters {
            iters += 1;
            let f = sigmoid(dot(w, &cur) + model.bias);
            let coef = 2.0 * (f - 1.0) * f * (1.0 - f);
            let cand: Point = match cfg.cost {
                CfCost::L1 => cur
                    .iter()
                    .zip(w)
                    .zip(x)
                    .map(|((c, wi), xi)| {
                        xi + soft_threshold(c - eta * coef * wi - xi, eta * lambda)
                    })
                    .collect(),
                _ => cur
                    .iter()
                    .zip(w)
                    .zip(x)
                    .map(|((c, wi), xi)| c - eta * (coef * wi + 2.0 * lambda * (c - xi)))
                    .collect(),
            };
            let cand_val = objective(&cand, lambda);
            if cand_val <= val {
                let moved = sq_dist(&cand, &cur);
                let prev = core::mem::replace(&mut cur, cand);
                val = cand_val;
                eta *= 1.2;
                if sigmoid(dot(w, &cur) + model.bias) >= target {
                    return Ok(bisect_crossing(model, &prev, &cur, target));
                }
                if moved < 1e-24 {
                    break;
                }
            } else {
                eta *= 0.5;
                if eta < 1e-16 {
                    break;
                }
            }
        }
        lambda /= cfg.lambda_multiplier;
    }
    Err(Error::CounterfactualNotFound { x: x.to_vec() })
}

/// Point on the segment `lo → hi` at the target probability, biased to the
/// valid side.
fn bisect_crossing(model: &LinearModel, lo: &[f64], hi: &[f64], target: f64) -> Point {
    let at = |t: f64| -> Point { lo.iter().zip(hi).map(|(a, b)| a + t * (b - a)).collect() };
    let proba = |p: &[f64]| sigmoid(dot(&model.weights, p) + model.bias);
    let (mut a, mut b) = (0.0, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (a + b);
        if proba(&at(mid)) >= target {
            b = mid;
        } else {
            a = mid;
        }
    }
    at(b)
}

/// The pool point closest to `x` in Euclidean distance; ties go to the
/// lowest index.
pub fn nearest_neighbor_cf(x: &[f64], pool: &[Point]) -> Result<Point> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in pool.iter().enumerate() {
        if p.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: p.len(),
            });
        }
        let d = sq_dist(p, x);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| pool[i].clone())
        .ok_or(Error::Empty("neighbor pool"))
}

/// Counterfactual for `x` according to `cfg`.
pub fn generate(model: &LinearModel, x: &[f64], cfg: &CfConfig) -> Result<Point> {
    let mut cf = match cfg.cost {
        CfCost::L2 if !cfg.iterative => mccf_l2(model, x, cfg.target_margin)?,
        CfCost::L2 | CfCost::L1 => mccf_iterative(model, x, cfg)?,
        CfCost::NearestNeighbor => {
            let pool = cfg
                .neighbor_pool
                .as_deref()
                .ok_or(Error::Empty("neighbor pool"))?;
            nearest_neighbor_cf(x, pool)?
        }
    };
    if cfg.clip_unit {
        cf.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        if model.predict_label(&cf)? != Label::One {
            return Err(Error::InvalidCounterfactual { x: x.to_vec() });
        }
    }
    Ok(cf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn closed_form_projection() {
        let m = LinearModel::new(vec![1.0, 0.0], 0.0).unwrap();
        let cf = mccf_l2(&m, &[-2.0, 0.0], 0.05).unwrap();
        let expected = logit(0.5 + 0.05);
        assert!((expected - libm::log(0.55 / 0.45)).abs() < 1e-15);
        assert!((cf[0] - expected).abs() < 1e-15);
        assert!((cf[0] - 0.2007).abs() < 1e-4);
        assert_eq!(cf[1], 0.0);
        assert_eq!(m.predict_label(&cf).unwrap(), Label::One);

        let on_line = [expected, 0.7];
        assert_eq!(mccf_l2(&m, &on_line, 0.05).unwrap(), on_line.to_vec());
    }

    #[test]
    fn degenerate_model_rejected() {
        let m = LinearModel::new(vec![0.0, 0.0], -1.0).unwrap();
        assert_eq!(mccf_l2(&m, &[0.0, 0.0], 0.05), Err(Error::DegenerateModel));
    }

    #[test]
    fn iterative_l2_matches_closed_form() {
        let m = LinearModel::new(vec![2.0, -1.0, 0.5], -0.3).unwrap();
        let x = [-0.8, 0.4, 0.1];
        let cfg = CfConfig {
            iterative: true,
            ..Default::default()
        };
        let a = mccf_iterative(&m, &x, &cfg).unwrap();
        let b = mccf_l2(&m, &x, cfg.target_margin).unwrap();
        assert!(libm::sqrt(sq_dist(&a, &b)) < 1e-3);
        assert_eq!(m.predict_label(&a).unwrap(), Label::One);
    }

    #[test]
    fn iterative_l1_is_sparse_on_axis_model() {
        let m = LinearModel::new(vec![1.0, 0.0], 0.0).unwrap();
        let x = [-1.5, 0.3];
        let cfg = CfConfig {
            cost: CfCost::L1,
            ..Default::default()
        };
        let cf = mccf_iterative(&m, &x, &cfg).unwrap();
        assert!((cf[1] - 0.3).abs() < 1e-6);
        assert!(m.predict_proba(&cf).unwrap() >= 0.55);
    }

    #[test]
    fn iterative_rejects_class_one_inputs() {
        let m = LinearModel::new(vec![1.0], 0.0).unwrap();
        assert_eq!(
            mccf_iterative(&m, &[1.0], &CfConfig::default()),
            Err(Error::AlreadyDesiredClass)
        );
    }

    #[test]
    fn nearest_neighbor_rules() {
        assert_eq!(
            nearest_neighbor_cf(&[0.0, 0.0], &[vec![5.0, 5.0]]).unwrap(),
            vec![5.0, 5.0]
        );
        assert_eq!(
            nearest_neighbor_cf(&[0.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap(),
            vec![1.0, 0.0]
        );
        let pool = [vec![0.0, 1.0], vec![1.0, 0.0], vec![-1.0, 0.0]];
        for _ in 0..3 {
            assert_eq!(
                nearest_neighbor_cf(&[0.0, 0.0], &pool).unwrap(),
                vec![0.0, 1.0]
            );
        }
        assert_eq!(
            nearest_neighbor_cf(&[0.0], &[]),
            Err(Error::Empty("neighbor pool"))
        );
    }

    #[test]
    fn clipping_rechecks_validity() {
        // The boundary sits outside the unit cube, so clipping breaks validity.
        let m = LinearModel::new(vec![1.0], -2.0).unwrap();
        let cfg = CfConfig {
            clip_unit: true,
            ..Default::default()
        };
        assert!(matches!(
            generate(&m, &[0.5], &cfg),
            Err(Error::InvalidCounterfactual { .. })
        ));
        let m = LinearModel::new(vec![1.0], -0.5).unwrap();
        let cf = generate(&m, &[0.1], &cfg).unwrap();
        assert!((0.0..=1.0).contains(&cf[0]));
    }

    #[test]
    fn config_validation() {
        let bad = CfConfig {
            target_margin: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = CfConfig {
            lambda_multiplier: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}

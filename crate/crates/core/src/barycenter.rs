//! Counterfactual-aware class prototypes.
//!
//! Each class prototype `Q_c` is a free-support measure with `k` uniform
//! atoms. The joint objective is
//!
//! ```text
//! Σ_c [ W₂²(Q_c, P_c) + λ·W₂²(Q_c, P_cf) ] + γ·(W₂(Q₀, P_cf) − W₂(Q₁, P_cf))²
//! ```
//!
//! and is minimized by alternating a free-support fixed-point step per class
//! (barycentric projections onto `P_c` and `P_cf`, blended by `λ`) with one
//! envelope-gradient step on the symmetry term.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sq_dist;
use crate::ot::{barycentric_projection, solve_exact_transport, DiscreteDistribution};
use crate::Point;

/// W₂ values below this are treated as zero in the symmetry gradient.
pub const W2_SINGULAR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrototypeFitConfig {
    /// Atoms per prototype; clipped to the class sample count.
    pub k: usize,
    /// Counterfactual weight shared by both classes.
    pub lambda_c: f64,
    /// Per-class overrides of `lambda_c` (class 0, class 1).
    pub lambda_per_class: Option<[f64; 2]>,
    /// Symmetry coefficient.
    pub gamma: f64,
    pub max_outer_iters: usize,
    /// Relative objective change that stops the outer loop.
    pub tol: f64,
    /// Gradient step size for the symmetry term.
    pub reg_step: f64,
    pub seed: u64,
}

impl Default for PrototypeFitConfig {
    fn default() -> Self {
        Self {
            k: 50,
            lambda_c: 0.5,
            lambda_per_class: None,
            gamma: 0.3,
            max_outer_iters: 100,
            tol: 1e-5,
            reg_step: 0.05,
            seed: 0,
        }
    }
}

impl PrototypeFitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(self.reg_step > 0.0) {
            return bad("reg_step must be positive");
        }
        if self.max_outer_iters == 0 {
            return bad("max_outer_iters must be at least 1");
        }
        if !(self.gamma >= 0.0) {
            return bad("gamma must be non-negative");
        }
        let lambdas = self.lambda_per_class.unwrap_or([self.lambda_c; 2]);
        if lambdas.iter().any(|l| !(*l >= 0.0)) {
            return bad("lambda_c must be non-negative");
        }
        Ok(())
    }

    pub fn lambda(&self, class: usize) -> f64 {
        self.lambda_per_class.map_or(self.lambda_c, |l| l[class])
    }
}

/// The fitted pair `(Q₀, Q₁)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypePair {
    pub q0: DiscreteDistribution,
    pub q1: DiscreteDistribution,
    /// Joint objective at initialization followed by its value after every
    /// outer iteration.
    pub objective_trace: Vec<f64>,
}

impl PrototypePair {
    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

/// Initial support for a prototype: all samples when `k ≥ n`, otherwise
/// `k` samples picked by k-means++ seeding. Weights are uniform.
pub fn init_support(samples: &[Point], k: usize, seed: u64) -> Result<DiscreteDistribution> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if k >= samples.len() {
        return DiscreteDistribution::uniform(samples.to_vec());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples.len();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = samples
        .iter()
        .map(|p| sq_dist(p, &samples[first]))
        .collect();

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `acc` just short of `target`.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // Only duplicates of chosen points remain.
            taken.iter().position(|t| !t).unwrap()
        };
        taken[next] = true;
        chosen.push(next);
        for (dist, p) in d2.iter_mut().zip(samples) {
            let d = sq_dist(p, &samples[next]);
            if d < *dist {
                *dist = d;
            }
        }
        d2[next] = 0.0;
    }

    DiscreteDistribution::uniform(chosen.into_iter().map(|i| samples[i].clone()).collect())
}

/// `W₂²(q, p_class) + λ·W₂²(q, p_cf)`; the second term is dropped when
/// there are no counterfactuals.
pub fn class_objective(
    q: &DiscreteDistribution,
    p_class: &DiscreteDistribution,
    p_cf: Option<&DiscreteDistribution>,
    lambda_c: f64,
) -> Result<f64> {
    let mut value = solve_exact_transport(q, p_class)?.cost;
    if let Some(cf) = p_cf {
        value += lambda_c * solve_exact_transport(q, cf)?.cost;
    }
    Ok(value)
}

/// Value and atom-wise gradients of `(W₂(q0, p_cf) − W₂(q1, p_cf))²`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryPenalty {
    pub value: f64,
    pub grad0: Vec<Point>,
    pub grad1: Vec<Point>,
    pub w0: f64,
    pub w1: f64,
}

/// Gradient of `W₂(q, p)` with respect to the atoms of `q`, holding the
/// optimal plan fixed: `(a_j x_j − Σ_k Γ[j,k] y_k) / W₂`.
fn w2_with_grad(q: &DiscreteDistribution, p: &DiscreteDistribution) -> Result<(f64, Vec<Point>)> {
    let plan = solve_exact_transport(q, p)?;
    let w = libm::sqrt(plan.cost);
    let d = q.dim();
    if w < W2_SINGULAR {
        return Ok((w, vec![vec![0.0; d]; q.len()]));
    }
    let grad = (0..q.len())
        .map(|j| {
            let a = q.weights[j];
            let mut g: Vec<f64> = q.support[j].iter().map(|x| a * x).collect();
            for (&t, y) in plan.row(j).iter().zip(&p.support) {
                if t != 0.0 {
                    for (gi, yi) in g.iter_mut().zip(y) {
                        *gi -= t * yi;
                    }
                }
            }
            g.iter_mut().for_each(|gi| *gi /= w);
            g
        })
        .collect();
    Ok((w, grad))
}

pub fn symmetry_penalty(
    q0: &DiscreteDistribution,
    q1: &DiscreteDistribution,
    p_cf: &DiscreteDistribution,
) -> Result<SymmetryPenalty> {
    if p_cf.is_empty() {
        return Err(Error::Empty("counterfactual distribution"));
    }
    let (w0, mut grad0) = w2_with_grad(q0, p_cf)?;
    let (w1, mut grad1) = w2_with_grad(q1, p_cf)?;
    let diff = w0 - w1;
    let scale0 = 2.0 * diff;
    let scale1 = -2.0 * diff;
    grad0.iter_mut().flatten().for_each(|g| *g *= scale0);
    grad1.iter_mut().flatten().for_each(|g| *g *= scale1);
    Ok(SymmetryPenalty {
        value: diff * diff,
        grad0,
        grad1,
        w0,
        w1,
    })
}

/// Full joint objective for a prototype pair.
pub fn joint_objective(
    q0: &DiscreteDistribution,
    q1: &DiscreteDistribution,
    p0: &DiscreteDistribution,
    p1: &DiscreteDistribution,
    p_cf: Option<&DiscreteDistribution>,
    cfg: &PrototypeFitConfig,
) -> Result<f64> {
    let mut value = class_objective(q0, p0, p_cf, cfg.lambda(0))?
        + class_objective(q1, p1, p_cf, cfg.lambda(1))?;
    if let Some(cf) = p_cf {
        if cfg.gamma > 0.0 {
            let w0 = libm::sqrt(solve_exact_transport(q0, cf)?.cost);
            let w1 = libm::sqrt(solve_exact_transport(q1, cf)?.cost);
            value += cfg.gamma * (w0 - w1) * (w0 - w1);
        }
    }
    Ok(value)
}

/// One free-support fixed-point step for a single class prototype.
fn fixed_point_step(
    q: &DiscreteDistribution,
    p_class: &DiscreteDistribution,
    p_cf: Option<&DiscreteDistribution>,
    lambda_c: f64,
) -> Result<DiscreteDistribution> {
    let plan = solve_exact_transport(q, p_class)?;
    let mut support = barycentric_projection(&plan, q, p_class)?;
    if let Some(cf) = p_cf {
        let plan_cf = solve_exact_transport(q, cf)?;
        let proj_cf = barycentric_projection(&plan_cf, q, cf)?;
        let denom = 1.0 + lambda_c;
        for (x, y) in support.iter_mut().zip(&proj_cf) {
            for (xi, yi) in x.iter_mut().zip(y) {
                *xi = (*xi + lambda_c * yi) / denom;
            }
        }
    }
    Ok(DiscreteDistribution {
        support,
        weights: q.weights.clone(),
    })
}

fn check_finite(q: &DiscreteDistribution) -> Result<()> {
    if q.support.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("prototype support"))
    }
}

/// Fits `(Q₀, Q₁)` to class samples `d0`, `d1` and counterfactuals `d_cf`
/// (which may be empty).
///
/// The returned pair is the best iterate seen, so the final trace entry
/// never exceeds the initial one.
pub fn fit_prototypes(
    d0: &[Point],
    d1: &[Point],
    d_cf: &[Point],
    cfg: &PrototypeFitConfig,
) -> Result<PrototypePair> {
    cfg.validate()?;
    if d0.is_empty() {
        return Err(Error::Empty("class 0 samples"));
    }
    if d1.is_empty() {
        return Err(Error::Empty("class 1 samples"));
    }
    let p0 = DiscreteDistribution::uniform(d0.to_vec())?;
    let p1 = DiscreteDistribution::uniform(d1.to_vec())?;
    if p0.dim() != p1.dim() {
        return Err(Error::DimensionMismatch {
            expected: p0.dim(),
            found: p1.dim(),
        });
    }
    let p_cf = if d_cf.is_empty() {
        None
    } else {
        let cf = DiscreteDistribution::uniform(d_cf.to_vec())?;
        if cf.dim() != p0.dim() {
            return Err(Error::DimensionMismatch {
                expected: p0.dim(),
                found: cf.dim(),
            });
        }
        Some(cf)
    };
    let p_cf = p_cf.as_ref();

    let mut q0 = init_support(d0, cfg.k, cfg.seed)?;
    let mut q1 = init_support(d1, cfg.k, cfg.seed.wrapping_add(1))?;

    let mut objective = joint_objective(&q0, &q1, &p0, &p1, p_cf, cfg)?;
    let mut trace = vec![objective];
    let mut best = (objective, q0.clone(), q1.clone());

    for _ in 0..cfg.max_outer_iters {
        q0 = fixed_point_step(&q0, &p0, p_cf, cfg.lambda(0))?;
        q1 = fixed_point_step(&q1, &p1, p_cf, cfg.lambda(1))?;

        if let Some(cf) = p_cf {
            if cfg.gamma > 0.0 {
                let pen = symmetry_penalty(&q0, &q1, cf)?;
                let step = cfg.reg_step * cfg.gamma;
                for (q, grad) in [(&mut q0, &pen.grad0), (&mut q1, &pen.grad1)] {
                    for (x, g) in q.support.iter_mut().zip(grad) {
                        for (xi, gi) in x.iter_mut().zip(g) {
                            *xi -= step * gi;
                        }
                    }
                }
            }
        }
        check_finite(&q0)?;
        check_finite(&q1)?;

        let prev = objective;
        objective = joint_objective(&q0, &q1, &p0, &p1, p_cf, cfg)?;
        if !objective.is_finite() {
            return Err(Error::NonFinite("objective"));
        }
        trace.push(objective);
        if objective < best.0 {
            best = (objective, q0.clone(), q1.clone());
        }
        let rel = (prev - objective).abs() / prev.abs().max(f64::MIN_POSITIVE);
        if rel < cfg.tol || objective == 0.0 {
            break;
        }
    }

    if objective > best.0 {
        trace.push(best.0);
        q0 = best.1;
        q1 = best.2;
    }

    Ok(PrototypePair {
        q0,
        q1,
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn init_support_clips_and_keeps_small_sets() {
        let q = init_support(&[vec![1.0, 1.0]], 3, 0).unwrap();
        assert_eq!(q.support, vec![vec![1.0, 1.0]]);
        assert_eq!(q.weights, vec![1.0]);

        let two = [vec![0.0, 0.0], vec![1.0, 0.0]];
        let q = init_support(&two, 2, 0).unwrap();
        assert_eq!(q.support, two.to_vec());
        assert_eq!(q.weights, vec![0.5, 0.5]);

        assert!(matches!(init_support(&[], 2, 0), Err(Error::Empty(_))));
    }

    #[test]
    fn init_support_is_deterministic_and_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<Point> = (0..100)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let a = init_support(&samples, 10, 42).unwrap();
        let b = init_support(&samples, 10, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        for i in 0..10 {
            for j in 0..i {
                assert_ne!(a.support[i], a.support[j]);
            }
        }
    }

    #[test]
    fn init_support_with_duplicates() {
        let samples = vec![vec![0.0]; 5];
        let q = init_support(&samples, 3, 1).unwrap();
        assert_eq!(q.len(), 3);
    }

    #[test]
    fn class_objective_examples() {
        let q = DiscreteDistribution::dirac(vec![0.0, 0.0]).unwrap();
        let p = q.clone();
        assert_eq!(class_objective(&q, &p, None, 0.5).unwrap(), 0.0);

        let cf = DiscreteDistribution::dirac(vec![1.0, 1.0]).unwrap();
        assert_eq!(class_objective(&q, &p, Some(&cf), 0.5).unwrap(), 1.0);

        let third = DiscreteDistribution::dirac(vec![1.0 / 3.0, 1.0 / 3.0]).unwrap();
        let v = class_objective(&third, &p, Some(&cf), 0.5).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn symmetry_penalty_examples() {
        let cf = DiscreteDistribution::dirac(vec![0.0, 0.0]).unwrap();
        let q0 = DiscreteDistribution::dirac(vec![-2.0 / 3.0, 0.0]).unwrap();
        let q1 = DiscreteDistribution::dirac(vec![2.0 / 3.0, 0.0]).unwrap();
        let pen = symmetry_penalty(&q0, &q1, &cf).unwrap();
        assert_eq!(pen.value, 0.0);
        assert!(pen
            .grad0
            .iter()
            .chain(&pen.grad1)
            .flatten()
            .all(|g| *g == 0.0));

        let q0 = DiscreteDistribution::dirac(vec![2.0, 0.0]).unwrap();
        let q1 = DiscreteDistribution::dirac(vec![1.0, 0.0]).unwrap();
        let pen = symmetry_penalty(&q0, &q1, &cf).unwrap();
        assert_eq!(pen.value, 1.0);
        // d/dx0 (|x0| - 1)^2 at x0 = 2 along e1 is 2.
        assert!(close(&pen.grad0[0], &[2.0, 0.0], 1e-12));
        assert!(close(&pen.grad1[0], &[-2.0, 0.0], 1e-12));
    }

    #[test]
    fn symmetry_gradient_zero_at_singularity() {
        let cf = DiscreteDistribution::dirac(vec![0.0, 0.0]).unwrap();
        let q1 = DiscreteDistribution::dirac(vec![1.0, 0.0]).unwrap();
        let pen = symmetry_penalty(&cf, &q1, &cf).unwrap();
        assert_eq!(pen.value, 1.0);
        assert!(pen.grad0[0].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn mirror_diracs_reach_closed_form() {
        for gamma in [0.0, 0.3, 2.0] {
            let cfg = PrototypeFitConfig {
                k: 1,
                gamma,
                ..Default::default()
            };
            let pair = fit_prototypes(
                &[vec![-1.0, 0.0]],
                &[vec![1.0, 0.0]],
                &[vec![0.0, 0.0]],
                &cfg,
            )
            .unwrap();
            assert!(close(&pair.q0.support[0], &[-2.0 / 3.0, 0.0], 1e-12));
            assert!(close(&pair.q1.support[0], &[2.0 / 3.0, 0.0], 1e-12));
            let cf = DiscreteDistribution::dirac(vec![0.0, 0.0]).unwrap();
            let pen = symmetry_penalty(&pair.q0, &pair.q1, &cf).unwrap();
            assert!(pen.value < 1e-20);
        }
    }

    #[test]
    fn counterfactual_pull_on_single_class() {
        let cfg = PrototypeFitConfig {
            k: 1,
            gamma: 0.0,
            ..Default::default()
        };
        let pair = fit_prototypes(
            &[vec![0.0, 0.0]],
            &[vec![5.0, 5.0]],
            &[vec![1.0, 1.0]],
            &cfg,
        )
        .unwrap();
        assert!(close(&pair.q0.support[0], &[1.0 / 3.0, 1.0 / 3.0], 1e-12));
    }

    #[test]
    fn recovers_empirical_measure_without_counterfactuals() {
        let d0 = vec![vec![0.0, 0.1], vec![0.4, 0.2], vec![0.9, 0.7]];
        let d1 = vec![vec![1.0, 1.0], vec![0.8, 0.9]];
        let cfg = PrototypeFitConfig {
            k: 3,
            gamma: 0.7,
            ..Default::default()
        };
        let pair = fit_prototypes(&d0, &d1, &[], &cfg).unwrap();
        assert!(pair.final_objective() < 1e-12);
        assert_eq!(pair.q0.len(), 3);
        assert_eq!(pair.q1.len(), 2);
    }

    #[test]
    fn rejects_empty_classes_and_bad_config() {
        let cfg = PrototypeFitConfig::default();
        assert!(fit_prototypes(&[], &[vec![1.0]], &[], &cfg).is_err());
        assert!(fit_prototypes(&[vec![1.0]], &[], &[], &cfg).is_err());
        let bad = PrototypeFitConfig {
            k: 0,
            ..Default::default()
        };
        assert!(matches!(
            fit_prototypes(&[vec![1.0]], &[vec![2.0]], &[], &bad),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn divergent_step_is_reported() {
        let cfg = PrototypeFitConfig {
            k: 2,
            gamma: 1.0,
            reg_step: 1e300,
            max_outer_iters: 50,
            ..Default::default()
        };
        let d0 = vec![vec![0.0], vec![0.1]];
        let d1 = vec![vec![0.9], vec![3.0]];
        let cf = vec![vec![0.5], vec![0.52]];
        assert!(fit_prototypes(&d0, &d1, &cf, &cfg).is_err());
    }
}

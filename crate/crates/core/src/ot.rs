//! Exact discrete optimal transport between weighted point clouds on ℝᵈ
//! under the squared Euclidean ground cost.
//!
//! The solver is a transportation simplex: a northwest-corner basis, dual
//! potentials recomputed over the basis tree each pivot, Dantzig pricing and
//! a switch to Bland's rule after a run of degenerate pivots so the method
//! cannot cycle.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sq_dist;
use crate::Point;

/// Tolerance on the total mass of a distribution.
pub const MASS_TOL: f64 = 1e-9;

/// A probability measure with finite support: `Σ weights[i] · δ(support[i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    pub support: Vec<Point>,
    pub weights: Vec<f64>,
}

impl DiscreteDistribution {
    /// Builds a validated distribution. Zero weights are rejected.
    pub fn new(support: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        let dist = Self { support, weights };
        dist.validate()?;
        Ok(dist)
    }

    /// Uniform weights `1/n` over the given points.
    pub fn uniform(support: Vec<Point>) -> Result<Self> {
        let n = support.len();
        if n == 0 {
            return Err(Error::Empty("support"));
        }
        let w = 1.0 / n as f64;
        Self::new(support, vec![w; n])
    }

    /// Unit mass at `x`.
    pub fn dirac(x: Point) -> Result<Self> {
        Self::new(vec![x], vec![1.0])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Dimension of the support points (0 for an empty, invalid distribution).
    pub fn dim(&self) -> usize {
        self.support.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.support.is_empty() {
            return Err(Error::Empty("support"));
        }
        if self.support.len() != self.weights.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} support points but {} weights",
                self.support.len(),
                self.weights.len()
            )));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidDistribution("zero-dimensional points".into()));
        }
        for p in &self.support {
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("support"));
            }
        }
        let mut total = 0.0;
        for &w in &self.weights {
            if !w.is_finite() {
                return Err(Error::InvalidDistribution(format!("non-finite weight {w}")));
            }
            if w <= 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "weights must be positive, found {w}"
                )));
            }
            total += w;
        }
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    /// Weighted mean of the support.
    pub fn mean(&self) -> Point {
        let mut m = vec![0.0; self.dim()];
        for (p, &w) in self.support.iter().zip(&self.weights) {
            for (acc, &v) in m.iter_mut().zip(p) {
                *acc += w * v;
            }
        }
        m
    }
}

/// An optimal coupling, stored row-major as an `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    pub matrix: Vec<f64>,
    /// `Σ matrix[i,j] · ‖xᵢ − yⱼ‖²`
    pub cost: f64,
}

impl TransportPlan {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, v) in s.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        s
    }
}

fn check_same_dim(a: &DiscreteDistribution, b: &DiscreteDistribution) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// Solves the exact transport problem between `src` and `dst`.
pub fn solve_exact_transport(
    src: &DiscreteDistribution,
    dst: &DiscreteDistribution,
) -> Result<TransportPlan> {
    src.validate()?;
    dst.validate()?;
    check_same_dim(src, dst)?;

    let (n, m) = (src.len(), dst.len());
    let mut cost = Vec::with_capacity(n * m);
    for x in &src.support {
        for y in &dst.support {
            cost.push(sq_dist(x, y));
        }
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix"));
    }

    let matrix = if n == 1 || m == 1 {
        // The product measure is the only coupling.
        let mut mat = Vec::with_capacity(n * m);
        for &a in &src.weights {
            for &b in &dst.weights {
                mat.push(a * b);
            }
        }
        mat
    } else {
        TransportSimplex::new(&src.weights, &dst.weights, &cost).solve()?
    };

    let total = matrix.iter().zip(&cost).map(|(f, c)| f * c).sum::<f64>();
    Ok(TransportPlan {
        rows: n,
        cols: m,
        matrix,
        cost: if total < 0.0 { 0.0 } else { total },
    })
}

/// Squared 2-Wasserstein distance, the optimal transport cost.
pub fn wasserstein2_sq(src: &DiscreteDistribution, dst: &DiscreteDistribution) -> Result<f64> {
    Ok(solve_exact_transport(src, dst)?.cost)
}

/// `W₂²(δ_x, q) = Σⱼ wⱼ‖x − yⱼ‖²`; the product measure is the only coupling
/// of a Dirac with `q`, so no LP is needed.
pub fn dirac_distance_sq(x: &[f64], q: &DiscreteDistribution) -> Result<f64> {
    if x.len() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            found: x.len(),
        });
    }
    Ok(q.support
        .iter()
        .zip(&q.weights)
        .map(|(y, w)| w * sq_dist(x, y))
        .sum())
}

/// Maps each source atom `j` to `Σₖ plan[j,k]·yₖ / wⱼ`. Atoms with weight
/// below `1e-12` keep their original location.
pub fn barycentric_projection(
    plan: &TransportPlan,
    src: &DiscreteDistribution,
    dst: &DiscreteDistribution,
) -> Result<Vec<Point>> {
    if plan.rows != src.len()
        || plan.cols != dst.len()
        || plan.matrix.len() != plan.rows * plan.cols
    {
        return Err(Error::ShapeMismatch(format!(
            "plan is {}x{} but distributions have {} and {} atoms",
            plan.rows,
            plan.cols,
            src.len(),
            dst.len()
        )));
    }
    check_same_dim(src, dst)?;
    let d = dst.dim();
    let out = (0..plan.rows)
        .map(|j| {
            let w = src.weights[j];
            if w < 1e-12 {
                return src.support[j].clone();
            }
            let mut acc = vec![0.0; d];
            for (&g, y) in plan.row(j).iter().zip(&dst.support) {
                if g != 0.0 {
                    for (a, &v) in acc.iter_mut().zip(y) {
                        *a += g * v;
                    }
                }
            }
            acc.iter_mut().for_each(|a| *a /= w);
            acc
        })
        .collect();
    Ok(out)
}

/// Dense transportation simplex over an `n × m` cost matrix.
struct TransportSimplex<'a> {
    n: usize,
    m: usize,
    cost: &'a [f64],
    flow: Vec<f64>,
    is_basic: Vec<bool>,
    /// Basic cells as flat indices `i*m + j`; always `n + m - 1` of them.
    basis: Vec<usize>,
}

/// Number of consecutive degenerate pivots tolerated before switching to
/// Bland's rule.
const DEGENERATE_RUN_LIMIT: usize = 64;

impl<'a> TransportSimplex<'a> {
    fn new(a: &[f64], b: &[f64], cost: &'a [f64]) -> Self {
        let (n, m) = (a.len(), b.len());
        let mut ra = a.to_vec();
        let mut rb = b.to_vec();
        let mut flow = vec![0.0; n * m];
        let mut is_basic = vec![false; n * m];
        let mut basis = Vec::with_capacity(n + m - 1);

        // Northwest corner: n + m - 1 cells forming a spanning tree.
        let (mut i, mut j) = (0, 0);
        loop {
            let x = ra[i].min(rb[j]);
            let cell = i * m + j;
            flow[cell] = x;
            is_basic[cell] = true;
            basis.push(cell);
            ra[i] -= x;
            rb[j] -= x;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if i == n - 1 {
                j += 1;
            } else if j == m - 1 || ra[i] <= rb[j] {
                i += 1;
            } else {
                j += 1;
            }
        }

        Self {
            n,
            m,
            cost,
            flow,
            is_basic,
            basis,
        }
    }

    fn reduced_cost(&self, pot: &[f64], cell: usize) -> f64 {
        let (i, j) = (cell / self.m, cell % self.m);
        self.cost[cell] - pot[i] - pot[self.n + j]
    }

    fn solve(mut self) -> Result<Vec<f64>> {
        let (n, m) = (self.n, self.m);
        let nodes = n + m;
        let cmax = self.cost.iter().copied().fold(0.0_f64, f64::max);
        let eps = 1e-12 * cmax.max(f64::MIN_POSITIVE) * nodes as f64;
        let max_pivots = 50 * n * m + 1000;

        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
        let mut pot = vec![0.0; nodes];
        let mut parent_edge = vec![usize::MAX; nodes];
        let mut parent = vec![usize::MAX; nodes];
        let mut depth = vec![0usize; nodes];
        let mut seen = vec![false; nodes];
        let mut queue = Vec::with_capacity(nodes);

        let mut bland = false;
        let mut degenerate_run = 0usize;
        let block = ((n * m) as f64).sqrt().ceil().max(16.0) as usize;
        let mut next_cell = 0usize;

        for _ in 0..max_pivots {
            // Basis tree rooted at row 0: potentials u (rows) and v (columns)
            // with u_i + v_j = c_ij on basic cells.
            adj.iter_mut().for_each(Vec::clear);
            for &cell in &self.basis {
                let (i, j) = (cell / m, cell % m);
                adj[i].push(cell);
                adj[n + j].push(cell);
            }
            seen.iter_mut().for_each(|s| *s = false);
            queue.clear();
            queue.push(0);
            seen[0] = true;
            pot[0] = 0.0;
            parent[0] = usize::MAX;
            parent_edge[0] = usize::MAX;
            depth[0] = 0;
            let mut head = 0;
            while head < queue.len() {
                let u = queue[head];
                head += 1;
                for &cell in &adj[u] {
                    let (i, j) = (cell / m, cell % m);
                    let other = if u < n { n + j } else { i };
                    if seen[other] {
                        continue;
                    }
                    seen[other] = true;
                    pot[other] = self.cost[cell] - pot[u];
                    parent[other] = u;
                    parent_edge[other] = cell;
                    depth[other] = depth[u] + 1;
                    queue.push(other);
                }
            }
            if queue.len() != nodes {
                return Err(Error::Solver("basis is not a spanning tree".into()));
            }

            // Pricing: Dantzig's rule within blocks of cells, resuming where
            // the previous scan stopped; a full cycle without a candidate
            // means optimality. Under Bland's rule, first eligible cell.
            let mut entering = usize::MAX;
            let mut best = -eps;
            if bland {
                for cell in 0..n * m {
                    if !self.is_basic[cell] && self.reduced_cost(&pot, cell) < -eps {
                        entering = cell;
                        break;
                    }
                }
            } else {
                let total = n * m;
                let mut scanned = 0;
                while scanned < total && entering == usize::MAX {
                    let len = block.min(total - scanned);
                    for _ in 0..len {
                        let cell = next_cell;
                        next_cell = if next_cell + 1 == total {
                            0
                        } else {
                            next_cell + 1
                        };
                        if self.is_basic[cell] {
                            continue;
                        }
                        let rc = self.reduced_cost(&pot, cell);
                        if rc < best {
                            best = rc;
                            entering = cell;
                        }
                    }
                    scanned += len;
                }
            }
            if entering == usize::MAX {
                return Ok(self.flow);
            }

            // Cycle: entering cell (+), then the tree path from column j back
            // to row i with alternating signs starting at (−).
            let (ei, ej) = (entering / m, entering % m);
            let mut from_col = Vec::new();
            let mut from_row = Vec::new();
            let (mut a, mut b) = (n + ej, ei);
            while depth[a] > depth[b] {
                from_col.push(parent_edge[a]);
                a = parent[a];
            }
            while depth[b] > depth[a] {
                from_row.push(parent_edge[b]);
                b = parent[b];
            }
            while a != b {
                from_col.push(parent_edge[a]);
                a = parent[a];
                from_row.push(parent_edge[b]);
                b = parent[b];
            }
            from_row.reverse();
            from_col.extend(from_row);
            let path = from_col;

            let mut theta = f64::INFINITY;
            let mut leaving = usize::MAX;
            for &cell in path.iter().step_by(2) {
                let f = self.flow[cell];
                let better = f < theta || (bland && f == theta && cell < leaving);
                if better {
                    theta = f;
                    leaving = cell;
                }
            }
            if leaving == usize::MAX {
                return Err(Error::Solver("empty pivot cycle".into()));
            }

            for (k, &cell) in path.iter().enumerate() {
                if k % 2 == 0 {
                    self.flow[cell] -= theta;
                } else {
                    self.flow[cell] += theta;
                }
            }
            self.flow[entering] += theta;
            self.flow[leaving] = 0.0;
            self.is_basic[leaving] = false;
            self.is_basic[entering] = true;
            let pos = self
                .basis
                .iter()
                .position(|&c| c == leaving)
                .ok_or_else(|| Error::Solver("leaving cell not in basis".into()))?;
            self.basis[pos] = entering;

            if theta == 0.0 {
                degenerate_run += 1;
                if degenerate_run > DEGENERATE_RUN_LIMIT {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
        }
        Err(Error::Solver(format!(
            "no optimum after {max_pivots} pivots"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pts1(xs: &[f64]) -> Vec<Point> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn diracs_cost_squared_distance() {
        let a = DiscreteDistribution::dirac(vec![0.0, 0.0]).unwrap();
        let b = DiscreteDistribution::dirac(vec![3.0, 4.0]).unwrap();
        let plan = solve_exact_transport(&a, &b).unwrap();
        assert_eq!(plan.matrix, vec![1.0]);
        assert_eq!(plan.cost, 25.0);
    }

    #[test]
    fn identical_distributions_cost_zero() {
        let a = DiscreteDistribution::uniform(vec![vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let plan = solve_exact_transport(&a, &a).unwrap();
        assert_eq!(plan.cost, 0.0);
        assert_eq!(plan.matrix, vec![0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn shifted_uniform_1d() {
        let a = DiscreteDistribution::uniform(pts1(&[0.0, 1.0])).unwrap();
        let b = DiscreteDistribution::uniform(pts1(&[0.5, 1.5])).unwrap();
        assert!((wasserstein2_sq(&a, &b).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn two_points_against_midpoint() {
        let a = DiscreteDistribution::uniform(vec![vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let b = DiscreteDistribution::dirac(vec![1.0, 0.0]).unwrap();
        assert_eq!(wasserstein2_sq(&a, &b).unwrap(), 1.0);
        assert_eq!(dirac_distance_sq(&[1.0, 0.0], &a).unwrap(), 1.0);
        assert_eq!(dirac_distance_sq(&[0.0, 0.0], &a).unwrap(), 2.0);
    }

    #[test]
    fn dirac_distance_to_dirac() {
        let q = DiscreteDistribution::dirac(vec![3.0, 4.0]).unwrap();
        assert_eq!(dirac_distance_sq(&[0.0, 0.0], &q).unwrap(), 25.0);
        assert!(matches!(
            dirac_distance_sq(&[0.0], &q),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = DiscreteDistribution::dirac(vec![0.0, 0.0]).unwrap();
        let b = DiscreteDistribution::dirac(vec![0.0]).unwrap();
        assert!(matches!(
            solve_exact_transport(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));

        let nan = DiscreteDistribution {
            support: vec![vec![0.0, 0.0]],
            weights: vec![f64::NAN],
        };
        assert!(matches!(
            solve_exact_transport(&nan, &a),
            Err(Error::InvalidDistribution(_))
        ));
        let unnormalized = DiscreteDistribution {
            support: vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            weights: vec![0.5, 0.6],
        };
        assert!(solve_exact_transport(&a, &unnormalized).is_err());
        let negative = DiscreteDistribution {
            support: vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            weights: vec![1.5, -0.5],
        };
        assert!(solve_exact_transport(&negative, &a).is_err());
        assert!(DiscreteDistribution::new(vec![vec![0.0], vec![1.0]], vec![1.0, 0.0]).is_err());
        assert!(DiscreteDistribution::uniform(vec![]).is_err());
        assert!(DiscreteDistribution::uniform(vec![vec![0.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn projection_examples() {
        let src = DiscreteDistribution::dirac(vec![0.0, 0.0]).unwrap();
        let dst = DiscreteDistribution::dirac(vec![3.0, 4.0]).unwrap();
        let plan = solve_exact_transport(&src, &dst).unwrap();
        assert_eq!(
            barycentric_projection(&plan, &src, &dst).unwrap(),
            vec![vec![3.0, 4.0]]
        );

        let cloud = DiscreteDistribution::uniform(vec![vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let plan = solve_exact_transport(&cloud, &cloud).unwrap();
        assert_eq!(
            barycentric_projection(&plan, &cloud, &cloud).unwrap(),
            cloud.support
        );

        let a = DiscreteDistribution::uniform(pts1(&[0.0, 1.0])).unwrap();
        let b = DiscreteDistribution::uniform(pts1(&[0.5, 1.5])).unwrap();
        let plan = solve_exact_transport(&a, &b).unwrap();
        assert_eq!(
            barycentric_projection(&plan, &a, &b).unwrap(),
            pts1(&[0.5, 1.5])
        );
        assert!(matches!(
            barycentric_projection(&plan, &src, &b),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn handles_degenerate_northwest_corner() {
        // Equal partial sums force zero-flow basic cells.
        let a = DiscreteDistribution::uniform(pts1(&[0.0, 1.0, 2.0, 3.0])).unwrap();
        let b = DiscreteDistribution::uniform(pts1(&[3.0, 2.0, 1.0, 0.0])).unwrap();
        let plan = solve_exact_transport(&a, &b).unwrap();
        assert!(plan.cost.abs() < 1e-15);
    }
}

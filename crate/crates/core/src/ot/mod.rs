//! Discrete optimal transport between two weighted point sets.
//!
//! [`sinkhorn`] is the production solver (entropic regularization, log
//! domain). [`exact_ot`] solves the unregularized linear program with the
//! transportation simplex and serves as an oracle.

mod exact;
mod sinkhorn;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

pub use exact::{exact_ot, EXACT_CELL_LIMIT};
pub use sinkhorn::sinkhorn;

/// Tolerance on marginal sums accepted by [`TransportProblem::new`].
pub const MARGINAL_SUM_TOLERANCE: f64 = 1e-6;

/// Cost matrix plus source and target marginals.
#[derive(Clone, Debug)]
pub struct TransportProblem {
    cost: Matrix,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
}

impl TransportProblem {
    pub fn new(cost: Matrix, row_marginal: Vec<f64>, col_marginal: Vec<f64>) -> Result<Self> {
        if cost.rows() != row_marginal.len() {
            return Err(Error::DimensionMismatch {
                context: "cost rows vs row marginal",
                expected: cost.rows(),
                got: row_marginal.len(),
            });
        }
        if cost.cols() != col_marginal.len() {
            return Err(Error::DimensionMismatch {
                context: "cost columns vs column marginal",
                expected: cost.cols(),
                got: col_marginal.len(),
            });
        }
        if cost.rows() == 0 || cost.cols() == 0 {
            return Err(Error::InvalidArgument("transport problem must be non-empty".into()));
        }
        for i in 0..cost.rows() {
            for (j, &c) in cost.row(i).iter().enumerate() {
                if !c.is_finite() {
                    return Err(Error::NonFiniteCost { row: i, col: j });
                }
                if c < 0.0 {
                    return Err(Error::InvalidArgument(format!("negative cost {c} at ({i}, {j})")));
                }
            }
        }
        for (name, m) in [("row", &row_marginal), ("column", &col_marginal)] {
            if let Some(v) = m.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidArgument(format!("{name} marginal has invalid entry {v}")));
            }
            let sum: f64 = m.iter().sum();
            if (sum - 1.0).abs() > MARGINAL_SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!("{name} marginal sums to {sum}, expected 1")));
            }
        }
        Ok(Self { cost, row_marginal, col_marginal })
    }

    /// Uniform marginals on both sides.
    pub fn uniform(cost: Matrix) -> Result<Self> {
        let (n, m) = (cost.rows(), cost.cols());
        Self::new(cost, vec![1.0 / n as f64; n], vec![1.0 / m as f64; m])
    }

    pub fn cost(&self) -> &Matrix {
        &self.cost
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.cost.rows(), self.cost.cols())
    }

    /// Same marginals, cost scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let data = self.cost.as_slice().iter().map(|c| c * factor).collect();
        Self::new(
            Matrix::new(self.cost.rows(), self.cost.cols(), data)?,
            self.row_marginal.clone(),
            self.col_marginal.clone(),
        )
    }
}

#[derive(Clone, Debug)]
pub struct TransportSolution {
    pub plan: Matrix,
    /// `⟨plan, cost⟩`.
    pub distance: f64,
    pub iterations: usize,
    /// Upper bound on `‖plan·1 − a‖_∞` and `‖planᵀ·1 − b‖_∞`.
    pub marginal_violation: f64,
    pub converged: bool,
}

/// Largest marginal deviation of a plan.
pub fn marginal_violation(plan: &Matrix, a: &[f64], b: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (i, &ai) in a.iter().enumerate() {
        worst = worst.max((plan.row(i).iter().sum::<f64>() - ai).abs());
    }
    for (j, &bj) in b.iter().enumerate() {
        let col: f64 = (0..plan.rows()).map(|i| plan[(i, j)]).sum();
        worst = worst.max((col - bj).abs());
    }
    worst
}

pub(crate) fn plan_cost(plan: &Matrix, cost: &Matrix) -> f64 {
    plan.as_slice().iter().zip(cost.as_slice()).map(|(t, c)| t * c).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self { epsilon: 0.01, max_iters: 1000, tolerance: 1e-6 }
    }
}

impl SinkhornParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sinkhorn distance of every problem, solved in parallel. Errors carry the
/// index of the failing problem.
pub fn batch_distances(problems: &[TransportProblem], params: &SinkhornParams) -> Result<Vec<f64>> {
    problems
        .par_iter()
        .enumerate()
        .map(|(index, p)| {
            sinkhorn(p, params)
                .map(|s| s.distance)
                .map_err(|e| Error::InProblem { index, source: Box::new(e) })
        })
        .collect()
}

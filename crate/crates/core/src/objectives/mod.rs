//! Training objectives and the machinery to evaluate, differentiate and
//! verify them.
//!
//! All objectives are expressed in terms of the per-example loss vector and
//! expose the derivative of their value with respect to each loss, so the
//! optimizer can chain through any of them the same way.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

mod cvar;
mod dual_solver;
mod erm;
mod primal;
mod uvdro;

pub use cvar::{cvar_loss_weights, cvar_objective};
pub use dual_solver::{minimize_dual, DualSolution, DualSolverConfig};
pub use erm::erm_objective;
pub use primal::{primal_inner_sup_oracle, primal_robust_value, PrimalOracleConfig};
pub(crate) use uvdro::add_ridge_gradient;
pub use uvdro::{
    cancel_opposing_flows, net_flow, solve_eta, transport_cost, uvdro_gradients, uvdro_objective,
    uvdro_objective_with_cost, uvdro_value, RobustWeights,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Objective {
    Erm,
    /// Worst case over all `(x, y)` subpopulations of size `alpha` (CVaR).
    CvarDro,
    /// Lipschitz-smoothed worst case over feature subpopulations only.
    CovshiftDro,
    /// Lipschitz-smoothed worst case over `(x, c)` subpopulations.
    UvDro,
}

impl Objective {
    pub const ALL: [Objective; 4] = [
        Objective::Erm,
        Objective::CvarDro,
        Objective::CovshiftDro,
        Objective::UvDro,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Erm => "erm",
            Objective::CvarDro => "cvar_dro",
            Objective::CovshiftDro => "covshift_dro",
            Objective::UvDro => "uv_dro",
        }
    }

    /// Objectives that carry a transport matrix.
    pub fn uses_transport(self) -> bool {
        matches!(self, Objective::CovshiftDro | Objective::UvDro)
    }
}

impl core::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::invalid("objective", format!("unknown objective `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RobustnessConfig {
    /// Smallest subpopulation size, in (0, 1].
    pub alpha: f64,
    /// Lipschitz constant `L` of the smoothed worst-case weighting.
    pub lipschitz: f64,
    /// L2 penalty on the weights (not the bias).
    pub ridge: f64,
    pub objective: Objective,
}

impl RobustnessConfig {
    pub fn new(objective: Objective, alpha: f64, lipschitz: f64, ridge: f64) -> Result<Self> {
        let cfg = RobustnessConfig {
            alpha,
            lipschitz,
            ridge,
            objective,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(
                "alpha",
                format!("{} is not in (0, 1]", self.alpha),
            ));
        }
        if !(self.lipschitz >= 0.0) {
            return Err(Error::invalid("lipschitz", "must be nonnegative"));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::invalid("ridge", "must be a nonnegative number"));
        }
        Ok(())
    }
}

/// Dual variables of the smoothed estimator: transport matrix `B` and cutoff `eta`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DualState {
    pub transport: Matrix,
    pub eta: f64,
}

impl DualState {
    pub fn zeros(n: usize) -> Self {
        DualState {
            transport: Matrix::zeros(n, n),
            eta: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.transport.rows()
    }

    /// Nonnegative finite entries, zero diagonal, `eta >= 0`.
    pub fn check(&self) -> Result<()> {
        let n = self.transport.rows();
        if self.transport.cols() != n {
            return Err(Error::DimensionMismatch {
                what: "transport matrix columns",
                expected: n,
                actual: self.transport.cols(),
            });
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::InfeasibleDual(format!("eta = {}", self.eta)));
        }
        for i in 0..n {
            for (j, &b) in self.transport.row(i).iter().enumerate() {
                if !(b >= 0.0) || !b.is_finite() {
                    return Err(Error::InfeasibleDual(format!("B[{i}][{j}] = {b}")));
                }
                if i == j && b != 0.0 {
                    return Err(Error::InfeasibleDual(format!(
                        "nonzero diagonal B[{i}][{i}] = {b}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Value of an objective with its additive decomposition:
/// `total = robust_term + transport_cost + eta + ridge_term`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectiveValue {
    pub total: f64,
    pub robust_term: f64,
    pub transport_cost: f64,
    pub eta: f64,
    pub ridge_term: f64,
}

/// Feasible point of the smoothed inner maximization and its value
/// `(1/n) sum_i h_i (l_i - eta)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrimalWitness {
    pub h: Vec<f64>,
    pub value: f64,
}

pub(crate) fn check_square(what: &'static str, m: &Matrix, n: usize) -> Result<()> {
    if m.rows() != n || m.cols() != n {
        return Err(Error::DimensionMismatch {
            what,
            expected: n,
            actual: if m.rows() != n { m.rows() } else { m.cols() },
        });
    }
    Ok(())
}

/// Shortest-path closure of a nonnegative cost matrix (Floyd-Warshall).
pub(crate) fn shortest_path_closure(cost: &Matrix) -> Matrix {
    let n = cost.rows();
    let mut d = cost.clone();
    for k in 0..n {
        for i in 0..n {
            let dik = d.get(i, k);
            if dik == f64::INFINITY {
                continue;
            }
            for j in 0..n {
                let via = dik + d.get(k, j);
                if via < d.get(i, j) {
                    d.set(i, j, via);
                }
            }
        }
    }
    d
}

/// Largest function below `h` with `g_i - g_j <= bound[i][j]`, given a
/// closed (shortest-path) bound matrix: `g_i = min_j (h_j + bound[i][j])`.
pub(crate) fn lipschitz_minorant(h: &[f64], closed_bound: &Matrix) -> Vec<f64> {
    (0..h.len())
        .map(|i| {
            h.iter()
                .enumerate()
                .fold(h[i], |m, (j, &hj)| m.min(hj + closed_bound.get(i, j)))
        })
        .collect()
}

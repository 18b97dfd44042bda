//! Certified minimization of the dual estimator over `(B, eta)` for fixed
//! losses.
//!
//! The robust term is a scaled norm of a hinge, so the problem is a saddle
//! point `min_{B, eta >= 0} max_{y in Y} <y, l - net(B) - eta> + (L/n)<C, B> + eta`
//! with `Y = {y >= 0, |y| <= 1/(alpha sqrt n)}`, solved with diagonally
//! preconditioned primal-dual hybrid gradient steps. Any `y` that also
//! satisfies the Lipschitz and mass constraints gives a lower bound, so
//! the returned gap is a certificate, not a heuristic.

use alloc::vec;
use alloc::vec::Vec;

use crate::distances::DistanceMatrix;
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;

use super::uvdro::{adjusted_losses, cancel_opposing_flows, solve_eta, uvdro_value};
use super::{check_square, lipschitz_minorant, shortest_path_closure, DualState, ObjectiveValue};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualSolverConfig {
    pub max_iterations: usize,
    /// Stop once `upper - lower <= tolerance * max(1, |upper|)`.
    pub tolerance: f64,
    /// Iterations between gap evaluations (each costs `O(n^3)` once).
    pub check_every: usize,
}

impl Default for DualSolverConfig {
    fn default() -> Self {
        DualSolverConfig {
            max_iterations: 400_000,
            tolerance: 1e-9,
            check_every: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub state: DualState,
    pub value: ObjectiveValue,
    /// Certified lower bound on the minimum.
    pub lower_bound: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl DualSolution {
    pub fn gap(&self) -> f64 {
        self.value.total - self.lower_bound
    }
}

/// `L * c`, treating a zero cost as free even for an infinite `L`.
pub(crate) fn budget(lipschitz: f64, c: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        lipschitz * c
    }
}

/// Lower bound from a dual point: repair `h = alpha n y` so it meets every
/// constraint of the inner maximization, then evaluate `(1/alpha) mean(h l)`.
fn certified_lower_bound(losses: &[f64], h: &[f64], closed_bound: &Matrix, alpha: f64) -> f64 {
    let n = losses.len() as f64;
    let mut g = lipschitz_minorant(h, closed_bound);
    g.iter_mut().for_each(|v| *v = math::hinge(*v));
    let m1 = math::mean(&g);
    let m2 = g.iter().map(|v| v * v).sum::<f64>() / n;
    let mut s: f64 = 1.0;
    if m2 > 1.0 {
        s = s.min(1.0 / math::sqrt(m2));
    }
    if m1 * s > alpha {
        s = alpha / m1;
    }
    let dot = g.iter().zip(losses).map(|(a, b)| a * b).sum::<f64>();
    s * dot / (n * alpha)
}

fn project_dual(y: &mut [f64], radius: f64) {
    let mut norm2 = 0.0;
    for v in y.iter_mut() {
        *v = math::hinge(*v);
        norm2 += *v * *v;
    }
    let norm = math::sqrt(norm2);
    if norm > radius {
        let s = radius / norm;
        y.iter_mut().for_each(|v| *v *= s);
    }
}

/// Minimizes the estimator (without ridge) over the transport matrix and
/// cutoff. `cost` is the combined `D_x + D_c`.
pub fn minimize_dual(
    losses: &[f64],
    cost: &DistanceMatrix,
    alpha: f64,
    lipschitz: f64,
    cfg: &DualSolverConfig,
) -> Result<DualSolution> {
    let n = losses.len();
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    check_square("distance matrix", cost.as_matrix(), n)?;
    if !(alpha > 0.0 && alpha <= 1.0) || !(lipschitz >= 0.0) {
        return Err(Error::invalid("robustness", "need alpha in (0, 1] and L >= 0"));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("losses", "non-finite entry"));
    }

    let nf = n as f64;
    let mut unit_cost = Matrix::zeros(n, n);
    let mut bound = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                unit_cost.set(i, j, budget(lipschitz, cost.get(i, j)) / nf);
                bound.set(i, j, budget(alpha * lipschitz, cost.get(i, j)));
            }
        }
    }
    let closed = shortest_path_closure(&bound);

    let tau_b = 0.5;
    let tau_eta = 1.0 / nf;
    let sigma = 1.0 / (2.0 * nf - 1.0).max(1.0);
    let radius = 1.0 / (alpha * math::sqrt(nf));

    let mut b = Matrix::zeros(n, n);
    let mut eta = 0.0;
    let mut y = vec![0.0; n];
    let mut net = vec![0.0; n];
    let mut net_new = vec![0.0; n];
    let mut best: Option<(DualState, f64)> = None;
    let mut lower = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    let evaluate = |b: &Matrix| -> (DualState, f64) {
        let adjusted = adjusted_losses(losses, b);
        let state = DualState {
            transport: b.clone(),
            eta: solve_eta(&adjusted, alpha),
        };
        let total = uvdro_value(losses, cost, &state, alpha, lipschitz)
            .map(|v| v.total)
            .unwrap_or(f64::INFINITY);
        (state, total)
    };

    while iterations < cfg.max_iterations {
        iterations += 1;
        net_new.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let yi = y[i];
            let row = b.row_mut(i);
            let uc = unit_cost.row(i);
            for j in 0..n {
                if i == j || uc[j] == f64::INFINITY {
                    continue;
                }
                let v = math::hinge(row[j] - tau_b * (uc[j] - yi + y[j]));
                row[j] = v;
                net_new[i] += v;
                net_new[j] -= v;
            }
        }
        let eta_new = math::hinge(eta - tau_eta * (1.0 - math::sum(&y)));
        let eta_bar = 2.0 * eta_new - eta;
        for i in 0..n {
            let net_bar = 2.0 * net_new[i] - net[i];
            y[i] += sigma * (losses[i] - net_bar - eta_bar);
        }
        project_dual(&mut y, radius);
        core::mem::swap(&mut net, &mut net_new);
        eta = eta_new;

        if iterations % cfg.check_every == 0 || iterations == cfg.max_iterations {
            let (state, upper) = evaluate(&b);
            let h: Vec<f64> = y.iter().map(|v| v * alpha * nf).collect();
            lower = lower.max(certified_lower_bound(losses, &h, &closed, alpha));
            if best.as_ref().is_none_or(|(_, u)| upper < *u) {
                best = Some((state, upper));
            }
            let upper = best.as_ref().map(|(_, u)| *u).unwrap_or(upper);
            if upper - lower <= cfg.tolerance * upper.abs().max(1.0) {
                converged = true;
                break;
            }
        }
    }

    let (mut state, _) = best.unwrap_or_else(|| evaluate(&b));
    cancel_opposing_flows(&mut state.transport);
    let adjusted = adjusted_losses(losses, &state.transport);
    state.eta = solve_eta(&adjusted, alpha);
    let value = uvdro_value(losses, cost, &state, alpha, lipschitz)?;
    Ok(DualSolution {
        state,
        value,
        lower_bound: lower.min(value.total),
        iterations,
        converged,
    })
}

//! Direct solver for the inner maximization of the smoothed estimator:
//!
//! ```text
//! sup (1/n) sum_i h_i (l_i - eta)
//!   s.t. h >= 0, mean(h^2) <= 1, h_i - h_j <= alpha L D_ij
//! ```
//!
//! For fixed `eta`, `(1/alpha) * sup + eta` equals the estimator minimized
//! over the transport matrix. The solver shares no code with the dual
//! minimizer: it runs projected gradient ascent on `h`, projecting with
//! Dykstra's alternating projections onto the pairwise halfspaces and the
//! nonnegative part of the ball. Returned witnesses are repaired to exact
//! feasibility, so their values are lower bounds on the supremum.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::distances::DistanceMatrix;
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;

use super::dual_solver::budget;
use super::{check_square, lipschitz_minorant, shortest_path_closure, PrimalWitness};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimalOracleConfig {
    /// Ascent steps.
    pub max_iterations: usize,
    /// Sweeps of Dykstra's method per projection.
    pub max_sweeps: usize,
    /// Converged once an ascent step moves `h` by less than this, relative
    /// to the length of the step (max norm).
    pub tolerance: f64,
}

impl Default for PrimalOracleConfig {
    fn default() -> Self {
        PrimalOracleConfig {
            max_iterations: 5_000,
            max_sweeps: 2_000,
            tolerance: 1e-10,
        }
    }
}

/// Euclidean projection onto `{h >= 0, |h| <= radius, h_i - h_j <= b_ij}`.
struct Projector {
    pairs: Vec<(usize, usize, f64)>,
    radius: f64,
    max_sweeps: usize,
}

impl Projector {
    fn new(bound: &Matrix, radius: f64, max_sweeps: usize) -> Self {
        let n = bound.rows();
        let pairs = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && bound.get(i, j).is_finite())
            .map(|(i, j)| (i, j, bound.get(i, j)))
            .collect();
        Projector {
            pairs,
            radius,
            max_sweeps,
        }
    }

    /// Dykstra's method from the increments left by the previous call.
    /// The increments are dual variables of the projection problem, so
    /// any starting value converges; nearby points converge in few sweeps.
    fn project(&self, z: &[f64], state: &mut DykstraState) -> Vec<f64> {
        let n = z.len();
        let mut x = z.to_vec();
        for (k, &(i, j, _)) in self.pairs.iter().enumerate() {
            x[i] -= state.pairs[k];
            x[j] += state.pairs[k];
        }
        for (xi, c) in x.iter_mut().zip(&state.ball) {
            *xi -= c;
        }
        let mut v = vec![0.0; n];
        for _ in 0..self.max_sweeps {
            let mut change = 0.0f64;
            for (k, &(i, j, b)) in self.pairs.iter().enumerate() {
                // Undo the previous increment along e_i - e_j, then project.
                let corr = state.pairs[k];
                let (xi, xj) = (x[i] + corr, x[j] - corr);
                let excess = xi - xj - b;
                let t = if excess > 0.0 { excess / 2.0 } else { 0.0 };
                let (ni, nj) = (xi - t, xj + t);
                change = change.max(math::abs(ni - x[i])).max(math::abs(nj - x[j]));
                x[i] = ni;
                x[j] = nj;
                state.pairs[k] = t;
            }
            let mut norm2 = 0.0;
            for i in 0..n {
                v[i] = math::hinge(x[i] + state.ball[i]);
                norm2 += v[i] * v[i];
            }
            let norm = math::sqrt(norm2);
            let s = if norm > self.radius {
                self.radius / norm
            } else {
                1.0
            };
            for i in 0..n {
                let p = v[i] * s;
                change = change.max(math::abs(p - x[i]));
                state.ball[i] = x[i] + state.ball[i] - p;
                x[i] = p;
            }
            if change <= 1e-13 * self.radius {
                break;
            }
        }
        x
    }

    fn fresh_state(&self, n: usize) -> DykstraState {
        DykstraState {
            pairs: vec![0.0; self.pairs.len()],
            ball: vec![0.0; n],
        }
    }
}

struct DykstraState {
    pairs: Vec<f64>,
    ball: Vec<f64>,
}

/// Exactly feasible version of `h`: Lipschitz minorant, then scaled into
/// the ball.
fn repair(h: &[f64], closed: &Matrix) -> Vec<f64> {
    let n = h.len() as f64;
    let clipped: Vec<f64> = h.iter().map(|&v| math::hinge(v)).collect();
    let mut g = lipschitz_minorant(&clipped, closed);
    let m2 = g.iter().map(|v| v * v).sum::<f64>() / n;
    if m2 > 1.0 {
        let s = 1.0 / math::sqrt(m2);
        g.iter_mut().for_each(|v| *v *= s);
    }
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Problem {
    projector: Projector,
    closed: Matrix,
}

impl Problem {
    fn new(distances: &DistanceMatrix, alpha: f64, lipschitz: f64, max_sweeps: usize) -> Self {
        let n = distances.n();
        let mut bound = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    bound.set(i, j, budget(alpha * lipschitz, distances.get(i, j)));
                }
            }
        }
        Problem {
            closed: shortest_path_closure(&bound),
            projector: Projector::new(&bound, math::sqrt(n as f64), max_sweeps),
        }
    }

    fn solve(
        &self,
        losses: &[f64],
        eta: f64,
        start: Option<&[f64]>,
        cfg: &PrimalOracleConfig,
    ) -> Result<PrimalWitness> {
        let n = losses.len();
        let nf = n as f64;
        let c: Vec<f64> = losses.iter().map(|l| (l - eta) / nf).collect();
        if c.iter().all(|&v| v <= 0.0) {
            return Ok(PrimalWitness {
                h: vec![0.0; n],
                value: 0.0,
            });
        }
        let c_max = c.iter().fold(0.0f64, |m, v| m.max(math::abs(*v)));
        // A unit step moves h by about a tenth of the ball radius.
        let step = 0.1 / c_max;
        let mut state = self.projector.fresh_state(n);
        let mut h = match start {
            Some(s) => self.projector.project(s, &mut state),
            None => vec![0.0; n],
        };
        let mut z = vec![0.0; n];
        for it in 0..cfg.max_iterations {
            // Longer steps later: on a linear objective this only speeds up
            // the ascent, which is a proximal-point method.
            let t = step * (1.0 + it as f64 / 50.0).min(200.0);
            for i in 0..n {
                z[i] = h[i] + t * c[i];
            }
            let next = self.projector.project(&z, &mut state);
            let moved = next
                .iter()
                .zip(&h)
                .fold(0.0f64, |m, (a, b)| m.max(math::abs(a - b)));
            h = next;
            if moved <= cfg.tolerance * (1.0 + t * c_max) {
                let g = repair(&h, &self.closed);
                return Ok(PrimalWitness {
                    value: dot(&c, &g),
                    h: g,
                });
            }
        }
        let g = repair(&h, &self.closed);
        Err(Error::NotConverged {
            iterations: cfg.max_iterations,
            best: Box::new(PrimalWitness {
                value: dot(&c, &g),
                h: g,
            }),
        })
    }
}

fn check_args(losses: &[f64], distances: &DistanceMatrix, alpha: f64, lipschitz: f64) -> Result<()> {
    if losses.is_empty() {
        return Err(Error::EmptySamples);
    }
    check_square("distance matrix", distances.as_matrix(), losses.len())?;
    if !(alpha > 0.0 && alpha <= 1.0) || !(lipschitz >= 0.0) {
        return Err(Error::invalid("robustness", "need alpha in (0, 1] and L >= 0"));
    }
    Ok(())
}

/// Worst-case weighting `h` and value of the inner maximization at a fixed
/// cutoff `eta`. Returns [`Error::NotConverged`] with the best feasible
/// witness when the ascent does not settle.
pub fn primal_inner_sup_oracle(
    losses: &[f64],
    distances: &DistanceMatrix,
    alpha: f64,
    lipschitz: f64,
    eta: f64,
    cfg: &PrimalOracleConfig,
) -> Result<PrimalWitness> {
    check_args(losses, distances, alpha, lipschitz)?;
    Problem::new(distances, alpha, lipschitz, cfg.max_sweeps).solve(losses, eta, None, cfg)
}

/// `min_{eta >= 0} (1/alpha) * sup_h(eta) + eta`, the estimator value
/// computed entirely from the primal side. The map is convex in `eta`, so a
/// golden-section search over `[0, max l]` suffices.
pub fn primal_robust_value(
    losses: &[f64],
    distances: &DistanceMatrix,
    alpha: f64,
    lipschitz: f64,
    cfg: &PrimalOracleConfig,
) -> Result<f64> {
    check_args(losses, distances, alpha, lipschitz)?;
    let problem = Problem::new(distances, alpha, lipschitz, cfg.max_sweeps);
    let mut warm: Option<Vec<f64>> = None;
    let mut f = |eta: f64| -> Result<f64> {
        let w = match problem.solve(losses, eta, warm.as_deref(), cfg) {
            Ok(w) => w,
            Err(Error::NotConverged { best, .. }) => *best,
            Err(e) => return Err(e),
        };
        let v = w.value / alpha + eta;
        warm = Some(w.h);
        Ok(v)
    };
    let top = losses.iter().cloned().fold(0.0, f64::max);
    let ratio = 0.5 * (math::sqrt(5.0) - 1.0);
    let (mut lo, mut hi) = (0.0, top);
    let mut m1 = hi - ratio * (hi - lo);
    let mut m2 = lo + ratio * (hi - lo);
    let mut f1 = f(m1)?;
    let mut f2 = f(m2)?;
    for _ in 0..45 {
        if f1 <= f2 {
            hi = m2;
            m2 = m1;
            f2 = f1;
            m1 = hi - ratio * (hi - lo);
            f1 = f(m1)?;
        } else {
            lo = m1;
            m1 = m2;
            f1 = f2;
            m2 = lo + ratio * (hi - lo);
            f2 = f(m2)?;
        }
    }
    let ends = f(0.0)?.min(f(top)?);
    Ok(f1.min(f2).min(ends))
}

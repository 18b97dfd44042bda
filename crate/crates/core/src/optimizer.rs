//! Batch AdaGrad over the model parameters and, for the Lipschitz
//! objectives, the transport matrix. The cutoff `eta` is not a parameter:
//! it is solved exactly at every step.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::distances::DistanceMatrix;
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::model::{self, LossKind, ModelParams};
use crate::objectives::{
    cvar_loss_weights, cvar_objective, erm_objective, solve_eta, DualState, Objective, RobustWeights,
    RobustnessConfig,
};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub adagrad_epsilon: f64,
    /// Recorded for provenance. Training starts from zeros and uses the full
    /// batch, so it draws no randomness.
    pub seed: u64,
    /// Stop early once the relative change of the objective drops below this.
    pub convergence_tol: Option<f64>,
    /// Learning rate for the transport matrix; defaults to `learning_rate`.
    pub transport_learning_rate: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            steps: 3000,
            adagrad_epsilon: 1e-10,
            seed: 0,
            convergence_tol: None,
            transport_learning_rate: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if !(self.adagrad_epsilon > 0.0) {
            return Err(Error::invalid("adagrad_epsilon", "must be positive"));
        }
        if let Some(lr) = self.transport_learning_rate {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::invalid("transport_learning_rate", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainTrace {
    /// Objective at the start of every step, before its update.
    pub objective: Vec<f64>,
    pub params: ModelParams,
    /// Final transport matrix and cutoff. ERM and CVaR carry an empty
    /// matrix; CVaR stores its optimal cutoff.
    pub dual: DualState,
    /// Zero without the `std` feature.
    pub wall_ms: u64,
}

/// One AdaGrad update: `accum += g^2; p -= lr * g / (sqrt(accum) + eps)`.
///
/// # Panics
/// If the three slices differ in length.
pub fn adagrad_step(params: &mut [f64], grad: &[f64], accum: &mut [f64], lr: f64, eps: f64) {
    assert!(
        params.len() == grad.len() && grad.len() == accum.len(),
        "adagrad shapes differ"
    );
    for ((p, &g), a) in params.iter_mut().zip(grad).zip(accum.iter_mut()) {
        *a += g * g;
        *p -= lr * g / (math::sqrt(*a) + eps);
    }
}

/// Stand-in for an infinite unit cost: its gradient pins `B_ij` at zero
/// and its square still fits in an `f64`.
const BLOCKED: f64 = 1e150;

struct Transport {
    b: Matrix,
    accum: Matrix,
    /// `(L/n) * C`, with zero where `C` is zero even for infinite `L`.
    unit_cost: Matrix,
    net: Vec<f64>,
    /// Transport cost term `(L/n) sum_ij C_ij B_ij` at the current `B`.
    cost: f64,
}

impl Transport {
    fn new(cost: &DistanceMatrix, lipschitz: f64) -> Self {
        let n = cost.n();
        let mut unit_cost = Matrix::zeros(n, n);
        for (u, &c) in unit_cost
            .as_mut_slice()
            .iter_mut()
            .zip(cost.as_matrix().as_slice())
        {
            *u = if c == 0.0 {
                0.0
            } else {
                (lipschitz * c / n as f64).min(BLOCKED)
            };
        }
        Transport {
            b: Matrix::zeros(n, n),
            accum: Matrix::zeros(n, n),
            unit_cost,
            net: vec![0.0; n],
            cost: 0.0,
        }
    }

    /// AdaGrad on `B` followed by projection onto `B >= 0`, and the new net
    /// flow and transport cost, all in one pass over the matrix. The diagonal
    /// has zero gradient and zero cost, so it stays at zero.
    fn step(&mut self, w: &[f64], alpha: f64, lr: f64, eps: f64) {
        const LANES: usize = 4;
        let n = w.len();
        let wa: Vec<f64> = w.iter().map(|v| v / alpha).collect();
        let mut inflow = vec![0.0; n];
        let mut cost = 0.0;
        for i in 0..n {
            let wi = wa[i];
            let b = self.b.row_mut(i);
            let acc = self.accum.row_mut(i);
            let uc = self.unit_cost.row(i);
            // Fixed-width partial sums keep the loop vectorizable and the
            // summation order deterministic.
            let mut out = [0.0; LANES];
            let mut row_cost = [0.0; LANES];
            for (j, ((bj, aj), (&cj, &wj))) in b
                .iter_mut()
                .zip(acc.iter_mut())
                .zip(uc.iter().zip(&wa))
                .enumerate()
            {
                let g = wj - wi + cj;
                *aj += g * g;
                let v = (*bj - lr * g / (math::sqrt(*aj) + eps)).max(0.0);
                *bj = v;
                out[j % LANES] += v;
                row_cost[j % LANES] += cj * v;
                inflow[j] += v;
            }
            self.net[i] = out.iter().sum();
            cost += row_cost.iter().sum::<f64>();
        }
        for (f, inc) in self.net.iter_mut().zip(&inflow) {
            *f -= inc;
        }
        self.cost = cost;
    }
}

/// Trains a model from zero parameters.
///
/// `d_x` is required by the two Lipschitz objectives and `d_c` by UV-DRO
/// only; both are ignored by ERM and CVaR.
pub fn train(
    data: &Dataset,
    d_x: Option<&DistanceMatrix>,
    d_c: Option<&DistanceMatrix>,
    cfg: &RobustnessConfig,
    tcfg: &TrainConfig,
    loss_kind: LossKind,
) -> Result<TrainTrace> {
    cfg.validate()?;
    tcfg.validate()?;
    data.validate()?;
    #[cfg(feature = "std")]
    let started = std::time::Instant::now();

    let n = data.n();
    let mut transport = match cfg.objective {
        Objective::Erm | Objective::CvarDro => None,
        Objective::CovshiftDro | Objective::UvDro => {
            let dx = d_x.ok_or_else(|| Error::invalid("d_x", "feature distances are required"))?;
            check_distances(dx, n)?;
            let cost = if cfg.objective == Objective::UvDro {
                let dc =
                    d_c.ok_or_else(|| Error::invalid("d_c", "unmeasured-variable distances are required"))?;
                check_distances(dc, n)?;
                dx.sum(dc)?
            } else {
                dx.clone()
            };
            Some(Transport::new(&cost, cfg.lipschitz))
        }
    };

    let mut params = ModelParams::zeros_for(data);
    let mut accum = vec![0.0; params.n_params()];
    let mut flat = params.to_flat();
    let lr_b = tcfg.transport_learning_rate.unwrap_or(tcfg.learning_rate);
    let mut trace = Vec::with_capacity(tcfg.steps);
    let uniform = vec![1.0 / n as f64; n];

    for step in 0..tcfg.steps {
        let losses = model::loss_vector(&params, data, loss_kind)?;
        let ridge = cfg.ridge * params.ridge_norm();
        let (value, weights, robust) = match (&transport, cfg.objective) {
            (None, Objective::CvarDro) => {
                let (v, _) = cvar_objective(&losses, cfg.alpha)?;
                (v + ridge, cvar_loss_weights(&losses, cfg.alpha)?, None)
            }
            (None, _) => (
                erm_objective(&losses, &params, cfg.ridge).total,
                uniform.clone(),
                None,
            ),
            (Some(t), _) => {
                let adjusted: Vec<f64> = losses.iter().zip(&t.net).map(|(l, f)| l - f).collect();
                let eta = solve_eta(&adjusted, cfg.alpha);
                let m2 = adjusted
                    .iter()
                    .map(|&a| {
                        let h = math::hinge(a - eta);
                        h * h
                    })
                    .sum::<f64>()
                    / n as f64;
                let v = math::sqrt(m2) / cfg.alpha + t.cost + eta + ridge;
                let RobustWeights(w) = RobustWeights::compute(&adjusted, eta);
                let sw = w.iter().map(|wi| wi / cfg.alpha).collect();
                (v, sw, Some(w))
            }
        };
        if !value.is_finite() {
            return Err(Error::NonFinite { step, value });
        }
        trace.push(value);

        let (_, mut grad) = model::weighted_loss_gradient(&params, data, loss_kind, &weights)?;
        crate::objectives::add_ridge_gradient(&mut grad, &params, cfg.ridge);
        adagrad_step(
            &mut flat,
            &grad.to_flat(),
            &mut accum,
            tcfg.learning_rate,
            tcfg.adagrad_epsilon,
        );
        params.copy_from_flat(&flat);
        if let (Some(t), Some(w)) = (transport.as_mut(), robust) {
            t.step(&w, cfg.alpha, lr_b, tcfg.adagrad_epsilon);
        }

        if let (Some(tol), [.., prev, last]) = (tcfg.convergence_tol, trace.as_slice()) {
            if math::abs(last - prev) <= tol * math::abs(*prev).max(f64::MIN_POSITIVE) {
                break;
            }
        }
    }

    let losses = model::loss_vector(&params, data, loss_kind)?;
    let dual = match transport {
        Some(t) => {
            let adjusted: Vec<f64> = losses.iter().zip(&t.net).map(|(l, f)| l - f).collect();
            DualState {
                eta: solve_eta(&adjusted, cfg.alpha),
                transport: t.b,
            }
        }
        None => DualState {
            transport: Matrix::zeros(0, 0),
            eta: match cfg.objective {
                Objective::CvarDro => cvar_objective(&losses, cfg.alpha)?.1,
                _ => 0.0,
            },
        },
    };

    #[cfg(feature = "std")]
    let wall_ms = started.elapsed().as_millis() as u64;
    #[cfg(not(feature = "std"))]
    let wall_ms = 0;
    Ok(TrainTrace {
        objective: trace,
        params,
        dual,
        wall_ms,
    })
}

fn check_distances(d: &DistanceMatrix, n: usize) -> Result<()> {
    if d.n() != n {
        return Err(Error::DimensionMismatch {
            what: "distance matrix",
            expected: n,
            actual: d.n(),
        });
    }
    Ok(())
}

//! The smoothed dual estimator of the worst-case risk over `(x, c)`:
//!
//! ```text
//! f(theta, B, eta) = (1/alpha) * sqrt( mean_i [ l_i - (B 1 - B^T 1)_i - eta ]_+^2 )
//!                  + (L/n) * sum_ij C_ij B_ij + eta + ridge * |w|^2
//! ```
//!
//! with `C = D_x + D_c`. Passing `D_c = 0` gives the covariate-shift variant.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::distances::DistanceMatrix;
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::model::{self, LossKind, ModelParams};

use super::{check_square, DualState, ObjectiveValue, RobustnessConfig};

/// Net outgoing flow `sum_j B_ij - sum_j B_ji` of every example.
pub fn net_flow(transport: &Matrix) -> Vec<f64> {
    let n = transport.rows();
    let mut out = vec![0.0; n];
    let mut inflow = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let row = transport.row(i);
        *o = math::sum(row);
        for (acc, &b) in inflow.iter_mut().zip(row) {
            *acc += b;
        }
    }
    for (o, inc) in out.iter_mut().zip(&inflow) {
        *o -= inc;
    }
    out
}

/// `sum_ij C_ij B_ij`, accumulated row by row.
pub fn transport_cost(cost: &DistanceMatrix, transport: &Matrix) -> f64 {
    let c = cost.as_matrix();
    (0..transport.rows()).fold(0.0, |acc, i| {
        acc + transport
            .row(i)
            .iter()
            .zip(c.row(i))
            .map(|(b, d)| b * d)
            .sum::<f64>()
    })
}

/// `(L/n) * raw`, with an unused infinite budget counting as zero.
pub(crate) fn scaled_cost(lipschitz: f64, n: usize, raw: f64) -> f64 {
    if raw == 0.0 {
        0.0
    } else {
        lipschitz * raw / n as f64
    }
}

fn hinge_moments(adjusted: &[f64], eta: f64) -> (f64, f64) {
    let (mut m1, mut m2) = (0.0, 0.0);
    for &a in adjusted {
        let h = math::hinge(a - eta);
        m1 += h;
        m2 += h * h;
    }
    let n = adjusted.len() as f64;
    (m1 / n, m2 / n)
}

/// `(1/alpha) * sqrt(mean[(a - eta)_+^2])`.
fn robust_term(adjusted: &[f64], eta: f64, alpha: f64) -> f64 {
    math::sqrt(hinge_moments(adjusted, eta).1) / alpha
}

/// Exact minimizer over `eta >= 0` of
/// `eta -> (1/alpha) * sqrt(mean[(a - eta)_+^2]) + eta`.
///
/// The map is convex, so this bisects on the sign of its right derivative
/// `1 - mean[(a - eta)_+] / (alpha * sqrt(mean[(a - eta)_+^2]))` over
/// `[0, max a]`; past `max a` the map is just `eta`.
pub fn solve_eta(adjusted: &[f64], alpha: f64) -> f64 {
    let top = adjusted.iter().cloned().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0.0;
    }
    let slope = |eta: f64| {
        let (m1, m2) = hinge_moments(adjusted, eta);
        if m2 <= 0.0 {
            1.0
        } else {
            1.0 - m1 / (alpha * math::sqrt(m2))
        }
    };
    if slope(0.0) >= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, top);
    let tol = 1e-12 * top.max(1.0);
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Derivative of the robust term with respect to each loss, before the
/// `1/alpha` factor: `w_i = (a_i - eta)_+ / (n * sqrt(mean[(a - eta)_+^2]))`.
/// All zeros when every hinge is inactive.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustWeights(pub Vec<f64>);

impl RobustWeights {
    pub fn compute(adjusted: &[f64], eta: f64) -> Self {
        let n = adjusted.len() as f64;
        let (_, m2) = hinge_moments(adjusted, eta);
        if m2 <= 0.0 {
            return RobustWeights(vec![0.0; adjusted.len()]);
        }
        let denom = n * math::sqrt(m2);
        RobustWeights(adjusted.iter().map(|&a| math::hinge(a - eta) / denom).collect())
    }
}

fn check_inputs(losses: &[f64], cost: &DistanceMatrix, dual: &DualState) -> Result<()> {
    let n = losses.len();
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    check_square("distance matrix", cost.as_matrix(), n)?;
    check_square("transport matrix", &dual.transport, n)?;
    dual.check()
}

/// Loss of every example after transport, `l_i - (B 1 - B^T 1)_i`.
pub(crate) fn adjusted_losses(losses: &[f64], transport: &Matrix) -> Vec<f64> {
    let flow = net_flow(transport);
    losses.iter().zip(&flow).map(|(l, f)| l - f).collect()
}

/// Estimator value at the given dual point, without the ridge term, for a
/// precombined cost `C = D_x + D_c`.
pub fn uvdro_value(
    losses: &[f64],
    cost: &DistanceMatrix,
    dual: &DualState,
    alpha: f64,
    lipschitz: f64,
) -> Result<ObjectiveValue> {
    check_inputs(losses, cost, dual)?;
    let adjusted = adjusted_losses(losses, &dual.transport);
    let robust = robust_term(&adjusted, dual.eta, alpha);
    let tc = scaled_cost(lipschitz, losses.len(), transport_cost(cost, &dual.transport));
    Ok(ObjectiveValue {
        total: robust + tc + dual.eta,
        robust_term: robust,
        transport_cost: tc,
        eta: dual.eta,
        ridge_term: 0.0,
    })
}

/// Same as [`uvdro_objective`] for a precombined cost matrix.
pub fn uvdro_objective_with_cost(
    losses: &[f64],
    cost: &DistanceMatrix,
    dual: &DualState,
    cfg: &RobustnessConfig,
    params: &ModelParams,
) -> Result<ObjectiveValue> {
    let mut v = uvdro_value(losses, cost, dual, cfg.alpha, cfg.lipschitz)?;
    v.ridge_term = cfg.ridge * params.ridge_norm();
    v.total += v.ridge_term;
    Ok(v)
}

/// Estimator value at `(params, dual)` given the losses of `params`.
pub fn uvdro_objective(
    losses: &[f64],
    d_x: &DistanceMatrix,
    d_c: &DistanceMatrix,
    dual: &DualState,
    cfg: &RobustnessConfig,
    params: &ModelParams,
) -> Result<ObjectiveValue> {
    let cost = d_x.sum(d_c)?;
    uvdro_objective_with_cost(losses, &cost, dual, cfg, params)
}

/// Analytic gradients of the estimator at `(params, dual)` with `dual.eta`
/// held fixed (it is the exact minimizer, so this is also the gradient of
/// the eta-minimized objective).
///
/// Returns `(grad_theta, grad_B)` with
/// `grad_theta = (1/alpha) sum_i w_i dl_i/dtheta + 2 ridge w` and
/// `grad_B[i][j] = (w_j - w_i)/alpha + (L/n) C_ij` off the diagonal.
#[allow(clippy::too_many_arguments)]
pub fn uvdro_gradients(
    data: &Dataset,
    params: &ModelParams,
    d_x: &DistanceMatrix,
    d_c: &DistanceMatrix,
    dual: &DualState,
    cfg: &RobustnessConfig,
    loss_kind: LossKind,
) -> Result<(ModelParams, Matrix)> {
    let n = data.n();
    let cost = d_x.sum(d_c)?;
    let losses = model::loss_vector(params, data, loss_kind)?;
    check_inputs(&losses, &cost, dual)?;
    let adjusted = adjusted_losses(&losses, &dual.transport);
    let RobustWeights(w) = RobustWeights::compute(&adjusted, dual.eta);
    let sample_weights: Vec<f64> = w.iter().map(|wi| wi / cfg.alpha).collect();
    let (_, mut grad_theta) = model::weighted_loss_gradient(params, data, loss_kind, &sample_weights)?;
    add_ridge_gradient(&mut grad_theta, params, cfg.ridge);

    let unit = if cfg.lipschitz.is_finite() {
        cfg.lipschitz / n as f64
    } else {
        return Err(Error::invalid(
            "lipschitz",
            "gradients need a finite Lipschitz constant",
        ));
    };
    let mut grad_b = Matrix::zeros(n, n);
    for i in 0..n {
        let c = cost.as_matrix().row(i);
        let row = grad_b.row_mut(i);
        for j in 0..n {
            if i != j {
                row[j] = (w[j] - w[i]) / cfg.alpha + unit * c[j];
            }
        }
    }
    Ok((grad_theta, grad_b))
}

pub(crate) fn add_ridge_gradient(grad: &mut ModelParams, params: &ModelParams, ridge: f64) {
    if ridge == 0.0 {
        return;
    }
    for (g, w) in grad
        .weights
        .as_mut_slice()
        .iter_mut()
        .zip(params.weights.as_slice())
    {
        *g += 2.0 * ridge * w;
    }
}

/// Removes mass moving in both directions between a pair: it changes no net
/// flow and only adds cost.
pub fn cancel_opposing_flows(transport: &mut Matrix) {
    let n = transport.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = transport.get(i, j).min(transport.get(j, i));
            if m > 0.0 {
                transport.set(i, j, transport.get(i, j) - m);
                transport.set(j, i, transport.get(j, i) - m);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Labels;
    use crate::objectives::Objective;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Grid + golden-section oracle for the cutoff, independent of the
    /// bisection above.
    fn eta_by_search(a: &[f64], alpha: f64) -> (f64, f64) {
        let f = |eta: f64| robust_term(a, eta, alpha) + eta;
        let top = a.iter().cloned().fold(0.0, f64::max);
        let grid = 2000;
        let mut best = (0.0, f(0.0));
        for k in 0..=grid {
            let e = top * k as f64 / grid as f64;
            let v = f(e);
            if v < best.1 {
                best = (e, v);
            }
        }
        let step = top / grid as f64;
        let (mut lo, mut hi) = ((best.0 - step).max(0.0), best.0 + step);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let m1 = hi - g * (hi - lo);
            let m2 = lo + g * (hi - lo);
            if f(m1) <= f(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let e = 0.5 * (lo + hi);
        (e, f(e))
    }

    fn zero_dist(n: usize) -> DistanceMatrix {
        DistanceMatrix::zeros(n)
    }

    #[test]
    fn direct_formula_without_transport() {
        let cfg = RobustnessConfig::new(Objective::UvDro, 0.5, 3.0, 0.0).unwrap();
        let d = zero_dist(2);
        let v = uvdro_objective(
            &[1.0, 3.0],
            &d,
            &d,
            &DualState::zeros(2),
            &cfg,
            &ModelParams::zeros(1, 1),
        )
        .unwrap();
        assert_relative_eq!(v.total, 2.0 * 5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(v.total, 4.4721, epsilon = 1e-4);
    }

    #[test]
    fn eta_examples() {
        assert_eq!(solve_eta(&[0.0, 0.0, 0.0], 0.3), 0.0);
        let eta = solve_eta(&[1.0, 3.0], 0.5);
        assert_relative_eq!(eta, 3.0, epsilon = 1e-8);
        let (oracle_eta, oracle_val) = eta_by_search(&[1.0, 3.0], 0.5);
        assert_relative_eq!(oracle_eta, 3.0, epsilon = 1e-6);
        assert_relative_eq!(oracle_val, 3.0, epsilon = 1e-9);
        assert_relative_eq!(robust_term(&[1.0, 3.0], eta, 0.5) + eta, 3.0, epsilon = 1e-8);
    }

    #[test]
    fn eta_at_alpha_point_nine_beats_grid() {
        let a = [1.0, 3.0];
        let eta = solve_eta(&a, 0.9);
        let f = |e: f64| robust_term(&a, e, 0.9) + e;
        let (_, oracle_val) = eta_by_search(&a, 0.9);
        assert!(f(eta) <= oracle_val + 1e-12);
        for k in 0..=3000 {
            let e = 4.0 * k as f64 / 3000.0;
            assert!(f(eta) <= f(e) + 1e-12);
        }
    }

    #[test]
    fn infeasible_dual_rejected() {
        let cfg = RobustnessConfig::new(Objective::UvDro, 0.5, 1.0, 0.0).unwrap();
        let mut dual = DualState::zeros(2);
        dual.transport.set(0, 1, -0.5);
        let d = zero_dist(2);
        assert!(matches!(
            uvdro_objective(&[1.0, 2.0], &d, &d, &dual, &cfg, &ModelParams::zeros(1, 1)),
            Err(Error::InfeasibleDual(_))
        ));
        assert!(uvdro_objective(
            &[1.0, 2.0, 3.0],
            &d,
            &d,
            &DualState::zeros(2),
            &cfg,
            &ModelParams::zeros(1, 1)
        )
        .is_err());
    }

    #[test]
    fn net_flow_is_antisymmetric_in_direction() {
        let b = Matrix::from_rows(&[[0.0, 2.0, 0.0], [0.5, 0.0, 1.0], [0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(net_flow(&b), vec![1.5, -0.5, -1.0]);
    }

    #[test]
    fn cancel_keeps_net_flow() {
        let mut b = Matrix::from_rows(&[[0.0, 2.0, 0.3], [0.5, 0.0, 1.0], [0.4, 0.0, 0.0]]).unwrap();
        let before = net_flow(&b);
        cancel_opposing_flows(&mut b);
        for (a, e) in net_flow(&b).iter().zip(&before) {
            assert_relative_eq!(a, e, epsilon = 1e-15);
        }
        assert_eq!(b.get(1, 0), 0.0);
        assert_eq!(b.get(0, 2), 0.0);
    }

    fn tiny_regression() -> Dataset {
        let x = Matrix::from_rows(&[[0.5, 1.0], [-1.0, 0.2], [2.0, -0.4], [0.1, 0.1], [-0.3, 1.5]]).unwrap();
        Dataset::new(x, Labels::Real(vec![1.0, -0.5, 2.0, 0.3, 0.0])).unwrap()
    }

    #[test]
    fn inactive_hinges_leave_only_ridge() {
        let ds = tiny_regression();
        let mut p = ModelParams::zeros(2, 1);
        p.copy_from_flat(&[0.4, -0.7, 0.1]);
        let cfg = RobustnessConfig::new(Objective::UvDro, 0.3, 1.0, 0.25).unwrap();
        let mut dual = DualState::zeros(5);
        dual.eta = 1e6;
        let d = crate::distances::pairwise_euclidean(&ds.features);
        let (g, _) = uvdro_gradients(&ds, &p, &d, &zero_dist(5), &dual, &cfg, LossKind::Squared).unwrap();
        assert_relative_eq!(g.weights.get(0, 0), 2.0 * 0.25 * 0.4, epsilon = 1e-15);
        assert_relative_eq!(g.weights.get(1, 0), 2.0 * 0.25 * -0.7, epsilon = 1e-15);
        assert_eq!(g.bias[0], 0.0);
    }

    #[test]
    fn symmetric_situation_gives_symmetric_transport_gradient() {
        let x = Matrix::from_rows(&[[1.0], [1.0], [1.0], [1.0]]).unwrap();
        let ds = Dataset::new(x, Labels::Real(vec![0.0; 4])).unwrap();
        let mut p = ModelParams::zeros(1, 1);
        p.bias[0] = 1.5;
        let uniform = DistanceMatrix::from_fn(4, |_, _| 1.0);
        let cfg = RobustnessConfig::new(Objective::UvDro, 0.5, 1.0, 0.0).unwrap();
        let (_, gb) = uvdro_gradients(
            &ds,
            &p,
            &uniform,
            &zero_dist(4),
            &DualState::zeros(4),
            &cfg,
            LossKind::Squared,
        )
        .unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(gb.get(i, j), gb.get(j, i));
            }
        }
    }

    proptest! {
        #[test]
        fn eta_is_globally_optimal(a in proptest::collection::vec(-2.0f64..6.0, 1..12), alpha in 0.05f64..=1.0) {
            let eta = solve_eta(&a, alpha);
            let (_, oracle) = eta_by_search(&a, alpha);
            let v = robust_term(&a, eta, alpha) + eta;
            prop_assert!(eta >= 0.0);
            prop_assert!(v <= oracle + 1e-9 * oracle.abs().max(1.0));
        }

        #[test]
        fn covshift_is_uv_with_zero_uv_distances(
            l in proptest::collection::vec(0.0f64..5.0, 4),
            b in proptest::collection::vec(0.0f64..0.5, 16),
            pts in proptest::collection::vec(-2.0f64..2.0, 4),
        ) {
            let x = Matrix::from_vec(4, 1, pts).unwrap();
            let dx = crate::distances::pairwise_euclidean(&x);
            let mut t = Matrix::from_vec(4, 4, b).unwrap();
            for i in 0..4 { t.set(i, i, 0.0); }
            let adjusted = adjusted_losses(&l, &t);
            let dual = DualState { eta: solve_eta(&adjusted, 0.3), transport: t };
            let cfg = RobustnessConfig::new(Objective::CovshiftDro, 0.3, 1.0, 0.0).unwrap();
            let p = ModelParams::zeros(1, 1);
            let a = uvdro_objective(&l, &dx, &zero_dist(4), &dual, &cfg, &p).unwrap();
            let c = uvdro_objective_with_cost(&l, &dx, &dual, &cfg, &p).unwrap();
            prop_assert_eq!(a.total.to_bits(), c.total.to_bits());
        }
    }
}

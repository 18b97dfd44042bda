use crate::math;
use crate::model::ModelParams;

use super::ObjectiveValue;

/// Mean loss plus `ridge * |weights|^2`.
pub fn erm_objective(losses: &[f64], params: &ModelParams, ridge: f64) -> ObjectiveValue {
    let mean = math::mean(losses);
    let ridge_term = ridge * params.ridge_norm();
    ObjectiveValue {
        total: mean + ridge_term,
        robust_term: mean,
        transport_cost: 0.0,
        eta: 0.0,
        ridge_term,
    }
}

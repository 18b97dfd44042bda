//! Linear regression and multinomial logistic regression.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;

/// Probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` before taking
/// the log, so every log-loss is at most `-ln(1e-12) ~= 27.63`.
pub const PROB_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    Squared,
    Log,
}

impl LossKind {
    /// The natural loss for a label type.
    pub fn for_labels(labels: &Labels) -> LossKind {
        match labels {
            Labels::Real(_) => LossKind::Squared,
            Labels::Classes { .. } => LossKind::Log,
        }
    }
}

/// `weights` is `d x K` (K = 1 for regression), `bias` has length K.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelParams {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(d: usize, k: usize) -> Self {
        ModelParams {
            weights: Matrix::zeros(d, k),
            bias: vec![0.0; k],
        }
    }

    /// Zero-initialized parameters shaped for `data`.
    pub fn zeros_for(data: &Dataset) -> Self {
        Self::zeros(data.d(), data.labels.n_outputs())
    }

    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::DimensionMismatch {
                what: "bias",
                expected: weights.cols(),
                actual: bias.len(),
            });
        }
        let p = ModelParams { weights, bias };
        if !p.is_finite() {
            return Err(Error::invalid("model parameters", "non-finite entry"));
        }
        Ok(p)
    }

    pub fn d(&self) -> usize {
        self.weights.rows()
    }

    pub fn k(&self) -> usize {
        self.weights.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }

    /// Squared L2 norm of the weights; the bias is not penalized.
    pub fn ridge_norm(&self) -> f64 {
        self.weights.as_slice().iter().map(|w| w * w).sum()
    }

    pub fn n_params(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }

    /// Weights (row-major) followed by the bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend_from_slice(self.weights.as_slice());
        v.extend_from_slice(&self.bias);
        v
    }

    pub fn copy_from_flat(&mut self, flat: &[f64]) {
        let nw = self.weights.as_slice().len();
        self.weights.as_mut_slice().copy_from_slice(&flat[..nw]);
        self.bias.copy_from_slice(&flat[nw..]);
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.d() {
            return Err(Error::DimensionMismatch {
                what: "feature dimension",
                expected: self.d(),
                actual: features.cols(),
            });
        }
        Ok(())
    }
}

/// Raw scores `x W + b`, one row per example.
pub fn scores(params: &ModelParams, features: &Matrix) -> Result<Matrix> {
    params.check_features(features)?;
    let k = params.k();
    let mut out = Matrix::zeros(features.rows(), k);
    for i in 0..features.rows() {
        let x = features.row(i);
        let row = out.row_mut(i);
        row.copy_from_slice(&params.bias);
        for (a, &xa) in x.iter().enumerate() {
            if xa == 0.0 {
                continue;
            }
            let w = params.weights.row(a);
            for (r, &wk) in row.iter_mut().zip(w) {
                *r += xa * wk;
            }
        }
    }
    Ok(out)
}

/// In-place numerically stable softmax of one score row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = math::exp(*v - max);
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// Predictions: `x w + b` for a single-output model, softmax class
/// probabilities otherwise.
pub fn predict(params: &ModelParams, features: &Matrix) -> Result<Matrix> {
    let mut s = scores(params, features)?;
    if params.k() > 1 {
        for i in 0..s.rows() {
            softmax_in_place(s.row_mut(i));
        }
    }
    Ok(s)
}

fn check_kind(data: &Dataset, kind: LossKind) -> Result<()> {
    match (&data.labels, kind) {
        (Labels::Real(_), LossKind::Squared) | (Labels::Classes { .. }, LossKind::Log) => Ok(()),
        _ => Err(Error::invalid(
            "loss kind",
            "squared loss needs real labels and log loss needs class labels",
        )),
    }
}

#[inline]
fn clipped_log_loss(p: f64) -> f64 {
    -math::ln(p.clamp(PROB_CLIP, 1.0 - PROB_CLIP))
}

/// Per-example nonnegative losses.
pub fn loss_vector(params: &ModelParams, data: &Dataset, kind: LossKind) -> Result<Vec<f64>> {
    check_kind(data, kind)?;
    let pred = predict(params, &data.features)?;
    Ok(losses_from_predictions(&pred, &data.labels))
}

fn losses_from_predictions(pred: &Matrix, labels: &Labels) -> Vec<f64> {
    match labels {
        Labels::Real(y) => (0..pred.rows())
            .map(|i| {
                let r = pred.get(i, 0) - y[i];
                r * r
            })
            .collect(),
        Labels::Classes { labels, .. } => (0..pred.rows())
            .map(|i| clipped_log_loss(pred.get(i, labels[i])))
            .collect(),
    }
}

/// Losses and the gradient of `sum_i sample_weights[i] * loss_i` with
/// respect to the parameters.
pub fn weighted_loss_gradient(
    params: &ModelParams,
    data: &Dataset,
    kind: LossKind,
    sample_weights: &[f64],
) -> Result<(Vec<f64>, ModelParams)> {
    check_kind(data, kind)?;
    if sample_weights.len() != data.n() {
        return Err(Error::DimensionMismatch {
            what: "sample weights",
            expected: data.n(),
            actual: sample_weights.len(),
        });
    }
    let pred = predict(params, &data.features)?;
    let losses = losses_from_predictions(&pred, &data.labels);
    let mut grad = ModelParams::zeros(params.d(), params.k());
    let k = params.k();
    let mut dscore = vec![0.0; k];
    for i in 0..data.n() {
        let wi = sample_weights[i];
        if wi == 0.0 {
            continue;
        }
        match &data.labels {
            Labels::Real(y) => dscore[0] = 2.0 * (pred.get(i, 0) - y[i]),
            Labels::Classes { labels, .. } => {
                let py = pred.get(i, labels[i]);
                if py <= PROB_CLIP || py >= 1.0 - PROB_CLIP {
                    // clipped region: the loss is locally constant
                    continue;
                }
                for (c, ds) in dscore.iter_mut().enumerate() {
                    *ds = pred.get(i, c);
                }
                dscore[labels[i]] -= 1.0;
            }
        }
        for (d, g) in dscore.iter_mut().zip(grad.bias.iter_mut()) {
            *d *= wi;
            *g += *d;
        }
        for (a, &xa) in data.features.row(i).iter().enumerate() {
            if xa == 0.0 {
                continue;
            }
            for (g, &ds) in grad.weights.row_mut(a).iter_mut().zip(&dscore) {
                *g += xa * ds;
            }
        }
    }
    Ok((losses, grad))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    pub mean_loss: f64,
    /// Classification only.
    pub accuracy: Option<f64>,
    /// Regression only.
    pub mse: Option<f64>,
    /// Regression only: `|w_i| / sum_j |w_j|`, bias excluded.
    pub relative_weights: Option<Vec<f64>>,
}

pub fn relative_weights(params: &ModelParams) -> Vec<f64> {
    let abs: Vec<f64> = (0..params.d())
        .map(|a| params.weights.row(a).iter().map(|w| math::abs(*w)).sum())
        .collect();
    let total: f64 = abs.iter().sum();
    if total == 0.0 {
        return vec![0.0; abs.len()];
    }
    abs.into_iter().map(|a| a / total).collect()
}

pub fn evaluate(params: &ModelParams, data: &Dataset, kind: LossKind) -> Result<Metrics> {
    check_kind(data, kind)?;
    let pred = predict(params, &data.features)?;
    let losses = losses_from_predictions(&pred, &data.labels);
    let mean_loss = math::mean(&losses);
    Ok(match &data.labels {
        Labels::Real(_) => Metrics {
            mean_loss,
            accuracy: None,
            mse: Some(mean_loss),
            relative_weights: Some(relative_weights(params)),
        },
        Labels::Classes { labels, .. } => {
            let correct = (0..pred.rows())
                .filter(|&i| argmax(pred.row(i)) == labels[i])
                .count();
            Metrics {
                mean_loss,
                accuracy: Some(correct as f64 / pred.rows() as f64),
                mse: None,
                relative_weights: None,
            }
        }
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

//! L2-regularized logistic regression by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::{sigmoid, LearnError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.bias
            + self
                .weights
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LogisticParams {
    pub l2: f64,
    pub epochs: usize,
    pub step: f64,
}

impl LogisticParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(LearnError::InvalidHyperparameter(format!("l2 {}", self.l2)));
        }
        if self.epochs == 0 || self.epochs > 1_000_000 {
            return Err(LearnError::InvalidHyperparameter(format!(
                "epochs {}",
                self.epochs
            )));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(LearnError::InvalidHyperparameter(format!(
                "step {}",
                self.step
            )));
        }
        Ok(())
    }
}

/// Mean logistic loss plus (l2/2)||w||^2; the bias is unpenalized.
pub fn logistic_loss(
    model: &LinearModel,
    values: &[f64],
    labels: &[bool],
    l2: f64,
) -> f64 {
    let d = model.weights.len();
    let n = labels.len();
    let mut total = 0.0;
    for i in 0..n {
        let m = model.margin(&values[i * d..(i + 1) * d]);
        let z = if labels[i] { m } else { -m };
        total += if z > 0.0 {
            (-z).exp().ln_1p()
        } else {
            -z + z.exp().ln_1p()
        };
    }
    total / n as f64 + 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Gradient descent from zero until the gradient norm drops below 1e-6 or
/// the epoch cap is hit.
pub fn train_logistic(
    values: &[f64],
    labels: &[bool],
    n_cols: usize,
    params: &LogisticParams,
) -> Result<LinearModel, LearnError> {
    params.validate()?;
    let n = labels.len();
    if n == 0 {
        return Err(LearnError::TooFewSamples(0));
    }
    let mut model = LinearModel {
        weights: vec![0.0; n_cols],
        bias: 0.0,
    };
    let mut grad_w = vec![0.0; n_cols];
    for _ in 0..params.epochs {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for i in 0..n {
            let row = &values[i * n_cols..(i + 1) * n_cols];
            let err = sigmoid(model.margin(row)) - f64::from(labels[i]);
            for (g, v) in grad_w.iter_mut().zip(row) {
                *g += err * v;
            }
            grad_b += err;
        }
        let inv_n = 1.0 / n as f64;
        let mut norm_sq = 0.0;
        for (g, w) in grad_w.iter_mut().zip(&model.weights) {
            *g = *g * inv_n + params.l2 * w;
            norm_sq += *g * *g;
        }
        grad_b *= inv_n;
        norm_sq += grad_b * grad_b;
        if !norm_sq.is_finite() {
            return Err(LearnError::NonFiniteLoss("logistic gradient".into()));
        }
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= params.step * g;
        }
        model.bias -= params.step * grad_b;
        if norm_sq.sqrt() < 1e-6 {
            break;
        }
    }
    Ok(model)
}

//! One-hidden-layer perceptron: rectifier hidden units, sigmoid output,
//! binary cross-entropy, seeded mini-batch gradient descent.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, LearnError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub n_inputs: usize,
    pub hidden_units: usize,
    /// Row-major `hidden_units x n_inputs`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpModel {
    /// Pre-sigmoid output.
    pub fn margin(&self, x: &[f64]) -> f64 {
        let mut out = self.b2;
        for h in 0..self.hidden_units {
            let mut z = self.b1[h];
            let row = &self.w1[h * self.n_inputs..(h + 1) * self.n_inputs];
            for (w, v) in row.iter().zip(x) {
                z += w * v;
            }
            if z > 0.0 {
                out += self.w2[h] * z;
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Flat parameter view in (w1, b1, w2, b2) order; the gradient vector
    /// from [`loss_and_gradients`] uses the same layout.
    pub fn get_parameter(&self, idx: usize) -> f64 {
        let (a, b, c) = (self.w1.len(), self.b1.len(), self.w2.len());
        if idx < a {
            self.w1[idx]
        } else if idx < a + b {
            self.b1[idx - a]
        } else if idx < a + b + c {
            self.w2[idx - a - b]
        } else {
            self.b2
        }
    }

    pub fn set_parameter(&mut self, idx: usize, value: f64) {
        let (a, b, c) = (self.w1.len(), self.b1.len(), self.w2.len());
        if idx < a {
            self.w1[idx] = value;
        } else if idx < a + b {
            self.b1[idx - a] = value;
        } else if idx < a + b + c {
            self.w2[idx - a - b] = value;
        } else {
            self.b2 = value;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MlpParams {
    pub hidden_units: usize,
    pub epochs: usize,
    pub step: f64,
    pub batch: usize,
}

impl MlpParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        if self.hidden_units == 0 || self.hidden_units > 4096 {
            return Err(LearnError::InvalidHyperparameter(format!(
                "hidden_units {}",
                self.hidden_units
            )));
        }
        if self.epochs == 0 || self.epochs > 100_000 {
            return Err(LearnError::InvalidHyperparameter(format!(
                "epochs {}",
                self.epochs
            )));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(LearnError::InvalidHyperparameter(format!("step {}", self.step)));
        }
        if self.batch == 0 {
            return Err(LearnError::InvalidHyperparameter("batch 0".into()));
        }
        Ok(())
    }
}

/// Seeded uniform init with the usual fan-based bounds, zero biases.
pub fn init_mlp(n_inputs: usize, hidden_units: usize, seed: u64) -> MlpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound1 = (6.0 / (n_inputs + hidden_units) as f64).sqrt();
    let bound2 = (6.0 / (hidden_units + 1) as f64).sqrt();
    let mut uniform = |b: f64| rng.random::<f64>() * 2.0 * b - b;
    let w1 = (0..n_inputs * hidden_units).map(|_| uniform(bound1)).collect();
    let w2 = (0..hidden_units).map(|_| uniform(bound2)).collect();
    MlpModel {
        n_inputs,
        hidden_units,
        w1,
        b1: vec![0.0; hidden_units],
        w2,
        b2: 0.0,
    }
}

/// Mean binary cross-entropy over the batch and its gradient with respect
/// to every parameter, in [`MlpModel::get_parameter`] order.
pub fn loss_and_gradients(
    model: &MlpModel,
    values: &[f64],
    labels: &[bool],
    rows: &[usize],
) -> (f64, Vec<f64>) {
    let d = model.n_inputs;
    let h = model.hidden_units;
    let mut g_w1 = vec![0.0; model.w1.len()];
    let mut g_b1 = vec![0.0; h];
    let mut g_w2 = vec![0.0; h];
    let mut g_b2 = 0.0;
    let mut loss = 0.0;
    let mut hidden = vec![0.0; h];

    for &i in rows {
        let x = &values[i * d..(i + 1) * d];
        let mut out = model.b2;
        for (j, hval) in hidden.iter_mut().enumerate() {
            let mut z = model.b1[j];
            let row = &model.w1[j * d..(j + 1) * d];
            for (w, v) in row.iter().zip(x) {
                z += w * v;
            }
            *hval = if z > 0.0 { z } else { 0.0 };
            out += model.w2[j] * *hval;
        }
        let y = f64::from(labels[i]);
        let zrel = if labels[i] { out } else { -out };
        loss += if zrel > 0.0 {
            (-zrel).exp().ln_1p()
        } else {
            -zrel + zrel.exp().ln_1p()
        };
        let delta = sigmoid(out) - y; // dBCE/dout
        g_b2 += delta;
        for j in 0..h {
            g_w2[j] += delta * hidden[j];
            if hidden[j] > 0.0 {
                let back = delta * model.w2[j];
                g_b1[j] += back;
                let grad_row = &mut g_w1[j * d..(j + 1) * d];
                for (g, v) in grad_row.iter_mut().zip(x) {
                    *g += back * v;
                }
            }
        }
    }

    let inv = 1.0 / rows.len() as f64;
    let mut grads = Vec::with_capacity(model.parameter_count());
    grads.extend(g_w1.iter().map(|g| g * inv));
    grads.extend(g_b1.iter().map(|g| g * inv));
    grads.extend(g_w2.iter().map(|g| g * inv));
    grads.push(g_b2 * inv);
    (loss * inv, grads)
}

pub fn train_mlp(
    values: &[f64],
    labels: &[bool],
    n_cols: usize,
    params: &MlpParams,
    seed: u64,
) -> Result<MlpModel, LearnError> {
    params.validate()?;
    let n = labels.len();
    if n == 0 {
        return Err(LearnError::TooFewSamples(0));
    }
    let mut model = init_mlp(n_cols, params.hidden_units, seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);

    for _epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch) {
            let (loss, grads) = loss_and_gradients(&model, values, labels, batch);
            if !loss.is_finite() {
                return Err(LearnError::NonFiniteLoss(format!("mlp batch loss {loss}")));
            }
            for (idx, g) in grads.iter().enumerate() {
                let p = model.get_parameter(idx);
                model.set_parameter(idx, p - params.step * g);
            }
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_match_central_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (n, d, h) = (16, 4, 5);
        let values: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
        let rows: Vec<usize> = (0..n).collect();

        for config in 0..20 {
            let mut model = init_mlp(d, h, 100 + config);
            // Random nonzero biases so every parameter class is exercised.
            for j in 0..h {
                model.b1[j] = rng.random::<f64>() - 0.5;
            }
            model.b2 = rng.random::<f64>() - 0.5;
            let (_, analytic) = loss_and_gradients(&model, &values, &labels, &rows);
            let eps = 1e-5;
            let mut max_rel = 0.0f64;
            for idx in 0..model.parameter_count() {
                let orig = model.get_parameter(idx);
                model.set_parameter(idx, orig + eps);
                let (up, _) = loss_and_gradients(&model, &values, &labels, &rows);
                model.set_parameter(idx, orig - eps);
                let (down, _) = loss_and_gradients(&model, &values, &labels, &rows);
                model.set_parameter(idx, orig);
                let numeric = (up - down) / (2.0 * eps);
                let denom = analytic[idx].abs().max(numeric.abs()).max(1e-8);
                max_rel = max_rel.max((analytic[idx] - numeric).abs() / denom);
            }
            assert!(max_rel < 1e-4, "config {config}: max relative error {max_rel}");
        }
    }

    #[test]
    fn learns_a_separable_problem() {
        let n = 80;
        let values: Vec<f64> = (0..n)
            .flat_map(|i| {
                let x = i as f64 / n as f64 - 0.5;
                [x, -x]
            })
            .collect();
        let labels: Vec<bool> = (0..n).map(|i| i >= n / 2).collect();
        let model = train_mlp(
            &values,
            &labels,
            2,
            &MlpParams { hidden_units: 8, epochs: 300, step: 0.5, batch: 16 },
            7,
        )
        .unwrap();
        let correct = (0..n)
            .filter(|&i| {
                let x = i as f64 / n as f64 - 0.5;
                (model.margin(&[x, -x]) > 0.0) == labels[i]
            })
            .count();
        assert!(correct as f64 / n as f64 > 0.95, "{correct}/{n}");
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let values: Vec<f64> = (0..40).map(|i| (i % 7) as f64).collect();
        let labels: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let p = MlpParams { hidden_units: 4, epochs: 5, step: 0.1, batch: 8 };
        let a = train_mlp(&values, &labels, 1, &p, 42).unwrap();
        let b = train_mlp(&values, &labels, 1, &p, 42).unwrap();
        assert_eq!(a, b);
    }
}

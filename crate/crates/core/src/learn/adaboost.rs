//! SAMME boosting over depth-1 decision stumps.

use serde::{Deserialize, Serialize};

use super::gbt::presort_columns;
use super::LearnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    /// Vote emitted when `x[feature] < threshold`; the other side votes the
    /// opposite sign.
    pub left_vote: f64,
    pub alpha: f64,
}

impl Stump {
    fn vote(&self, x: &[f64]) -> f64 {
        if x[self.feature] < self.threshold {
            self.left_vote
        } else {
            -self.left_vote
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    pub stumps: Vec<Stump>,
}

impl AdaBoostModel {
    /// Weighted-vote margin; probability is sigmoid of this.
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.stumps.iter().map(|s| s.alpha * s.vote(x)).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdaBoostParams {
    pub n_stumps: usize,
}

impl AdaBoostParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        if self.n_stumps == 0 || self.n_stumps > 10_000 {
            return Err(LearnError::InvalidHyperparameter(format!(
                "n_stumps {}",
                self.n_stumps
            )));
        }
        Ok(())
    }
}

/// Best stump under sample weights: scan presorted columns accumulating the
/// weighted class mass left of each candidate threshold.
fn best_stump(
    values: &[f64],
    n_cols: usize,
    sorted: &[Vec<u32>],
    labels: &[bool],
    weights: &[f64],
) -> Option<(Stump, f64)> {
    let total_pos: f64 = labels
        .iter()
        .zip(weights)
        .filter(|(&y, _)| y)
        .map(|(_, w)| w)
        .sum();
    let total = weights.iter().sum::<f64>();
    let total_neg = total - total_pos;

    let mut best: Option<(f64, usize, f64, f64)> = None; // err, feature, threshold, left_vote
    for (j, order) in sorted.iter().enumerate() {
        let mut pos_left = 0.0;
        let mut neg_left = 0.0;
        let mut prev = f64::NAN;
        for &r32 in order {
            let r = r32 as usize;
            let v = values[r * n_cols + j];
            if !prev.is_nan() && v > prev {
                // Stump voting +1 on the left errs on left negatives and
                // right positives; the mirrored stump errs on the rest.
                let err_pos_left = neg_left + (total_pos - pos_left);
                let err_neg_left = pos_left + (total_neg - neg_left);
                let threshold = 0.5 * (prev + v);
                for (err, vote) in [(err_pos_left, 1.0), (err_neg_left, -1.0)] {
                    if best.map(|(e, _, _, _)| err < e).unwrap_or(true) {
                        best = Some((err, j, threshold, vote));
                    }
                }
            }
            if labels[r] {
                pos_left += weights[r];
            } else {
                neg_left += weights[r];
            }
            prev = v;
        }
    }
    best.map(|(err, feature, threshold, left_vote)| {
        (
            Stump {
                feature,
                threshold,
                left_vote,
                alpha: 0.0,
            },
            err / total,
        )
    })
}

pub fn train_adaboost(
    values: &[f64],
    labels: &[bool],
    n_cols: usize,
    params: &AdaBoostParams,
) -> Result<AdaBoostModel, LearnError> {
    params.validate()?;
    let n = labels.len();
    if n == 0 {
        return Err(LearnError::TooFewSamples(0));
    }
    let sorted = presort_columns(values, n, n_cols);
    let mut weights = vec![1.0 / n as f64; n];
    let mut stumps = Vec::new();

    for _ in 0..params.n_stumps {
        let Some((mut stump, err)) = best_stump(values, n_cols, &sorted, labels, &weights)
        else {
            break;
        };
        if !err.is_finite() {
            return Err(LearnError::NonFiniteLoss(format!("stump error {err}")));
        }
        if err >= 0.5 {
            break;
        }
        let bounded = err.max(1e-10);
        stump.alpha = ((1.0 - bounded) / bounded).ln();
        let alpha = stump.alpha;
        let final_round = err <= 1e-10;
        // Reweight: misclassified rows gain mass.
        let mut z = 0.0;
        for i in 0..n {
            let signed = if labels[i] { 1.0 } else { -1.0 };
            let correct = stump.vote(&values[i * n_cols..(i + 1) * n_cols]) * signed > 0.0;
            if !correct {
                weights[i] *= alpha.exp();
            }
            z += weights[i];
        }
        for w in weights.iter_mut() {
            *w /= z;
        }
        stumps.push(stump);
        if final_round {
            break;
        }
    }
    Ok(AdaBoostModel { stumps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_single_feature_split_is_found() {
        let n = 40;
        let values: Vec<f64> = (0..n).flat_map(|i| [i as f64, 1.0]).collect();
        let labels: Vec<bool> = (0..n).map(|i| i >= 20).collect();
        let model = train_adaboost(&values, &labels, 2, &AdaBoostParams { n_stumps: 10 }).unwrap();
        // Separable: a single confident stump suffices.
        assert_eq!(model.stumps.len(), 1);
        let s = &model.stumps[0];
        assert_eq!(s.feature, 0);
        assert!((s.threshold - 19.5).abs() < 1e-12);
        assert_eq!(s.left_vote, -1.0);
        for i in 0..n {
            let m = model.margin(&[i as f64, 1.0]);
            assert_eq!(m > 0.0, labels[i]);
        }
    }

    #[test]
    fn xor_needs_more_than_one_stump() {
        // Stumps cannot separate XOR individually, but boosting mixes them.
        let pts = [
            ([0.0, 0.0], false),
            ([0.0, 1.0], true),
            ([1.0, 0.0], true),
            ([1.0, 1.0], false),
        ];
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..10 {
            for (x, y) in pts {
                values.extend_from_slice(&x);
                labels.push(y);
            }
        }
        let model =
            train_adaboost(&values, &labels, 2, &AdaBoostParams { n_stumps: 50 }).unwrap();
        assert!(model.stumps.len() > 1);
    }

    #[test]
    fn weights_concentrate_on_hard_rows() {
        let values: Vec<f64> = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        // One contrarian row (index 3).
        let labels = vec![false, false, false, true, true, true, true, true];
        let model = train_adaboost(&values, &labels, 1, &AdaBoostParams { n_stumps: 20 }).unwrap();
        // All rows classified correctly by the ensemble despite noise.
        let correct = (0..8)
            .filter(|&i| (model.margin(&values[i..=i]) > 0.0) == labels[i])
            .count();
        assert!(correct >= 7);
    }

    #[test]
    fn deterministic() {
        let values: Vec<f64> = (0..60).map(|i| (i * 37 % 13) as f64).collect();
        let labels: Vec<bool> = (0..60).map(|i| i % 3 == 0).collect();
        let p = AdaBoostParams { n_stumps: 15 };
        assert_eq!(
            train_adaboost(&values, &labels, 1, &p).unwrap(),
            train_adaboost(&values, &labels, 1, &p).unwrap()
        );
    }
}

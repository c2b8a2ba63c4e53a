//! Model suite behind one probability contract: gradient-boosted trees,
//! SAMME stumps, logistic regression and a one-hidden-layer MLP, plus
//! splitting, oversampling, grid search and evaluation metrics.

pub mod adaboost;
pub mod gbt;
mod grid;
pub mod linear;
mod metrics;
pub mod mlp;
mod split;

pub use grid::{grid_search, GridSearchResult};
pub use metrics::{
    auc_brute_force, auc_roc, average_precision, evaluate, metrics_from_scores, ModelMetrics,
};
pub use split::{
    oversample, split_indices, split_indices_grouped, split_train_test, stratified_kfold,
};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harmonize::FeatureMatrix;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("too few samples: {0}")]
    TooFewSamples(usize),
    #[error("split ratio {0} outside (0,1)")]
    InvalidRatio(f64),
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("hyperparameter out of range: {0}")]
    InvalidHyperparameter(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("column mismatch: model expects {expected} features, got {got}")]
    ColumnMismatch { expected: usize, got: usize },
    #[error("evaluation set contains oversampled rows")]
    EvalOnOversampled,
    #[error("evaluation set is empty or inconsistent")]
    EmptyTestSet,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Gbt,
    Adaboost,
    Logistic,
    Mlp,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [
        ModelFamily::Gbt,
        ModelFamily::Adaboost,
        ModelFamily::Logistic,
        ModelFamily::Mlp,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelFamily::Gbt => "gbt",
            ModelFamily::Adaboost => "adaboost",
            ModelFamily::Logistic => "logistic",
            ModelFamily::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Option<ModelFamily> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type HyperParams = BTreeMap<String, f64>;

/// A model family plus its hyperparameter grid, in enumeration order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    /// Ordered (name, candidate values); the cartesian product enumerates
    /// with the last axis fastest.
    pub grid: Vec<(String, Vec<f64>)>,
}

impl ModelSpec {
    pub fn single(family: ModelFamily, params: &[(&str, f64)]) -> Self {
        ModelSpec {
            family,
            grid: params.iter().map(|(k, v)| (k.to_string(), vec![*v])).collect(),
        }
    }

    /// Small single-candidate grids with sensible defaults per family.
    pub fn default_for(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Gbt => ModelSpec::single(
                family,
                &[("n_trees", 60.0), ("max_depth", 3.0), ("learning_rate", 0.2), ("l2_lambda", 1.0)],
            ),
            ModelFamily::Adaboost => ModelSpec::single(family, &[("n_stumps", 80.0)]),
            ModelFamily::Logistic => ModelSpec::single(
                family,
                &[("l2", 1e-3), ("epochs", 300.0), ("step", 0.5)],
            ),
            ModelFamily::Mlp => ModelSpec::single(
                family,
                &[("hidden_units", 16.0), ("epochs", 20.0), ("step", 0.05), ("batch", 256.0)],
            ),
        }
    }

    /// Exhaustive candidate enumeration in grid order.
    pub fn candidates(&self) -> Result<Vec<HyperParams>, LearnError> {
        if self.grid.is_empty() || self.grid.iter().any(|(_, v)| v.is_empty()) {
            return Err(LearnError::EmptyGrid);
        }
        let mut out: Vec<HyperParams> = vec![BTreeMap::new()];
        for (name, values) in &self.grid {
            let mut next = Vec::with_capacity(out.len() * values.len());
            for base in &out {
                for v in values {
                    let mut hp = base.clone();
                    hp.insert(name.clone(), *v);
                    next.push(hp);
                }
            }
            out = next;
        }
        Ok(out)
    }
}

fn hp_f64(hp: &HyperParams, key: &str) -> Result<f64, LearnError> {
    hp.get(key)
        .copied()
        .ok_or_else(|| LearnError::InvalidHyperparameter(format!("missing {key}")))
}

fn hp_usize(hp: &HyperParams, key: &str) -> Result<usize, LearnError> {
    let v = hp_f64(hp, key)?;
    if v < 0.0 || v.fract() != 0.0 || v > usize::MAX as f64 {
        return Err(LearnError::InvalidHyperparameter(format!("{key} = {v}")));
    }
    Ok(v as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Gbt(gbt::GbtModel),
    Adaboost(adaboost::AdaBoostModel),
    Logistic(linear::LinearModel),
    Mlp(mlp::MlpModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub hyperparameters: HyperParams,
    /// Mean validation AUC of the winning grid candidate, when a search ran.
    pub cv_score: Option<f64>,
    pub feature_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub family: ModelFamily,
    pub params: ModelParams,
    pub meta: TrainingMeta,
}

impl TrainedModel {
    pub fn n_features(&self) -> usize {
        self.meta.feature_names.len()
    }

    /// Raw decision margin (log-odds scale for every family).
    pub fn margin(&self, x: &[f64]) -> f64 {
        match &self.params {
            ModelParams::Gbt(m) => m.margin(x),
            ModelParams::Adaboost(m) => m.margin(x),
            ModelParams::Logistic(m) => m.margin(x),
            ModelParams::Mlp(m) => m.margin(x),
        }
    }

    /// Probability of a 30-day return; sigmoid of the margin.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, LearnError> {
        if x.len() != self.n_features() {
            return Err(LearnError::ColumnMismatch {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        Ok(sigmoid(self.margin(x)))
    }
}

/// Fit one model family with fixed hyperparameters.
pub fn train(
    family: ModelFamily,
    hp: &HyperParams,
    data: &FeatureMatrix,
    seed: u64,
) -> Result<TrainedModel, LearnError> {
    let n_cols = data.n_cols();
    let params = match family {
        ModelFamily::Gbt => ModelParams::Gbt(gbt::train_gbt(
            &data.values,
            &data.labels,
            n_cols,
            &gbt::GbtParams {
                n_trees: hp_usize(hp, "n_trees")?,
                max_depth: hp_usize(hp, "max_depth")?,
                learning_rate: hp_f64(hp, "learning_rate")?,
                l2_lambda: hp_f64(hp, "l2_lambda")?,
            },
        )?),
        ModelFamily::Adaboost => ModelParams::Adaboost(adaboost::train_adaboost(
            &data.values,
            &data.labels,
            n_cols,
            &adaboost::AdaBoostParams {
                n_stumps: hp_usize(hp, "n_stumps")?,
            },
        )?),
        ModelFamily::Logistic => ModelParams::Logistic(linear::train_logistic(
            &data.values,
            &data.labels,
            n_cols,
            &linear::LogisticParams {
                l2: hp_f64(hp, "l2")?,
                epochs: hp_usize(hp, "epochs")?,
                step: hp_f64(hp, "step")?,
            },
        )?),
        ModelFamily::Mlp => ModelParams::Mlp(mlp::train_mlp(
            &data.values,
            &data.labels,
            n_cols,
            &mlp::MlpParams {
                hidden_units: hp_usize(hp, "hidden_units")?,
                epochs: hp_usize(hp, "epochs")?,
                step: hp_f64(hp, "step")?,
                batch: hp_usize(hp, "batch")?,
            },
            seed,
        )?),
    };
    Ok(TrainedModel {
        family,
        params,
        meta: TrainingMeta {
            seed,
            hyperparameters: hp.clone(),
            cv_score: None,
            feature_names: data.columns.iter().map(|c| c.name.clone()).collect(),
        },
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    model: TrainedModel,
}

const MODEL_FILE_VERSION: u32 = 1;

pub fn write_model(path: &Path, model: &TrainedModel) -> Result<(), LearnError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = ModelFile {
        version: MODEL_FILE_VERSION,
        model: model.clone(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<TrainedModel, LearnError> {
    let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if file.version != MODEL_FILE_VERSION {
        return Err(LearnError::InvalidModel(format!(
            "unsupported model file version {}",
            file.version
        )));
    }
    Ok(file.model)
}

/// Deterministic seed derivation for nested procedures (folds, candidates).
pub(crate) fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut z = master
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonize::{ColumnKind, ColumnMeta};

    pub(crate) fn matrix_from(values: Vec<f64>, labels: Vec<bool>, n_cols: usize) -> FeatureMatrix {
        let n = labels.len();
        FeatureMatrix {
            columns: (0..n_cols)
                .map(|j| ColumnMeta {
                    name: format!("f{j}"),
                    kind: ColumnKind::Continuous,
                    source: format!("f{j}"),
                    category: None,
                })
                .collect(),
            values,
            labels,
            row_ids: (0..n).map(|i| format!("v{i}")).collect(),
            group_ids: (0..n).map(|i| format!("p{i}")).collect(),
            oversampled: vec![false; n],
        }
    }

    fn separable(n: usize) -> FeatureMatrix {
        let values: Vec<f64> = (0..n).flat_map(|i| [i as f64 / n as f64, 0.5]).collect();
        let labels: Vec<bool> = (0..n).map(|i| i >= n / 2).collect();
        matrix_from(values, labels, 2)
    }

    #[test]
    fn logistic_on_separable_data_reaches_training_accuracy_one() {
        let data = separable(60);
        let mut hp = HyperParams::new();
        hp.insert("l2".into(), 0.0);
        hp.insert("epochs".into(), 8000.0);
        hp.insert("step".into(), 2.0);
        let model = train(ModelFamily::Logistic, &hp, &data, 1).unwrap();
        let correct = (0..data.n_rows())
            .filter(|&i| (model.predict_proba(data.row(i)).unwrap() >= 0.5) == data.labels[i])
            .count();
        assert_eq!(correct, data.n_rows());
    }

    #[test]
    fn proba_is_monotone_in_logistic_margin() {
        let data = separable(40);
        let mut hp = HyperParams::new();
        hp.insert("l2".into(), 0.01);
        hp.insert("epochs".into(), 500.0);
        hp.insert("step".into(), 0.5);
        let model = train(ModelFamily::Logistic, &hp, &data, 1).unwrap();
        let mut pairs: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let x = [i as f64 / 20.0, (i % 5) as f64];
                (model.margin(&x), model.predict_proba(&x).unwrap())
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pairs.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn single_leaf_tree_probability_is_sigmoid_of_value_plus_base() {
        let model = TrainedModel {
            family: ModelFamily::Gbt,
            params: ModelParams::Gbt(gbt::GbtModel {
                base_score: 0.3,
                trees: vec![gbt::Tree {
                    nodes: vec![gbt::Node::Leaf { value: 0.9, cover: 10.0 }],
                }],
                loss_curve: vec![],
            }),
            meta: TrainingMeta {
                seed: 0,
                hyperparameters: HyperParams::new(),
                cv_score: None,
                feature_names: vec!["x".into()],
            },
        };
        let p = model.predict_proba(&[123.0]).unwrap();
        assert!((p - sigmoid(1.2)).abs() < 1e-15);
    }

    #[test]
    fn column_mismatch_is_an_error() {
        let data = separable(20);
        let mut hp = HyperParams::new();
        hp.insert("n_stumps".into(), 5.0);
        let model = train(ModelFamily::Adaboost, &hp, &data, 1).unwrap();
        assert!(matches!(
            model.predict_proba(&[1.0, 2.0, 3.0]),
            Err(LearnError::ColumnMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn model_json_round_trip() {
        let data = separable(30);
        let mut hp = HyperParams::new();
        hp.insert("n_trees".into(), 4.0);
        hp.insert("max_depth".into(), 2.0);
        hp.insert("learning_rate".into(), 0.3);
        hp.insert("l2_lambda".into(), 1.0);
        let model = train(ModelFamily::Gbt, &hp, &data, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        write_model(&path, &model).unwrap();
        assert_eq!(read_model(&path).unwrap(), model);
    }

    #[test]
    fn candidate_enumeration_order_is_last_axis_fastest() {
        let spec = ModelSpec {
            family: ModelFamily::Gbt,
            grid: vec![
                ("a".into(), vec![1.0, 2.0]),
                ("b".into(), vec![10.0, 20.0]),
            ],
        };
        let cands = spec.candidates().unwrap();
        let pairs: Vec<(f64, f64)> = cands.iter().map(|c| (c["a"], c["b"])).collect();
        assert_eq!(pairs, vec![(1.0, 10.0), (1.0, 20.0), (2.0, 10.0), (2.0, 20.0)]);
    }

    #[test]
    fn metrics_never_see_oversampled_rows() {
        let data = separable(40);
        let balanced = oversample(
            &{
                let mut d = data.clone();
                d.labels = (0..40).map(|i| i < 10).collect();
                d
            },
            3,
        )
        .unwrap();
        let mut hp = HyperParams::new();
        hp.insert("n_stumps".into(), 3.0);
        let model = train(ModelFamily::Adaboost, &hp, &data, 1).unwrap();
        assert!(matches!(
            evaluate(&model, &balanced, 0.5),
            Err(LearnError::EvalOnOversampled)
        ));
    }
}

//! Exhaustive grid search scored by mean validation AUC over seeded
//! stratified folds. Oversampling is re-applied inside each fold's training
//! portion only; ties break by enumeration order.

use super::{
    auc_roc, derive_seed, oversample, stratified_kfold, train, HyperParams, LearnError, ModelSpec,
};
use crate::harmonize::FeatureMatrix;

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best: HyperParams,
    /// Mean validation AUC of the winner; absent for a single-candidate
    /// grid, which is returned without cross-validation.
    pub best_score: Option<f64>,
    pub scores: Vec<(HyperParams, f64)>,
    pub warnings: Vec<String>,
}

pub fn grid_search(
    spec: &ModelSpec,
    train_data: &FeatureMatrix,
    folds: usize,
    seed: u64,
) -> Result<GridSearchResult, LearnError> {
    let candidates = spec.candidates()?;
    if candidates.len() == 1 {
        return Ok(GridSearchResult {
            best: candidates.into_iter().next().unwrap(),
            best_score: None,
            scores: Vec::new(),
            warnings: Vec::new(),
        });
    }
    if folds < 2 {
        return Err(LearnError::DegenerateSplit(format!(
            "{folds} folds; at least 2 required"
        )));
    }

    let fold_sets = stratified_kfold(&train_data.labels, folds, seed)?;
    let mut warnings = Vec::new();
    let mut scores = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64)> = None;

    for (c_idx, hp) in candidates.iter().enumerate() {
        let mut fold_scores = Vec::with_capacity(folds);
        for (f_idx, val_rows) in fold_sets.iter().enumerate() {
            let in_val = {
                let mut mask = vec![false; train_data.n_rows()];
                for &r in val_rows {
                    mask[r] = true;
                }
                mask
            };
            let fit_rows: Vec<usize> =
                (0..train_data.n_rows()).filter(|&r| !in_val[r]).collect();
            let fit = train_data.subset(&fit_rows);
            let val = train_data.subset(val_rows);
            let single_class = |m: &FeatureMatrix| {
                m.labels.iter().all(|&y| y) || m.labels.iter().all(|&y| !y)
            };
            if single_class(&fit) || single_class(&val) {
                warnings.push(format!(
                    "candidate {c_idx} fold {f_idx}: single-class fold scored 0.5"
                ));
                fold_scores.push(0.5);
                continue;
            }
            let fold_seed = derive_seed(seed, c_idx as u64, f_idx as u64);
            let balanced = oversample(&fit, fold_seed)?;
            let model = train(spec.family, hp, &balanced, fold_seed)?;
            let mut val_scores = Vec::with_capacity(val.n_rows());
            for i in 0..val.n_rows() {
                val_scores.push(model.predict_proba(val.row(i))?);
            }
            fold_scores.push(auc_roc(&val_scores, &val.labels).unwrap_or(0.5));
        }
        let mean = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
        scores.push((hp.clone(), mean));
        // Strictly-greater keeps the earliest candidate on ties.
        if best.map(|(_, s)| mean > s).unwrap_or(true) {
            best = Some((c_idx, mean));
        }
    }

    let (best_idx, best_score) = best.expect("nonempty candidate list");
    Ok(GridSearchResult {
        best: candidates[best_idx].clone(),
        best_score: Some(best_score),
        scores,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::ModelFamily;
    use rand::{Rng, SeedableRng};

    fn blobs(n: usize, seed: u64) -> FeatureMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let y = rng.random::<f64>() < 0.4;
            let c = if y { 1.2 } else { -1.2 };
            values.push(c + rng.random::<f64>() - 0.5);
            values.push(rng.random::<f64>() - 0.5);
            labels.push(y);
        }
        crate::learn::tests::matrix_from(values, labels, 2)
    }

    /// Ring geometry: a lone stump ranks this poorly, an ensemble does not.
    fn ring(n: usize, seed: u64) -> FeatureMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let x0 = rng.random::<f64>() * 2.0 - 1.0;
            let x1 = rng.random::<f64>() * 2.0 - 1.0;
            values.push(x0);
            values.push(x1);
            labels.push(x0 * x0 + x1 * x1 < 0.5);
        }
        crate::learn::tests::matrix_from(values, labels, 2)
    }

    #[test]
    fn single_candidate_short_circuits() {
        let spec = ModelSpec::default_for(ModelFamily::Gbt);
        let data = blobs(60, 1);
        let result = grid_search(&spec, &data, 3, 7).unwrap();
        assert!(result.best_score.is_none());
        assert_eq!(result.best["n_trees"], 60.0);
    }

    #[test]
    fn higher_capacity_wins_on_ring_geometry() {
        // One depth-1 round cannot match twenty depth-3 rounds here.
        let spec = ModelSpec {
            family: ModelFamily::Gbt,
            grid: vec![
                ("n_trees".into(), vec![1.0, 20.0]),
                ("max_depth".into(), vec![1.0, 3.0]),
                ("learning_rate".into(), vec![0.3]),
                ("l2_lambda".into(), vec![1.0]),
            ],
        };
        let data = ring(300, 3);
        let result = grid_search(&spec, &data, 3, 11).unwrap();
        assert_eq!(
            (result.best["n_trees"], result.best["max_depth"]),
            (20.0, 3.0),
            "scores: {:?}",
            result.scores
        );
    }

    #[test]
    fn replay_is_identical() {
        let spec = ModelSpec {
            family: ModelFamily::Adaboost,
            grid: vec![("n_stumps".into(), vec![2.0, 8.0])],
        };
        let data = blobs(80, 5);
        let a = grid_search(&spec, &data, 3, 13).unwrap();
        let b = grid_search(&spec, &data, 3, 13).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let spec = ModelSpec {
            family: ModelFamily::Gbt,
            grid: vec![],
        };
        assert!(matches!(
            grid_search(&spec, &blobs(40, 2), 3, 1),
            Err(LearnError::EmptyGrid)
        ));
    }
}

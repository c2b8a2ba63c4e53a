//! Train/test splitting, random oversampling, and stratified k-fold.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LearnError;
use crate::harmonize::FeatureMatrix;

/// Stratified row split: seeded shuffle per class, largest-remainder
/// allocation so the train side holds `round(ratio * n)` rows exactly.
pub fn split_indices(
    labels: &[bool],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), LearnError> {
    let n = labels.len();
    if n < 10 {
        return Err(LearnError::TooFewSamples(n));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(LearnError::InvalidRatio(ratio));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        per_class[usize::from(y)].push(i);
    }
    for class in per_class.iter_mut() {
        class.shuffle(&mut rng);
    }

    let target_total = (ratio * n as f64).round() as usize;
    let exact: Vec<f64> = per_class.iter().map(|c| ratio * c.len() as f64).collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut remainder = target_total.saturating_sub(take.iter().sum::<usize>());
    let mut order: Vec<usize> = (0..per_class.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &c in &order {
        if remainder == 0 {
            break;
        }
        if take[c] < per_class[c].len() {
            take[c] += 1;
            remainder -= 1;
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, class_rows) in per_class.iter().enumerate() {
        if class_rows.is_empty() {
            continue;
        }
        if take[c] == 0 || take[c] == class_rows.len() {
            return Err(LearnError::DegenerateSplit(format!(
                "class {c} would be absent from one split"
            )));
        }
        train.extend_from_slice(&class_rows[..take[c]]);
        test.extend_from_slice(&class_rows[take[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Group-aware split: whole groups (patients) land on one side. Sizes are
/// approximate; stratification works on the group's any-positive flag.
pub fn split_indices_grouped(
    labels: &[bool],
    groups: &[String],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), LearnError> {
    let n = labels.len();
    if n < 10 {
        return Err(LearnError::TooFewSamples(n));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(LearnError::InvalidRatio(ratio));
    }
    if groups.len() != n {
        return Err(LearnError::DegenerateSplit(
            "group ids do not cover every row".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut group_rows: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for (i, gid) in groups.iter().enumerate() {
        group_rows.entry(gid).or_default().push(i);
    }
    let mut positive_groups = Vec::new();
    let mut negative_groups = Vec::new();
    for rows in group_rows.values() {
        if rows.iter().any(|&i| labels[i]) {
            positive_groups.push(rows.clone());
        } else {
            negative_groups.push(rows.clone());
        }
    }
    positive_groups.shuffle(&mut rng);
    negative_groups.shuffle(&mut rng);

    // Fill each stratum to its own proportional row target so neither side
    // ends up starved of a label.
    let mut train = Vec::new();
    let mut test = Vec::new();
    for stratum in [positive_groups, negative_groups] {
        let stratum_rows: usize = stratum.iter().map(|g| g.len()).sum();
        let target = (ratio * stratum_rows as f64).round() as usize;
        let mut filled = 0usize;
        for rows in stratum {
            if filled < target {
                filled += rows.len();
                train.extend(rows);
            } else {
                test.extend(rows);
            }
        }
    }
    for side in [&train, &test] {
        let pos = side.iter().any(|&i| labels[i]);
        let neg = side.iter().any(|&i| !labels[i]);
        if !(pos && neg) {
            return Err(LearnError::DegenerateSplit(
                "a label is absent from one grouped split".into(),
            ));
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// 80/20-style split of a feature matrix, stratified by label.
pub fn split_train_test(
    matrix: &FeatureMatrix,
    ratio: f64,
    seed: u64,
) -> Result<(FeatureMatrix, FeatureMatrix), LearnError> {
    let (train, test) = split_indices(&matrix.labels, ratio, seed)?;
    Ok((matrix.subset(&train), matrix.subset(&test)))
}

/// Duplicate minority rows uniformly at random with replacement until the
/// class counts match. New rows carry the oversampled flag.
pub fn oversample(train: &FeatureMatrix, seed: u64) -> Result<FeatureMatrix, LearnError> {
    let pos: Vec<usize> = (0..train.n_rows()).filter(|&i| train.labels[i]).collect();
    let neg: Vec<usize> = (0..train.n_rows()).filter(|&i| !train.labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(LearnError::SingleClass);
    }
    let (minority, deficit) = if pos.len() < neg.len() {
        (&pos, neg.len() - pos.len())
    } else {
        (&neg, pos.len() - neg.len())
    };
    let mut out = train.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = train.n_cols();
    for _ in 0..deficit {
        let r = minority[rng.random_range(0..minority.len())];
        out.values.extend_from_slice(&train.values[r * cols..(r + 1) * cols]);
        out.labels.push(train.labels[r]);
        out.row_ids.push(train.row_ids[r].clone());
        out.group_ids.push(train.group_ids[r].clone());
        out.oversampled.push(true);
    }
    Ok(out)
}

/// Seeded stratified k-fold: returns the validation row sets.
pub fn stratified_kfold(
    labels: &[bool],
    folds: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, LearnError> {
    if folds < 2 {
        return Err(LearnError::DegenerateSplit(format!(
            "{folds} folds; at least 2 required"
        )));
    }
    if labels.len() < folds {
        return Err(LearnError::TooFewSamples(labels.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_sets = vec![Vec::new(); folds];
    for class in [false, true] {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rows.shuffle(&mut rng);
        for (i, r) in rows.into_iter().enumerate() {
            fold_sets[i % folds].push(r);
        }
    }
    for f in fold_sets.iter_mut() {
        f.sort_unstable();
    }
    Ok(fold_sets)
}

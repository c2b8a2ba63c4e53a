//! SHAP attribution on the margin (log-odds) scale: polynomial-time
//! path-dependent TreeSHAP for the boosted ensemble, closed-form linear
//! SHAP for logistic models, an exponential brute-force oracle for
//! verification, and global importance ranking.

mod brute;

pub use brute::{brute_force_shapley, shapley_from_value_fn, MAX_BRUTE_FEATURES};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learn::gbt::{GbtModel, Node, Tree};
use crate::learn::linear::LinearModel;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("feature count mismatch: expected {expected}, got {got}")]
    FeatureCountMismatch { expected: usize, got: usize },
    #[error("brute-force enumeration refused beyond {MAX_BRUTE_FEATURES} features (got {0})")]
    TooManyFeatures(usize),
    #[error("background set is empty")]
    EmptyBackground,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Per-sample attribution: base value plus one contribution per feature, on
/// the margin scale, so that `base_value + phi.sum() == margin(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapVector {
    pub sample_id: String,
    pub base_value: f64,
    pub phi: Vec<f64>,
}

impl ShapVector {
    pub fn total(&self) -> f64 {
        self.base_value + self.phi.iter().sum::<f64>()
    }
}

/// Background cover counts per tree per node: how many background rows pass
/// through each node.
pub fn covers_from_background(
    model: &GbtModel,
    background_values: &[f64],
    n_cols: usize,
) -> Result<Vec<Vec<f64>>, AttributionError> {
    if n_cols == 0 || background_values.is_empty() || background_values.len() % n_cols != 0 {
        return Err(AttributionError::EmptyBackground);
    }
    let n_rows = background_values.len() / n_cols;
    let mut covers: Vec<Vec<f64>> = model
        .trees
        .iter()
        .map(|t| vec![0.0; t.nodes.len()])
        .collect();
    for (tree, cover) in model.trees.iter().zip(covers.iter_mut()) {
        for r in 0..n_rows {
            let x = &background_values[r * n_cols..(r + 1) * n_cols];
            let mut at = 0usize;
            loop {
                cover[at] += 1.0;
                match &tree.nodes[at] {
                    Node::Leaf { .. } => break,
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                        ..
                    } => {
                        at = if x[*feature] < *threshold { *left } else { *right };
                    }
                }
            }
        }
    }
    Ok(covers)
}

/// Expected tree output under cover-weighted traversal (the empty-coalition
/// value).
fn tree_expected_value(tree: &Tree, cover: &[f64]) -> f64 {
    fn walk(tree: &Tree, cover: &[f64], at: usize) -> f64 {
        match &tree.nodes[at] {
            Node::Leaf { value, .. } => *value,
            Node::Split { left, right, .. } => {
                let cl = cover[*left];
                let cr = cover[*right];
                let total = cl + cr;
                if total == 0.0 {
                    return 0.0;
                }
                (cl * walk(tree, cover, *left) + cr * walk(tree, cover, *right)) / total
            }
        }
    }
    walk(tree, cover, 0)
}

#[derive(Clone, Copy, Debug)]
struct PathElement {
    feature: isize,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

fn extend_path(path: &mut Vec<PathElement>, zero: f64, one: f64, feature: isize) {
    let depth = path.len();
    path.push(PathElement {
        feature,
        zero_fraction: zero,
        one_fraction: one,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    });
    for i in (0..depth).rev() {
        path[i + 1].pweight += one * path[i].pweight * (i + 1) as f64 / (depth + 1) as f64;
        path[i].pweight = zero * path[i].pweight * (depth - i) as f64 / (depth + 1) as f64;
    }
}

fn unwind_path(path: &mut Vec<PathElement>, index: usize) {
    let depth = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next_one = path[depth].pweight;
    for j in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[j].pweight;
            path[j].pweight = next_one * (depth + 1) as f64 / ((j + 1) as f64 * one);
            next_one = tmp - path[j].pweight * zero * (depth - j) as f64 / (depth + 1) as f64;
        } else {
            path[j].pweight =
                path[j].pweight * (depth + 1) as f64 / (zero * (depth - j) as f64);
        }
    }
    for j in index..depth {
        path[j].feature = path[j + 1].feature;
        path[j].zero_fraction = path[j + 1].zero_fraction;
        path[j].one_fraction = path[j + 1].one_fraction;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let depth = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next_one = path[depth].pweight;
    let mut total = 0.0;
    for j in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one * (depth + 1) as f64 / ((j + 1) as f64 * one);
            total += tmp;
            next_one = path[j].pweight - tmp * zero * (depth - j) as f64 / (depth + 1) as f64;
        } else if zero != 0.0 {
            total += path[j].pweight / zero * (depth + 1) as f64 / (depth - j) as f64;
        }
    }
    total
}

/// TreeSHAP explainer over a boosted ensemble with background-derived cover
/// weights. Immutable after construction; per-sample attribution is safe to
/// run from several threads.
pub struct TreeExplainer<'a> {
    model: &'a GbtModel,
    covers: Vec<Vec<f64>>,
    n_features: usize,
    base_value: f64,
}

impl<'a> TreeExplainer<'a> {
    pub fn new(
        model: &'a GbtModel,
        background_values: &[f64],
        n_cols: usize,
    ) -> Result<Self, AttributionError> {
        let covers = covers_from_background(model, background_values, n_cols)?;
        let base_value = model.base_score
            + model
                .trees
                .iter()
                .zip(&covers)
                .map(|(t, c)| tree_expected_value(t, c))
                .sum::<f64>();
        Ok(TreeExplainer {
            model,
            covers,
            n_features: n_cols,
            base_value,
        })
    }

    /// Expected margin over the background.
    pub fn base_value(&self) -> f64 {
        self.base_value
    }

    pub fn shap(&self, x: &[f64], sample_id: &str) -> Result<ShapVector, AttributionError> {
        if x.len() != self.n_features {
            return Err(AttributionError::FeatureCountMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut phi = vec![0.0; self.n_features];
        for (tree, cover) in self.model.trees.iter().zip(&self.covers) {
            tree_recurse(tree, cover, 0, Vec::new(), 1.0, 1.0, -1, x, &mut phi);
        }
        Ok(ShapVector {
            sample_id: sample_id.to_string(),
            base_value: self.base_value,
            phi,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn tree_recurse(
    tree: &Tree,
    cover: &[f64],
    at: usize,
    mut path: Vec<PathElement>,
    parent_zero: f64,
    parent_one: f64,
    parent_feature: isize,
    x: &[f64],
    phi: &mut [f64],
) {
    extend_path(&mut path, parent_zero, parent_one, parent_feature);
    match &tree.nodes[at] {
        Node::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                phi[path[i].feature as usize] +=
                    w * (path[i].one_fraction - path[i].zero_fraction) * value;
            }
        }
        Node::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            let (hot, cold) = if x[*feature] < *threshold {
                (*left, *right)
            } else {
                (*right, *left)
            };
            let mut incoming_zero = 1.0;
            let mut incoming_one = 1.0;
            // A feature revisited along the path is condensed first.
            if let Some(k) = path
                .iter()
                .position(|e| e.feature == *feature as isize)
            {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind_path(&mut path, k);
            }
            let node_cover = cover[hot] + cover[cold];
            let fraction = |child: usize| {
                if node_cover > 0.0 {
                    cover[child] / node_cover
                } else {
                    0.0
                }
            };
            let hot_zero = fraction(hot) * incoming_zero;
            let cold_zero = fraction(cold) * incoming_zero;
            // A branch with no coalition weight on either side contributes
            // nothing; descending would divide by zero in the unwind.
            if hot_zero != 0.0 || incoming_one != 0.0 {
                tree_recurse(
                    tree,
                    cover,
                    hot,
                    path.clone(),
                    hot_zero,
                    incoming_one,
                    *feature as isize,
                    x,
                    phi,
                );
            }
            if cold_zero != 0.0 {
                tree_recurse(
                    tree,
                    cover,
                    cold,
                    path,
                    cold_zero,
                    0.0,
                    *feature as isize,
                    x,
                    phi,
                );
            }
        }
    }
}

/// Path-dependent TreeSHAP for one sample against a background set.
pub fn tree_shap(
    model: &GbtModel,
    x: &[f64],
    background_values: &[f64],
    n_cols: usize,
    sample_id: &str,
) -> Result<ShapVector, AttributionError> {
    TreeExplainer::new(model, background_values, n_cols)?.shap(x, sample_id)
}

/// Closed-form SHAP for a linear (logistic) model on the margin scale:
/// phi_i = w_i (x_i - mean_i), base = w . mean + b.
pub fn linear_shap(
    model: &LinearModel,
    x: &[f64],
    background_means: &[f64],
    sample_id: &str,
) -> Result<ShapVector, AttributionError> {
    if x.len() != model.weights.len() || background_means.len() != model.weights.len() {
        return Err(AttributionError::FeatureCountMismatch {
            expected: model.weights.len(),
            got: x.len(),
        });
    }
    let phi: Vec<f64> = model
        .weights
        .iter()
        .zip(x.iter().zip(background_means))
        .map(|(w, (xi, mi))| w * (xi - mi))
        .collect();
    let base_value = model.bias
        + model
            .weights
            .iter()
            .zip(background_means)
            .map(|(w, m)| w * m)
            .sum::<f64>();
    Ok(ShapVector {
        sample_id: sample_id.to_string(),
        base_value,
        phi,
    })
}

/// Features ordered by mean absolute attribution, descending; ties break by
/// feature name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub entries: Vec<(String, f64)>,
}

pub fn global_importance(
    shap: &[ShapVector],
    feature_names: &[String],
) -> Result<ImportanceRanking, AttributionError> {
    if shap.is_empty() {
        return Err(AttributionError::Invalid("no attribution vectors".into()));
    }
    let d = feature_names.len();
    for v in shap {
        if v.phi.len() != d {
            return Err(AttributionError::FeatureCountMismatch {
                expected: d,
                got: v.phi.len(),
            });
        }
    }
    let mut entries: Vec<(String, f64)> = (0..d)
        .map(|j| {
            let mean_abs =
                shap.iter().map(|v| v.phi[j].abs()).sum::<f64>() / shap.len() as f64;
            (feature_names[j].clone(), mean_abs)
        })
        .collect();
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(ImportanceRanking { entries })
}

/// Static horizontal bar chart of the top `k` features.
pub fn importance_svg(ranking: &ImportanceRanking, k: usize) -> String {
    let top: Vec<_> = ranking.entries.iter().take(k).collect();
    let max = top.iter().map(|(_, v)| *v).fold(f64::MIN_POSITIVE, f64::max);
    let row_h = 24;
    let label_w = 260;
    let bar_w = 420;
    let height = top.len() * row_h + 40;
    let width = label_w + bar_w + 80;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n\
         <text x=\"{label_w}\" y=\"16\" font-size=\"14\">Mean |SHAP value| (margin scale)</text>\n"
    );
    for (i, (name, value)) in top.iter().enumerate() {
        let y = 30 + i * row_h;
        let w = (value / max * bar_w as f64).max(1.0);
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n\
             <rect x=\"{}\" y=\"{}\" width=\"{:.1}\" height=\"16\" fill=\"#3b6ea5\"/>\n\
             <text x=\"{:.1}\" y=\"{}\">{:.4}</text>\n",
            label_w - 8,
            y + 13,
            xml_escape(name),
            label_w,
            y,
            w,
            label_w as f64 + w + 6.0,
            y + 13,
            value
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Serialize, Deserialize)]
struct AttributionRow {
    sample_id: String,
    base_value: f64,
    phi: BTreeMap<String, f64>,
}

/// Export one JSON object per sample: {sample_id, base_value, phi}.
pub fn write_attributions(
    path: &Path,
    shap: &[ShapVector],
    feature_names: &[String],
) -> Result<(), AttributionError> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in shap {
        let row = AttributionRow {
            sample_id: v.sample_id.clone(),
            base_value: v.base_value,
            phi: feature_names
                .iter()
                .cloned()
                .zip(v.phi.iter().copied())
                .collect(),
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::gbt::{GbtModel, Node, Tree};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn leaf(value: f64) -> Node {
        Node::Leaf { value, cover: 0.0 }
    }

    fn split(feature: usize, threshold: f64, left: usize, right: usize) -> Node {
        Node::Split {
            feature,
            threshold,
            left,
            right,
            cover: 0.0,
        }
    }

    fn model_of(trees: Vec<Tree>) -> GbtModel {
        GbtModel {
            base_score: 0.0,
            trees,
            loss_curve: vec![],
        }
    }

    /// Uniform background grid over [0,1]^d.
    fn grid_background(d: usize, seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * d).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn single_leaf_tree_has_zero_attributions() {
        let model = model_of(vec![Tree { nodes: vec![leaf(2.5)] }]);
        let background = grid_background(3, 1, 20);
        let v = tree_shap(&model, &[0.1, 0.2, 0.3], &background, 3, "s").unwrap();
        assert_eq!(v.phi, vec![0.0, 0.0, 0.0]);
        assert_eq!(v.base_value, 2.5);
    }

    #[test]
    fn stump_attributes_only_its_split_feature() {
        let model = model_of(vec![Tree {
            nodes: vec![split(1, 0.5, 1, 2), leaf(-1.0), leaf(1.0)],
        }]);
        let background = grid_background(3, 2, 50);
        let v = tree_shap(&model, &[0.9, 0.9, 0.9], &background, 3, "s").unwrap();
        assert_eq!(v.phi[0], 0.0);
        assert_eq!(v.phi[2], 0.0);
        assert!(v.phi[1] > 0.0);
        assert!((v.total() - model.margin(&[0.9, 0.9, 0.9])).abs() < 1e-12);
    }

    /// Random shallow trees for oracle comparison.
    fn random_tree(rng: &mut ChaCha8Rng, n_features: usize, depth: usize) -> Tree {
        let mut nodes = Vec::new();
        fn grow(
            nodes: &mut Vec<Node>,
            rng: &mut ChaCha8Rng,
            n_features: usize,
            depth: usize,
        ) -> usize {
            let at = nodes.len();
            if depth == 0 || rng.random::<f64>() < 0.25 {
                nodes.push(leaf_node(rng.random::<f64>() * 4.0 - 2.0));
                return at;
            }
            nodes.push(leaf_node(0.0)); // placeholder
            let feature = rng.random_range(0..n_features);
            let threshold = rng.random::<f64>();
            let left = grow(nodes, rng, n_features, depth - 1);
            let right = grow(nodes, rng, n_features, depth - 1);
            nodes[at] = Node::Split {
                feature,
                threshold,
                left,
                right,
                cover: 0.0,
            };
            at
        }
        fn leaf_node(value: f64) -> Node {
            Node::Leaf { value, cover: 0.0 }
        }
        grow(&mut nodes, rng, n_features, depth);
        Tree { nodes }
    }

    #[test]
    fn tree_shap_matches_brute_force_on_random_shallow_ensembles() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..30 {
            let d = rng.random_range(2..=8);
            let n_trees = rng.random_range(1..=3);
            let model = model_of(
                (0..n_trees)
                    .map(|_| random_tree(&mut rng, d, 3))
                    .collect(),
            );
            let background = grid_background(d, 1000 + case, 40);
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let fast = tree_shap(&model, &x, &background, d, "s").unwrap();
            let covers = covers_from_background(&model, &background, d).unwrap();
            let slow = brute_force_shapley(&model, &covers, &x, "s").unwrap();
            assert!(
                (fast.base_value - slow.base_value).abs() < 1e-9,
                "case {case}: base {} vs {}",
                fast.base_value,
                slow.base_value
            );
            for j in 0..d {
                assert!(
                    (fast.phi[j] - slow.phi[j]).abs() < 1e-9,
                    "case {case} feature {j}: {} vs {}",
                    fast.phi[j],
                    slow.phi[j]
                );
            }
            // Local accuracy on the margin scale.
            assert!((fast.total() - model.margin(&x)).abs() < 1e-9);
        }
    }

    #[test]
    fn repeated_feature_on_one_path_is_condensed_correctly() {
        // f0 tested twice along the same path.
        let model = model_of(vec![Tree {
            nodes: vec![
                split(0, 0.6, 1, 2),
                split(0, 0.3, 3, 4),
                leaf(3.0),
                leaf(-2.0),
                leaf(1.0),
            ],
        }]);
        let background = grid_background(2, 5, 60);
        let covers = covers_from_background(&model, &background, 2).unwrap();
        for x in [[0.1, 0.5], [0.45, 0.5], [0.9, 0.5]] {
            let fast = tree_shap(&model, &x, &background, 2, "s").unwrap();
            let slow = brute_force_shapley(&model, &covers, &x, "s").unwrap();
            for j in 0..2 {
                assert!((fast.phi[j] - slow.phi[j]).abs() < 1e-9);
            }
            assert!((fast.total() - model.margin(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_shap_is_additive_over_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let t1 = random_tree(&mut rng, 4, 3);
        let t2 = random_tree(&mut rng, 4, 3);
        let background = grid_background(4, 9, 50);
        let x = [0.2, 0.8, 0.5, 0.1];
        let both = tree_shap(&model_of(vec![t1.clone(), t2.clone()]), &x, &background, 4, "s")
            .unwrap();
        let only1 = tree_shap(&model_of(vec![t1]), &x, &background, 4, "s").unwrap();
        let only2 = tree_shap(&model_of(vec![t2]), &x, &background, 4, "s").unwrap();
        for j in 0..4 {
            assert!((both.phi[j] - (only1.phi[j] + only2.phi[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_shap_is_zero_at_the_background_mean() {
        let model = LinearModel {
            weights: vec![2.0, 0.0],
            bias: 0.5,
        };
        let means = [1.0, 3.0];
        let at_mean = linear_shap(&model, &means, &means, "s").unwrap();
        assert_eq!(at_mean.phi, vec![0.0, 0.0]);
        let off = linear_shap(&model, &[2.0, 8.0], &means, "s").unwrap();
        assert_eq!(off.phi, vec![2.0, 0.0]);
        assert!((off.total() - model.margin(&[2.0, 8.0])).abs() < 1e-12);
    }

    #[test]
    fn linear_shap_matches_generic_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let d = 8;
        let model = LinearModel {
            weights: (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            bias: 0.7,
        };
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let means: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let closed = linear_shap(&model, &x, &means, "s").unwrap();
        let value_fn = |mask: u32| {
            let blended: Vec<f64> = (0..d)
                .map(|j| if mask & (1 << j) != 0 { x[j] } else { means[j] })
                .collect();
            model.margin(&blended)
        };
        let (base, phi) = shapley_from_value_fn(d, &value_fn).unwrap();
        assert!((closed.base_value - base).abs() < 1e-9);
        for j in 0..d {
            assert!((closed.phi[j] - phi[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn importance_ranks_by_mean_absolute_value_with_name_ties() {
        let names: Vec<String> = vec!["alpha".into(), "beta".into()];
        let rows = vec![
            ShapVector { sample_id: "a".into(), base_value: 0.0, phi: vec![1.0, -1.0] },
            ShapVector { sample_id: "b".into(), base_value: 0.0, phi: vec![3.0, 1.0] },
        ];
        let ranking = global_importance(&rows, &names).unwrap();
        assert_eq!(ranking.entries[0], ("alpha".to_string(), 2.0));
        assert_eq!(ranking.entries[1], ("beta".to_string(), 1.0));

        let zeros = vec![ShapVector {
            sample_id: "a".into(),
            base_value: 0.0,
            phi: vec![0.0, 0.0],
        }];
        let ranking = global_importance(&zeros, &names).unwrap();
        assert_eq!(ranking.entries[0].0, "alpha");
        assert_eq!(ranking.entries[1].0, "beta");
    }

    #[test]
    fn svg_contains_a_bar_per_feature() {
        let ranking = ImportanceRanking {
            entries: vec![("f1".into(), 0.5), ("f2".into(), 0.25)],
        };
        let svg = importance_svg(&ranking, 2);
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(svg.contains("f1"));
    }
}

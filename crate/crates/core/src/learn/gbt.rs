//! Gradient-boosted trees on the logistic loss with Newton-step leaves:
//! exact greedy splits over presorted columns, leaf value -G/(H+lambda),
//! optional L2 on the leaf weights. One implementation covers both of the
//! near-identical boosted-tree rows in the comparison grid (lambda toggles
//! the Newton regularization).

use serde::{Deserialize, Serialize};

use super::{sigmoid, LearnError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Training rows that passed through this node.
        cover: f64,
    },
    Leaf {
        value: f64,
        cover: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value, .. } => return *value,
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

    /// Every internal node must reference two in-range children, reachable
    /// from the root without cycles.
    pub fn check_structure(&self) -> Result<(), LearnError> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(at) = stack.pop() {
            if at >= self.nodes.len() || seen[at] {
                return Err(LearnError::InvalidModel(format!(
                    "node {at} out of range or revisited"
                )));
            }
            seen[at] = true;
            if let Node::Split { left, right, .. } = &self.nodes[at] {
                stack.push(*left);
                stack.push(*right);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    /// Prior log-odds; margins start here.
    pub base_score: f64,
    /// Trees with learning-rate-scaled leaf values.
    pub trees: Vec<Tree>,
    /// Mean logistic loss after each boosting stage.
    pub loss_curve: Vec<f64>,
}

impl GbtModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.leaf_value(x)).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
}

impl GbtParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        if self.n_trees == 0 || self.n_trees > 5_000 {
            return Err(LearnError::InvalidHyperparameter(format!(
                "n_trees {}",
                self.n_trees
            )));
        }
        if self.max_depth == 0 || self.max_depth > 16 {
            return Err(LearnError::InvalidHyperparameter(format!(
                "max_depth {}",
                self.max_depth
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(LearnError::InvalidHyperparameter(format!(
                "learning_rate {}",
                self.learning_rate
            )));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(LearnError::InvalidHyperparameter(format!(
                "l2_lambda {}",
                self.l2_lambda
            )));
        }
        Ok(())
    }
}

const MIN_GAIN: f64 = 1e-12;
const EPS_HESS: f64 = 1e-12;

struct BuildNode {
    depth: usize,
    grad: f64,
    hess: f64,
    count: usize,
    node: Option<Node>,
}

/// One pass of exact greedy tree construction against gradient/hessian
/// targets. Rows are routed level by level over presorted columns.
fn build_tree(
    values: &[f64],
    n_rows: usize,
    n_cols: usize,
    sorted: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    params: &GbtParams,
) -> Tree {
    let value_at = |r: usize, j: usize| values[r * n_cols + j];
    let lambda = params.l2_lambda;
    let gain_term = |g: f64, h: f64| g * g / (h + lambda + EPS_HESS);

    let mut arena: Vec<BuildNode> = Vec::new();
    let root_grad: f64 = grad.iter().sum();
    let root_hess: f64 = hess.iter().sum();
    arena.push(BuildNode {
        depth: 0,
        grad: root_grad,
        hess: root_hess,
        count: n_rows,
        node: None,
    });
    let mut node_of_row: Vec<u32> = vec![0; n_rows];
    let mut active: Vec<usize> = vec![0];

    for depth in 0..params.max_depth {
        let splittable: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&id| arena[id].count >= 2 && arena[id].depth == depth)
            .collect();
        if splittable.is_empty() {
            break;
        }
        let mut slot_of_node = vec![usize::MAX; arena.len()];
        for (s, &id) in splittable.iter().enumerate() {
            slot_of_node[id] = s;
        }
        // Best split per slot: (gain, feature, threshold).
        let mut best: Vec<Option<(f64, usize, f64)>> = vec![None; splittable.len()];
        let mut gl = vec![0.0f64; splittable.len()];
        let mut hl = vec![0.0f64; splittable.len()];
        let mut cl = vec![0usize; splittable.len()];
        let mut prev = vec![f64::NAN; splittable.len()];

        for j in 0..n_cols {
            for s in 0..splittable.len() {
                gl[s] = 0.0;
                hl[s] = 0.0;
                cl[s] = 0;
                prev[s] = f64::NAN;
            }
            for &r32 in &sorted[j] {
                let r = r32 as usize;
                let id = node_of_row[r] as usize;
                let s = slot_of_node[id];
                if s == usize::MAX {
                    continue;
                }
                let v = value_at(r, j);
                if !prev[s].is_nan() && v > prev[s] && cl[s] > 0 && cl[s] < arena[id].count {
                    let parent = &arena[id];
                    let gr = parent.grad - gl[s];
                    let hr = parent.hess - hl[s];
                    let gain = 0.5
                        * (gain_term(gl[s], hl[s]) + gain_term(gr, hr)
                            - gain_term(parent.grad, parent.hess));
                    let threshold = 0.5 * (prev[s] + v);
                    if best[s].map(|(g, _, _)| gain > g).unwrap_or(gain > MIN_GAIN) {
                        best[s] = Some((gain, j, threshold));
                    }
                }
                gl[s] += grad[r];
                hl[s] += hess[r];
                cl[s] += 1;
                prev[s] = v;
            }
        }

        // Materialize the chosen splits and route rows down a level.
        let mut children: Vec<Option<(usize, usize, usize, f64)>> = vec![None; splittable.len()];
        for (s, &id) in splittable.iter().enumerate() {
            if let Some((gain, feature, threshold)) = best[s] {
                if gain <= MIN_GAIN {
                    continue;
                }
                let left = arena.len();
                let right = arena.len() + 1;
                for _ in 0..2 {
                    arena.push(BuildNode {
                        depth: depth + 1,
                        grad: 0.0,
                        hess: 0.0,
                        count: 0,
                        node: None,
                    });
                }
                arena[id].node = Some(Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    cover: arena[id].count as f64,
                });
                children[s] = Some((feature, left, right, threshold));
            }
        }
        let mut next_active = Vec::new();
        for r in 0..n_rows {
            let id = node_of_row[r] as usize;
            let s = slot_of_node.get(id).copied().unwrap_or(usize::MAX);
            if s == usize::MAX {
                continue;
            }
            if let Some((feature, left, right, threshold)) = children[s] {
                let child = if value_at(r, feature) < threshold { left } else { right };
                node_of_row[r] = child as u32;
                arena[child].grad += grad[r];
                arena[child].hess += hess[r];
                arena[child].count += 1;
            }
        }
        for c in children.iter().flatten() {
            next_active.push(c.1);
            next_active.push(c.2);
        }
        active = next_active;
    }

    let nodes = arena
        .into_iter()
        .map(|b| match b.node {
            Some(split) => split,
            None => Node::Leaf {
                value: -params.learning_rate * b.grad / (b.hess + lambda + EPS_HESS),
                cover: b.count as f64,
            },
        })
        .collect();
    Tree { nodes }
}

/// Presorted row indices per column, ties broken by row index.
pub(crate) fn presort_columns(values: &[f64], n_rows: usize, n_cols: usize) -> Vec<Vec<u32>> {
    (0..n_cols)
        .map(|j| {
            let mut idx: Vec<u32> = (0..n_rows as u32).collect();
            idx.sort_by(|&a, &b| {
                let va = values[a as usize * n_cols + j];
                let vb = values[b as usize * n_cols + j];
                va.partial_cmp(&vb).unwrap().then(a.cmp(&b))
            });
            idx
        })
        .collect()
}

pub fn train_gbt(
    values: &[f64],
    labels: &[bool],
    n_cols: usize,
    params: &GbtParams,
) -> Result<GbtModel, LearnError> {
    params.validate()?;
    let n_rows = labels.len();
    if n_rows == 0 {
        return Err(LearnError::TooFewSamples(0));
    }
    let pos = labels.iter().filter(|&&y| y).count() as f64;
    let prior = (pos / n_rows as f64).clamp(1e-6, 1.0 - 1e-6);
    let base_score = (prior / (1.0 - prior)).ln();

    let sorted = presort_columns(values, n_rows, n_cols);
    let mut margins = vec![base_score; n_rows];
    let mut grad = vec![0.0; n_rows];
    let mut hess = vec![0.0; n_rows];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut loss_curve = Vec::with_capacity(params.n_trees);

    for _stage in 0..params.n_trees {
        for i in 0..n_rows {
            let p = sigmoid(margins[i]);
            grad[i] = p - f64::from(labels[i]);
            hess[i] = p * (1.0 - p);
        }
        let tree = build_tree(values, n_rows, n_cols, &sorted, &grad, &hess, params);
        for i in 0..n_rows {
            margins[i] += tree.leaf_value(&values[i * n_cols..(i + 1) * n_cols]);
        }
        trees.push(tree);
        let loss = mean_log_loss(&margins, labels);
        if !loss.is_finite() {
            return Err(LearnError::NonFiniteLoss(format!(
                "stage {} produced loss {loss}",
                trees.len()
            )));
        }
        loss_curve.push(loss);
    }
    Ok(GbtModel {
        base_score,
        trees,
        loss_curve,
    })
}

pub(crate) fn mean_log_loss(margins: &[f64], labels: &[bool]) -> f64 {
    let mut total = 0.0;
    for (m, &y) in margins.iter().zip(labels) {
        // log(1 + exp(-z)) with the stable branch.
        let z = if y { *m } else { -*m };
        total += if z > 0.0 {
            (-z).exp().ln_1p()
        } else {
            -z + z.exp().ln_1p()
        };
    }
    total / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n_trees: usize, max_depth: usize) -> GbtParams {
        GbtParams {
            n_trees,
            max_depth,
            learning_rate: 0.3,
            l2_lambda: 1.0,
        }
    }

    fn blob_data(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>, usize) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let y = rng.random::<f64>() < 0.5;
            let shift = if y { 1.0 } else { -1.0 };
            values.push(shift + rng.random::<f64>() * 2.0 - 1.0);
            values.push(rng.random::<f64>() * 2.0 - 1.0);
            labels.push(y);
        }
        (values, labels, 2)
    }

    #[test]
    fn single_stump_matches_exhaustive_search() {
        let (values, labels, d) = blob_data(80, 3);
        let p = GbtParams {
            n_trees: 1,
            max_depth: 1,
            learning_rate: 1.0,
            l2_lambda: 0.5,
        };
        let model = train_gbt(&values, &labels, d, &p).unwrap();
        let Node::Split {
            feature, threshold, ..
        } = model.trees[0].nodes[0]
        else {
            panic!("expected a split at the root");
        };

        // Oracle: enumerate every feature and midpoint, same objective.
        let n = labels.len();
        let pos = labels.iter().filter(|&&y| y).count() as f64;
        let prior = pos / n as f64;
        let (g0, h0) = (prior - 1.0, prior * (1.0 - prior));
        let grads: Vec<f64> = labels
            .iter()
            .map(|&y| if y { g0 } else { prior })
            .collect();
        let hs = vec![h0; n];
        let lambda = 0.5;
        let term = |g: f64, h: f64| g * g / (h + lambda + 1e-12);
        let mut best = (f64::MIN, 0usize, f64::NAN);
        for j in 0..d {
            let mut vals: Vec<f64> = (0..n).map(|i| values[i * d + j]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            for w in vals.windows(2) {
                let thr = 0.5 * (w[0] + w[1]);
                let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..n {
                    if values[i * d + j] < thr {
                        gl += grads[i];
                        hl += hs[i];
                    } else {
                        gr += grads[i];
                        hr += hs[i];
                    }
                }
                let g_tot = gl + gr;
                let h_tot = hl + hr;
                let gain = 0.5 * (term(gl, hl) + term(gr, hr) - term(g_tot, h_tot));
                if gain > best.0 {
                    best = (gain, j, thr);
                }
            }
        }
        assert_eq!(feature, best.1);
        assert!((threshold - best.2).abs() < 1e-12, "{threshold} vs {}", best.2);
    }

    #[test]
    fn training_loss_is_non_increasing() {
        let (values, labels, d) = blob_data(200, 7);
        let model = train_gbt(&values, &labels, d, &params(30, 3)).unwrap();
        for w in model.loss_curve.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "loss went up: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn separable_data_is_fit_to_high_accuracy() {
        let n = 100;
        let values: Vec<f64> = (0..n).flat_map(|i| [i as f64, 0.0]).collect();
        let labels: Vec<bool> = (0..n).map(|i| i >= 50).collect();
        let model = train_gbt(&values, &labels, 2, &params(20, 2)).unwrap();
        let correct = (0..n)
            .filter(|&i| (sigmoid(model.margin(&[i as f64, 0.0])) >= 0.5) == labels[i])
            .count();
        assert_eq!(correct, n);
    }

    #[test]
    fn trees_have_sound_structure_and_covers() {
        let (values, labels, d) = blob_data(150, 11);
        let model = train_gbt(&values, &labels, d, &params(10, 3)).unwrap();
        for tree in &model.trees {
            tree.check_structure().unwrap();
            // Root cover equals the training row count; child covers add up.
            for node in &tree.nodes {
                if let Node::Split { left, right, cover, .. } = node {
                    let c = |i: usize| match &tree.nodes[i] {
                        Node::Split { cover, .. } => *cover,
                        Node::Leaf { cover, .. } => *cover,
                    };
                    assert_eq!(c(*left) + c(*right), *cover);
                }
            }
        }
    }

    #[test]
    fn reproducible_across_runs() {
        let (values, labels, d) = blob_data(120, 5);
        let a = train_gbt(&values, &labels, d, &params(5, 3)).unwrap();
        let b = train_gbt(&values, &labels, d, &params(5, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        let (values, labels, d) = blob_data(20, 2);
        let mut p = params(0, 3);
        assert!(train_gbt(&values, &labels, d, &p).is_err());
        p = params(5, 3);
        p.learning_rate = 0.0;
        assert!(train_gbt(&values, &labels, d, &p).is_err());
    }
}

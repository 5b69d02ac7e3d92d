//! Gradient boosted decision trees for weighted binary classification.
//!
//! Logistic loss with second-order (gradient/hessian) split gain, exact
//! greedy split search over sorted feature values, positive-class
//! weighting for imbalanced data, and gain-based feature importance.
//! Training is deterministic: no row or column subsampling, ties in the
//! split search break toward the lowest feature index and threshold, and
//! per-feature scans are sequential so parallelism over features cannot
//! change the result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub l2_lambda: f64,
    pub gain_gamma: f64,
    pub min_child_weight: f64,
    /// Multiplier on positive-class gradients/hessians; `None` means
    /// negative/positive count ratio of the training split.
    pub scale_pos_weight: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_rounds: 100,
            learning_rate: 0.1,
            max_depth: 6,
            l2_lambda: 1.0,
            gain_gamma: 0.0,
            min_child_weight: 1.0,
            scale_pos_weight: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("training requires at least one sample of each class (got {positives} positives, {negatives} negatives)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("shape mismatch: model expects {expected} features, input has {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("empty training set")]
    Empty,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model serialization error: {0}")]
    Serde(String),
}

/// One regression tree in flattened-array form. Node 0 is the root;
/// `feature[i] == -1` marks a leaf whose output is `weight[i]`. Routing:
/// `x[feature] < threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<i32>,
    pub right: Vec<i32>,
    pub weight: Vec<f64>,
    /// Realized split gain per internal node; feeds feature importance.
    pub gain: Vec<f64>,
}

impl Tree {
    fn new() -> Self {
        Tree {
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            weight: Vec::new(),
            gain: Vec::new(),
        }
    }

    fn push_leaf(&mut self, weight: f64) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(-1);
        self.right.push(-1);
        self.weight.push(weight);
        self.gain.push(0.0);
        self.feature.len() - 1
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = 0usize;
        loop {
            let f = self.feature[node];
            if f < 0 {
                return self.weight[node];
            }
            node = if row[f as usize] < self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
    }

    pub fn n_splits(&self) -> usize {
        self.feature.iter().filter(|f| **f >= 0).count()
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub format_version: u32,
    pub config: TrainConfig,
    /// Prior log-odds of the weighted positive rate.
    pub base_score: f64,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
}

/// Gradient and hessian of the weighted logistic loss at a margin.
/// Margins are clamped to +-30 before exponentiation.
pub fn logistic_grad_hess(margin: f64, label: f64, weight: f64) -> (f64, f64) {
    let p = sigmoid(margin);
    (weight * (p - label), weight * p * (1.0 - p))
}

pub fn sigmoid(margin: f64) -> f64 {
    let m = margin.clamp(-30.0, 30.0);
    1.0 / (1.0 + (-m).exp())
}

/// Second-order split gain:
/// `0.5 * [GL^2/(HL+l) + GR^2/(HR+l) - (GL+GR)^2/(HL+HR+l)] - gamma`.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, l2_lambda: f64, gain_gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + l2_lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gain_gamma
}

/// Weighted binary log-loss over margins; used by tests and the training
/// trace.
pub fn weighted_log_loss(margins: &[f64], labels: &[bool], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for ((&m, &y), &w) in margins.iter().zip(labels).zip(weights) {
        let p = sigmoid(m).clamp(1e-15, 1.0 - 1e-15);
        total -= w * if y { p.ln() } else { (1.0 - p).ln() };
        wsum += w;
    }
    total / wsum
}

#[derive(Clone, Copy)]
struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    /// Count of node samples routed left, in sorted-list order.
    left_count: usize,
}

fn better(a: &SplitCandidate, b: &SplitCandidate) -> bool {
    if a.gain != b.gain {
        return a.gain > b.gain;
    }
    if a.feature != b.feature {
        return a.feature < b.feature;
    }
    a.threshold < b.threshold
}

struct NodeTask {
    node_id: usize,
    depth: usize,
    /// Per-feature index lists, each sorted by feature value.
    lists: Vec<Vec<u32>>,
}

/// Train a boosted ensemble. `rows` is row-major, `labels[i]` the binary
/// class. Exact greedy split search at midpoints between distinct
/// consecutive sorted values; splits need strictly positive gain and both
/// children at or above `min_child_weight` hessian mass.
pub fn train(
    rows: &[Vec<f64>],
    labels: &[bool],
    feature_names: &[String],
    config: &TrainConfig,
) -> Result<GbdtModel, GbdtError> {
    Ok(train_traced(rows, labels, feature_names, config)?.0)
}

/// [`train`] plus the per-round weighted training log-loss.
pub fn train_traced(
    rows: &[Vec<f64>],
    labels: &[bool],
    feature_names: &[String],
    config: &TrainConfig,
) -> Result<(GbdtModel, Vec<f64>), GbdtError> {
    let n = rows.len();
    if n == 0 {
        return Err(GbdtError::Empty);
    }
    let m = rows[0].len();
    for (ri, row) in rows.iter().enumerate() {
        for (ci, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(GbdtError::NonFinite { row: ri, col: ci });
            }
        }
    }

    let positives = labels.iter().filter(|l| **l).count();
    let negatives = n - positives;
    if positives == 0 || negatives == 0 {
        return Err(GbdtError::SingleClass { positives, negatives });
    }

    let spw = config.scale_pos_weight.unwrap_or(negatives as f64 / positives as f64);
    let weights: Vec<f64> = labels.iter().map(|&y| if y { spw } else { 1.0 }).collect();
    let w_pos: f64 = spw * positives as f64;
    let w_neg = negatives as f64;
    let base_score = (w_pos / w_neg).ln();

    // column-major copy plus one global argsort per feature (stable, ties
    // by row index)
    let columns: Vec<Vec<f64>> =
        (0..m).map(|ci| rows.iter().map(|r| r[ci]).collect()).collect();
    let sorted: Vec<Vec<u32>> = columns
        .par_iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| {
                col[a as usize].partial_cmp(&col[b as usize]).unwrap().then(a.cmp(&b))
            });
            idx
        })
        .collect();

    let mut margins = vec![base_score; n];
    let mut trees = Vec::with_capacity(config.n_rounds);
    let mut losses = Vec::with_capacity(config.n_rounds);

    for _round in 0..config.n_rounds {
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for i in 0..n {
            let (g, h) =
                logistic_grad_hess(margins[i], if labels[i] { 1.0 } else { 0.0 }, weights[i]);
            grad[i] = g;
            hess[i] = h;
        }

        let tree = grow_tree(&columns, &sorted, &grad, &hess, config);
        for (i, row) in rows.iter().enumerate() {
            margins[i] += tree.predict_row(row);
        }
        losses.push(weighted_log_loss(&margins, labels, &weights));
        trees.push(tree);
    }

    let model = GbdtModel {
        format_version: MODEL_FORMAT_VERSION,
        config: config.clone(),
        base_score,
        feature_names: feature_names.to_vec(),
        trees,
    };
    Ok((model, losses))
}

fn grow_tree(
    columns: &[Vec<f64>],
    root_sorted: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    config: &TrainConfig,
) -> Tree {
    let mut tree = Tree::new();
    let root = NodeTask { node_id: tree.push_leaf(0.0), depth: 0, lists: root_sorted.to_vec() };
    let mut queue = std::collections::VecDeque::from([root]);

    while let Some(task) = queue.pop_front() {
        let samples = &task.lists[0];
        let g_total: f64 = samples.iter().map(|&i| grad[i as usize]).sum();
        let h_total: f64 = samples.iter().map(|&i| hess[i as usize]).sum();

        let best = if task.depth < config.max_depth && samples.len() >= 2 {
            best_split(columns, &task.lists, grad, hess, g_total, h_total, config)
        } else {
            None
        };

        match best {
            None => {
                tree.weight[task.node_id] =
                    -g_total / (h_total + config.l2_lambda) * config.learning_rate;
            }
            Some(split) => {
                // stable partition of every per-feature list by the chosen
                // routing decision
                let col = &columns[split.feature];
                let goes_left = |i: u32| col[i as usize] < split.threshold;
                let mut left_lists = Vec::with_capacity(task.lists.len());
                let mut right_lists = Vec::with_capacity(task.lists.len());
                for list in &task.lists {
                    let mut l = Vec::with_capacity(split.left_count);
                    let mut r = Vec::with_capacity(list.len() - split.left_count);
                    for &i in list {
                        if goes_left(i) {
                            l.push(i);
                        } else {
                            r.push(i);
                        }
                    }
                    left_lists.push(l);
                    right_lists.push(r);
                }

                tree.feature[task.node_id] = split.feature as i32;
                tree.threshold[task.node_id] = split.threshold;
                tree.gain[task.node_id] = split.gain;
                let left_id = tree.push_leaf(0.0);
                let right_id = tree.push_leaf(0.0);
                tree.left[task.node_id] = left_id as i32;
                tree.right[task.node_id] = right_id as i32;
                queue.push_back(NodeTask {
                    node_id: left_id,
                    depth: task.depth + 1,
                    lists: left_lists,
                });
                queue.push_back(NodeTask {
                    node_id: right_id,
                    depth: task.depth + 1,
                    lists: right_lists,
                });
            }
        }
    }
    tree
}

fn best_split(
    columns: &[Vec<f64>],
    lists: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    g_total: f64,
    h_total: f64,
    config: &TrainConfig,
) -> Option<SplitCandidate> {
    let per_feature: Vec<Option<SplitCandidate>> = lists
        .par_iter()
        .enumerate()
        .map(|(feature, list)| {
            let col = &columns[feature];
            let mut best: Option<SplitCandidate> = None;
            let mut gl = 0.0;
            let mut hl = 0.0;
            for k in 0..list.len() - 1 {
                let i = list[k] as usize;
                gl += grad[i];
                hl += hess[i];
                let v = col[i];
                let v_next = col[list[k + 1] as usize];
                if v_next <= v {
                    continue;
                }
                let hr = h_total - hl;
                if hl < config.min_child_weight || hr < config.min_child_weight {
                    continue;
                }
                let gain =
                    split_gain(gl, hl, g_total - gl, hr, config.l2_lambda, config.gain_gamma);
                if gain <= 0.0 {
                    continue;
                }
                // midpoint; nudged to the right value if rounding collapses
                // it onto the left one, so `x < threshold` routes exactly
                // the first k+1 sorted samples left
                let mut threshold = v + (v_next - v) / 2.0;
                if threshold <= v {
                    threshold = v_next;
                }
                let candidate =
                    SplitCandidate { gain, feature, threshold, left_count: k + 1 };
                if best.map_or(true, |b| better(&candidate, &b)) {
                    best = Some(candidate);
                }
            }
            best
        })
        .collect();

    per_feature
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<SplitCandidate>, c| match acc {
            Some(b) if better(&b, &c) => Some(b),
            _ => Some(c),
        })
}

impl GbdtModel {
    pub fn predict_margin(&self, row: &[f64]) -> Result<f64, GbdtError> {
        let expected = self.feature_names.len();
        if row.len() != expected {
            return Err(GbdtError::ShapeMismatch { expected, got: row.len() });
        }
        Ok(self.base_score + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>())
    }

    /// Honeypot probability per row; strictly inside (0, 1) because
    /// margins are clamped before the sigmoid.
    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, GbdtError> {
        rows.iter().map(|r| self.predict_margin(r).map(sigmoid)).collect()
    }

    pub fn save_json(&self, path: &Path) -> Result<(), GbdtError> {
        let json = serde_json::to_string(self).map_err(|e| GbdtError::Serde(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<GbdtModel, GbdtError> {
        let data = std::fs::read_to_string(path)?;
        serde_json::from_str(&data).map_err(|e| GbdtError::Serde(e.to_string()))
    }
}

/// Total realized split gain per feature, normalized to sum 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// Aligned with the model's feature names.
    pub importances: Vec<f64>,
    pub total_gain: f64,
    /// False when no tree contains a split; importances are then all zero.
    pub has_splits: bool,
}

impl ImportanceReport {
    /// `(name, importance)` sorted descending, ties by name.
    pub fn ranked<'a>(&self, names: &'a [String]) -> Vec<(&'a str, f64)> {
        let mut pairs: Vec<(&str, f64)> =
            names.iter().map(|n| n.as_str()).zip(self.importances.iter().copied()).collect();
        pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(b.0)));
        pairs
    }
}

pub fn feature_importance(model: &GbdtModel) -> ImportanceReport {
    let mut gains = vec![0.0; model.feature_names.len()];
    for tree in &model.trees {
        for node in 0..tree.feature.len() {
            let f = tree.feature[node];
            if f >= 0 {
                gains[f as usize] += tree.gain[node];
            }
        }
    }
    let total: f64 = gains.iter().sum();
    let has_splits = total > 0.0;
    if has_splits {
        for g in &mut gains {
            *g /= total;
        }
    }
    ImportanceReport { importances: gains, total_gain: total, has_splits }
}

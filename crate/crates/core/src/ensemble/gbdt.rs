//! Minimal gradient-boosted trees meta-model: one regression tree per class
//! per round, fit to the softmax cross-entropy gradients with second-order
//! (Newton) leaf values and shrinkage, predictions fused by softmax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::softmax;
use crate::nn::{ProbVector, NUM_GENRES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub rounds: usize,
    pub shrinkage: f64,
    pub max_depth: usize,
    /// L2 regularization on leaf values.
    pub lambda: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self { rounds: 100, shrinkage: 0.1, max_depth: 3, lambda: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

/// One regression tree stored as a node arena rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    /// `trees[round][class]`.
    pub trees: Vec<Vec<Tree>>,
    pub features: usize,
    pub classes: usize,
    pub shrinkage: f64,
}

impl GbdtModel {
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.classes];
        for round in &self.trees {
            for (k, tree) in round.iter().enumerate() {
                f[k] += self.shrinkage * tree.eval(x);
            }
        }
        f
    }

    pub fn predict(&self, x: &[f64]) -> Result<ProbVector> {
        if x.len() != self.features {
            return Err(Error::ShapeError(format!(
                "gbdt expects {} features, got {}",
                self.features,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::DataError("non-finite gbdt input".into()));
        }
        ProbVector::from_slice(&softmax(&self.scores(x)))
    }

    /// Training log-loss trace, one entry per boosting prefix (0 rounds,
    /// 1 round, ...); used to verify boosting is monotone.
    pub fn logloss_trace(&self, rows: &[&[f64]], labels: &[usize]) -> Vec<f64> {
        let mut f = vec![vec![0.0; self.classes]; rows.len()];
        let mut trace = Vec::with_capacity(self.trees.len() + 1);
        let loss = |f: &[Vec<f64>]| -> f64 {
            rows.iter()
                .zip(labels)
                .zip(f)
                .map(|((_, &l), fi)| -softmax(fi)[l].max(f64::MIN_POSITIVE).ln())
                .sum::<f64>()
                / rows.len() as f64
        };
        trace.push(loss(&f));
        for round in &self.trees {
            for (i, row) in rows.iter().enumerate() {
                for (k, tree) in round.iter().enumerate() {
                    f[i][k] += self.shrinkage * tree.eval(row);
                }
            }
            trace.push(loss(&f));
        }
        trace
    }
}

struct TreeBuilder<'a> {
    rows: &'a [&'a [f64]],
    grad: &'a [f64],
    hess: &'a [f64],
    lambda: f64,
    max_depth: usize,
    nodes: Vec<Node>,
}

const MIN_GAIN: f64 = 1e-12;
const MIN_HESS: f64 = 1e-12;

impl<'a> TreeBuilder<'a> {
    fn leaf_value(&self, idxs: &[usize]) -> f64 {
        let g: f64 = idxs.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = idxs.iter().map(|&i| self.hess[i]).sum();
        -g / (h + self.lambda).max(MIN_HESS)
    }

    fn best_split(&self, idxs: &[usize]) -> Option<(usize, f64, f64)> {
        let g_total: f64 = idxs.iter().map(|&i| self.grad[i]).sum();
        let h_total: f64 = idxs.iter().map(|&i| self.hess[i]).sum();
        let parent_score = g_total * g_total / (h_total + self.lambda);
        let n_features = self.rows[0].len();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order: Vec<usize> = idxs.to_vec();
        for feature in 0..n_features {
            order.sort_by(|&a, &b| self.rows[a][feature].total_cmp(&self.rows[b][feature]));
            let mut g_left = 0.0;
            let mut h_left = 0.0;
            for w in 0..order.len() - 1 {
                g_left += self.grad[order[w]];
                h_left += self.hess[order[w]];
                let v_lo = self.rows[order[w]][feature];
                let v_hi = self.rows[order[w + 1]][feature];
                if v_lo == v_hi {
                    continue;
                }
                let g_right = g_total - g_left;
                let h_right = h_total - h_left;
                let gain = 0.5
                    * (g_left * g_left / (h_left + self.lambda)
                        + g_right * g_right / (h_right + self.lambda)
                        - parent_score);
                if gain > MIN_GAIN && best.map_or(true, |(_, _, bg)| gain > bg) {
                    best = Some((feature, 0.5 * (v_lo + v_hi), gain));
                }
            }
        }
        best
    }

    fn build(&mut self, idxs: &[usize], depth: usize) -> usize {
        if depth >= self.max_depth || idxs.len() < 2 {
            let value = self.leaf_value(idxs);
            self.nodes.push(Node::Leaf { value });
            return self.nodes.len() - 1;
        }
        match self.best_split(idxs) {
            None => {
                let value = self.leaf_value(idxs);
                self.nodes.push(Node::Leaf { value });
                self.nodes.len() - 1
            }
            Some((feature, threshold, _)) => {
                let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
                    idxs.iter().partition(|&&i| self.rows[i][feature] < threshold);
                let at = self.nodes.len();
                self.nodes.push(Node::Split { feature, threshold, left: 0, right: 0 });
                let left = self.build(&left_idx, depth + 1);
                let right = self.build(&right_idx, depth + 1);
                if let Node::Split { left: l, right: r, .. } = &mut self.nodes[at] {
                    *l = left;
                    *r = right;
                }
                at
            }
        }
    }
}

/// Fit boosted trees. Fully deterministic: no row or feature subsampling.
pub fn train(rows: &[&[f64]], labels: &[usize], cfg: &GbdtConfig) -> Result<GbdtModel> {
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(Error::DataError("gbdt needs matching, non-empty inputs".into()));
    }
    if cfg.rounds == 0 || cfg.max_depth == 0 || !(cfg.shrinkage > 0.0) || cfg.lambda < 0.0 {
        return Err(Error::InvalidConfig("gbdt rounds/depth/shrinkage must be positive".into()));
    }
    let features = rows[0].len();
    let classes = NUM_GENRES;
    let mut present = [false; NUM_GENRES];
    for (row, &label) in rows.iter().zip(labels) {
        if row.len() != features {
            return Err(Error::DataError("ragged gbdt input rows".into()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::DataError("non-finite gbdt input".into()));
        }
        if label >= classes {
            return Err(Error::LabelError(format!("label {label} out of range")));
        }
        present[label] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::DataError("gbdt needs at least two classes present".into()));
    }

    let n = rows.len();
    let mut scores = vec![vec![0.0f64; classes]; n];
    let mut trees: Vec<Vec<Tree>> = Vec::with_capacity(cfg.rounds);
    let all_idxs: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.rounds {
        let probs: Vec<Vec<f64>> = scores.iter().map(|s| softmax(s)).collect();
        let mut round = Vec::with_capacity(classes);
        for k in 0..classes {
            let grad: Vec<f64> = probs
                .iter()
                .zip(labels)
                .map(|(p, &l)| p[k] - if l == k { 1.0 } else { 0.0 })
                .collect();
            let hess: Vec<f64> = probs.iter().map(|p| (p[k] * (1.0 - p[k])).max(MIN_HESS)).collect();
            let mut builder = TreeBuilder {
                rows,
                grad: &grad,
                hess: &hess,
                lambda: cfg.lambda,
                max_depth: cfg.max_depth,
                nodes: Vec::new(),
            };
            builder.build(&all_idxs, 0);
            let tree = Tree { nodes: builder.nodes };
            for (i, row) in rows.iter().enumerate() {
                scores[i][k] += cfg.shrinkage * tree.eval(row);
            }
            round.push(tree);
        }
        trees.push(round);
    }
    Ok(GbdtModel { trees, features, classes, shrinkage: cfg.shrinkage })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn threshold_task() -> (Vec<Vec<f64>>, Vec<usize>) {
        // Feature 0 below/above 0.5 decides the class; other features inert.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            let label = usize::from(i % 2 == 1);
            let mut v = vec![0.25; 20];
            v[0] = if label == 0 { 0.1 + (i as f64) * 0.005 } else { 0.8 + (i as f64) * 0.005 };
            rows.push(v);
            labels.push(label);
        }
        (rows, labels)
    }

    #[test]
    fn single_round_solves_threshold_task() {
        let (rows_data, labels) = threshold_task();
        let rows: Vec<&[f64]> = rows_data.iter().map(|r| &r[..]).collect();
        let cfg = GbdtConfig { rounds: 1, ..GbdtConfig::default() };
        let model = train(&rows, &labels, &cfg).unwrap();
        let correct = rows
            .iter()
            .zip(&labels)
            .filter(|(r, &l)| model.predict(r).unwrap().argmax() == l)
            .count();
        assert_eq!(correct, rows.len());
    }

    #[test]
    fn logloss_never_increases_with_rounds() {
        let (rows_data, labels) = threshold_task();
        let rows: Vec<&[f64]> = rows_data.iter().map(|r| &r[..]).collect();
        let cfg = GbdtConfig { rounds: 40, ..GbdtConfig::default() };
        let model = train(&rows, &labels, &cfg).unwrap();
        let trace = model.logloss_trace(&rows, &labels);
        assert_eq!(trace.len(), 41);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss rose {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn prediction_is_valid_probability() {
        let (rows_data, labels) = threshold_task();
        let rows: Vec<&[f64]> = rows_data.iter().map(|r| &r[..]).collect();
        let model = train(&rows, &labels, &GbdtConfig { rounds: 5, ..GbdtConfig::default() }).unwrap();
        let p = model.predict(&rows_data[3]).unwrap();
        let sum: f64 = p.0.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(p.0.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn non_finite_input_rejected() {
        let bad = vec![f64::INFINITY; 20];
        let ok = vec![0.5; 20];
        let rows: Vec<&[f64]> = vec![&bad, &ok];
        assert!(matches!(
            train(&rows, &[0, 1], &GbdtConfig::default()),
            Err(Error::DataError(_))
        ));
        let rows: Vec<&[f64]> = vec![&ok, &ok];
        let model = train(&rows, &[0, 1], &GbdtConfig { rounds: 2, ..GbdtConfig::default() }).unwrap();
        assert!(matches!(model.predict(&bad), Err(Error::DataError(_))));
    }
}

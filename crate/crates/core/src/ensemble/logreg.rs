//! Multinomial logistic regression meta-model: 10-way softmax over the
//! 20-dimensional stacked input, trained by full-batch gradient descent with
//! an L2 ridge on the weights (bias unregularized).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::softmax;
use crate::nn::{ProbVector, NUM_GENRES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the full-batch gradient norm drops below this.
    pub grad_tolerance: f64,
    pub l2: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self { learning_rate: 1.0, max_iters: 2000, grad_tolerance: 1e-6, l2: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    /// Row-major `[features][classes]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub features: usize,
    pub classes: usize,
}

impl LogRegModel {
    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.weights[i * self.classes..(i + 1) * self.classes];
            for (zj, wj) in z.iter_mut().zip(row) {
                *zj += xi * wj;
            }
        }
        z
    }

    pub fn predict(&self, x: &[f64]) -> Result<ProbVector> {
        if x.len() != self.features {
            return Err(Error::ShapeError(format!(
                "logreg expects {} features, got {}",
                self.features,
                x.len()
            )));
        }
        if self.classes != NUM_GENRES {
            return Err(Error::ShapeError(format!(
                "logreg has {} classes, genre prediction needs {NUM_GENRES}",
                self.classes
            )));
        }
        ProbVector::from_slice(&softmax(&self.logits(x)))
    }
}

/// Fit by full-batch gradient descent until the gradient norm falls under
/// `grad_tolerance` or `max_iters` is reached. Deterministic (zero init).
pub fn train(rows: &[&[f64]], labels: &[usize], cfg: &LogRegConfig) -> Result<LogRegModel> {
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(Error::DataError("logreg needs matching, non-empty inputs".into()));
    }
    let features = rows[0].len();
    let classes = NUM_GENRES;
    let mut present = [false; NUM_GENRES];
    for (&label, row) in labels.iter().zip(rows) {
        if label >= classes {
            return Err(Error::LabelError(format!("label {label} out of range")));
        }
        if row.len() != features {
            return Err(Error::DataError("ragged logreg input rows".into()));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::DataError("non-finite logreg input".into()));
        }
        present[label] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::DataError("logreg needs at least two classes present".into()));
    }

    let mut model = LogRegModel {
        weights: vec![0.0; features * classes],
        bias: vec![0.0; classes],
        features,
        classes,
    };
    let n = rows.len() as f64;
    let mut gw = vec![0.0; features * classes];
    let mut gb = vec![0.0; classes];
    for _ in 0..cfg.max_iters {
        gw.fill(0.0);
        gb.fill(0.0);
        for (row, &label) in rows.iter().zip(labels) {
            let mut p = softmax(&model.logits(row));
            p[label] -= 1.0;
            for (i, &xi) in row.iter().enumerate() {
                let grow = &mut gw[i * classes..(i + 1) * classes];
                for (g, &pj) in grow.iter_mut().zip(&p) {
                    *g += xi * pj;
                }
            }
            for (g, &pj) in gb.iter_mut().zip(&p) {
                *g += pj;
            }
        }
        let mut norm_sq = 0.0;
        for (g, w) in gw.iter_mut().zip(&model.weights) {
            *g = *g / n + 2.0 * cfg.l2 * w;
            norm_sq += *g * *g;
        }
        for g in gb.iter_mut() {
            *g /= n;
            norm_sq += *g * *g;
        }
        if norm_sq.sqrt() < cfg.grad_tolerance {
            break;
        }
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= cfg.learning_rate * g;
        }
        for (b, g) in model.bias.iter_mut().zip(&gb) {
            *b -= cfg.learning_rate * g;
        }
        if model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::DivergenceError("logistic regression diverged".into()));
        }
    }
    Ok(model)
}

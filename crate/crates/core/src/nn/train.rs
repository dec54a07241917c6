//! Minibatch training with Adam, L1/L2 regularization, inverted dropout, and
//! early stopping on a held-out validation slice.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::softmax_cross_entropy;
use crate::nn::model::{ModelKind, Net};
use crate::rng::component_rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l1: f64,
    pub l2: f64,
    /// Stop after this many epochs without a validation-loss improvement.
    /// `usize::MAX` disables early stopping.
    pub early_stop_patience: usize,
    /// Fraction of the dataset held out (stratified) to monitor early
    /// stopping. Classes with a single sample stay in the training part.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            l1: 0.0,
            l2: 1e-5,
            early_stop_patience: 5,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(Error::InvalidConfig(
                "epochs, batch_size and early_stop_patience must be positive".into(),
            ));
        }
        if self.l1 < 0.0 || self.l2 < 0.0 {
            return Err(Error::InvalidConfig("l1/l2 must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig("validation_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    m: Net,
    v: Net,
    t: u64,
}

impl Adam {
    fn new(kind: &ModelKind) -> Result<Self> {
        Ok(Self { m: Net::zeros(kind)?, v: Net::zeros(kind)?, t: 0 })
    }

    fn step(&mut self, net: &mut Net, grads: &Net, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        let g_slices: Vec<&[f64]> = grads.params().into_iter().map(|p| p.data).collect();
        let mut m_slices = self.m.params_mut();
        let mut v_slices = self.v.params_mut();
        for ((p, g), (m, v)) in net
            .params_mut()
            .into_iter()
            .zip(g_slices)
            .zip(m_slices.iter_mut().zip(v_slices.iter_mut()))
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

fn zero_net(net: &mut Net) {
    for s in net.params_mut() {
        s.fill(0.0);
    }
}

/// Stratified index split: per class, `validation_fraction` rounded to the
/// nearest count (at least 1 when the class has >= 2 samples).
fn validation_split(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = component_rng(seed, "val-split");
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (_, mut idxs) in by_class {
        idxs.shuffle(&mut rng);
        let mut n_val = ((idxs.len() as f64) * fraction).round() as usize;
        if fraction > 0.0 && n_val == 0 && idxs.len() >= 2 {
            n_val = 1;
        }
        if n_val >= idxs.len() {
            n_val = idxs.len() - 1;
        }
        val.extend_from_slice(&idxs[..n_val]);
        train.extend_from_slice(&idxs[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn evaluate(net: &Net, data: &[(Tensor, usize)], idxs: &[usize]) -> Result<(f64, f64)> {
    if idxs.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for &i in idxs {
        let (x, label) = &data[i];
        let (logits, _) = net.forward_train(x, None)?;
        let (l, _) = softmax_cross_entropy(&logits, *label)?;
        loss += l;
        let pred = argmax(&logits);
        if pred == *label {
            correct += 1;
        }
    }
    Ok((loss / idxs.len() as f64, correct as f64 / idxs.len() as f64))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Regularization penalty added to the reported loss and its gradient
/// contribution (weights only, never biases).
fn add_regularization(net: &Net, grads: &mut Net, l1: f64, l2: f64) -> f64 {
    if l1 == 0.0 && l2 == 0.0 {
        return 0.0;
    }
    let mut penalty = 0.0;
    let views = net.params();
    let mut g_slices = grads.params_mut();
    for (view, g) in views.iter().zip(g_slices.iter_mut()) {
        if !view.is_weight {
            continue;
        }
        for (gi, &wi) in g.iter_mut().zip(view.data) {
            penalty += l1 * wi.abs() + l2 * wi * wi;
            *gi += l1 * wi.signum() + 2.0 * l2 * wi;
        }
    }
    penalty
}

/// Train a network of the given architecture on `(input, label)` pairs.
///
/// Deterministic in `cfg.seed`: weight init, the validation split, batch
/// order, and dropout all derive from it. Returns the parameters of the best
/// validation epoch and the per-epoch history.
pub fn train(kind: &ModelKind, data: &[(Tensor, usize)], cfg: &TrainConfig) -> Result<(Net, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::DataError("training dataset is empty".into()));
    }
    let classes = match kind {
        ModelKind::Vocal(c) => c.classes,
        ModelKind::Accomp(c) => c.classes,
        ModelKind::DenseMeta(c) => c.classes,
    };
    for (_, label) in data {
        if *label >= classes {
            return Err(Error::LabelError(format!("label {label} out of range 0..{classes}")));
        }
    }
    let labels: Vec<usize> = data.iter().map(|(_, l)| *l).collect();
    let (train_idx, val_idx) = validation_split(&labels, cfg.validation_fraction, cfg.seed);

    let mut net = Net::init(kind, cfg.seed)?;
    let mut grads = Net::zeros(kind)?;
    let mut adam = Adam::new(kind)?;
    let mut dropout_rng = component_rng(cfg.seed, "dropout");
    let mut shuffle_rng = component_rng(cfg.seed, "shuffle");

    let mut history = TrainHistory::default();
    let mut best_net = net.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;

    let mut order: Vec<usize> = train_idx.clone();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            zero_net(&mut grads);
            let mut batch_loss = 0.0;
            for &i in batch {
                let (x, label) = &data[i];
                let (logits, cache) = net.forward_train(x, Some(&mut dropout_rng))?;
                let (loss, dlogits) = softmax_cross_entropy(&logits, *label)?;
                batch_loss += loss;
                if argmax(&logits) == *label {
                    correct += 1;
                }
                net.backward(&cache, &dlogits, &mut grads)?;
            }
            // Average data gradients over the batch, then add regularization.
            let scale = 1.0 / batch.len() as f64;
            for g in grads.params_mut() {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            batch_loss = batch_loss * scale + add_regularization(&net, &mut grads, cfg.l1, cfg.l2);
            if !batch_loss.is_finite() {
                return Err(Error::DivergenceError(format!(
                    "non-finite loss at epoch {epoch}"
                )));
            }
            epoch_loss += batch_loss * batch.len() as f64;
            adam.step(&mut net, &grads, cfg.learning_rate);
        }
        let train_loss = epoch_loss / order.len().max(1) as f64;
        let train_accuracy = correct as f64 / order.len().max(1) as f64;
        let (val_loss, val_accuracy) = evaluate(&net, data, &val_idx)?;
        // No validation slice: fall back to monitoring the training loss.
        let monitored = if val_loss.is_nan() { train_loss } else { val_loss };
        if !monitored.is_finite() {
            return Err(Error::DivergenceError(format!("non-finite loss at epoch {epoch}")));
        }
        history.epochs.push(EpochStats { epoch, train_loss, train_accuracy, val_loss, val_accuracy });
        if monitored < best_val {
            best_val = monitored;
            best_net = net.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    history.best_epoch = best_epoch;
    Ok((best_net, history))
}

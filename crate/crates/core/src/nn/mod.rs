//! From-scratch tensor layers, the two base classifiers, and their training
//! loop. Gradients are hand-derived per layer and verified against central
//! finite differences in the test suites.

pub mod layers;
pub mod lstm;
pub mod model;
pub mod serialize;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::MfccMatrix;

pub use layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2d_backward,
    maxpool2d_forward, softmax, softmax_cross_entropy,
};
pub use lstm::{bilstm_backward, bilstm_forward, BiLstmLayer, LstmDirParams};
pub use model::{AccompNetConfig, DenseNetConfig, ModelKind, Net, VocalNetConfig};
pub use serialize::{load_model, save_model, ModelManifest};
pub use train::{train, EpochStats, TrainConfig, TrainHistory};

/// Number of genre classes.
pub const NUM_GENRES: usize = 10;

/// A 10-way probability distribution over genres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(pub [f64; NUM_GENRES]);

impl ProbVector {
    /// Validate entries in [0, 1] summing to 1 within 1e-9.
    pub fn try_new(probs: [f64; NUM_GENRES]) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::DataError("probabilities outside [0, 1]".into()));
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::DataError(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn from_slice(probs: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_GENRES] = probs
            .try_into()
            .map_err(|_| Error::ShapeError(format!("expected {NUM_GENRES} probabilities, got {}", probs.len())))?;
        Self::try_new(arr)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

fn forward_branch(mfcc: &MfccMatrix, net: &Net) -> Result<ProbVector> {
    if net.classes() != NUM_GENRES {
        return Err(Error::ShapeError(format!(
            "genre inference needs a {NUM_GENRES}-class net, got {}",
            net.classes()
        )));
    }
    let probs = net.infer(&mfcc.values)?;
    ProbVector::from_slice(&probs)
}

/// Vocal-stem inference (BiLSTM branch); dropout-free and deterministic.
pub fn forward_vocal(mfcc: &MfccMatrix, net: &Net) -> Result<ProbVector> {
    if !matches!(net, Net::Vocal(_)) {
        return Err(Error::ShapeError("forward_vocal needs a vocal-branch net".into()));
    }
    forward_branch(mfcc, net)
}

/// Accompaniment-stem inference (CNN branch); dropout-free and deterministic.
pub fn forward_accomp(mfcc: &MfccMatrix, net: &Net) -> Result<ProbVector> {
    if !matches!(net, Net::Accomp(_)) {
        return Err(Error::ShapeError("forward_accomp needs an accompaniment-branch net".into()));
    }
    forward_branch(mfcc, net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::lstm::*;
    use crate::rng::component_rng;
    use crate::tensor::Tensor;
    use rand::Rng;

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-2)
    }

    fn rand_vec(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    const EPS: f64 = 1e-5;

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = component_rng(21, "gc-dense");
        let (n_in, n_out) = (4, 3);
        let x = rand_vec(n_in, &mut rng);
        let w = Tensor::from_vec(&[n_in, n_out], rand_vec(n_in * n_out, &mut rng)).unwrap();
        let b = rand_vec(n_out, &mut rng);
        let r = rand_vec(n_out, &mut rng); // random projection defines the scalar loss
        let loss = |x: &[f64], w: &Tensor, b: &[f64]| -> f64 {
            dense_forward(x, w, b).unwrap().iter().zip(&r).map(|(y, ri)| y * ri).sum()
        };
        let mut dw = Tensor::zeros(&[n_in, n_out]);
        let mut db = vec![0.0; n_out];
        let dx = dense_backward(&x, &w, &r, &mut dw, &mut db);
        for i in 0..n_in {
            let mut xp = x.clone();
            xp[i] += EPS;
            let mut xm = x.clone();
            xm[i] -= EPS;
            let num = (loss(&xp, &w, &b) - loss(&xm, &w, &b)) / (2.0 * EPS);
            assert!(rel_err(dx[i], num) < 1e-6, "dx[{i}]: {} vs {num}", dx[i]);
        }
        for i in 0..n_in * n_out {
            let mut wp = w.clone();
            wp.data_mut()[i] += EPS;
            let mut wm = w.clone();
            wm.data_mut()[i] -= EPS;
            let num = (loss(&x, &wp, &b) - loss(&x, &wm, &b)) / (2.0 * EPS);
            assert!(rel_err(dw.data()[i], num) < 1e-6);
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = component_rng(22, "gc-conv");
        let x = Tensor::from_vec(&[2, 5, 5], rand_vec(50, &mut rng)).unwrap();
        let k = Tensor::from_vec(&[3, 2, 3, 3], rand_vec(54, &mut rng)).unwrap();
        let b = rand_vec(3, &mut rng);
        let r = Tensor::from_vec(&[3, 5, 5], rand_vec(75, &mut rng)).unwrap();
        let loss = |x: &Tensor, k: &Tensor, b: &[f64]| -> f64 {
            conv2d_forward(x, k, b)
                .unwrap()
                .iter()
                .zip(r.iter())
                .map(|(y, ri)| y * ri)
                .sum()
        };
        let mut dk = Tensor::zeros(&[3, 2, 3, 3]);
        let mut db = vec![0.0; 3];
        let dx = conv2d_backward(&x, &k, &r, &mut dk, &mut db);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += EPS;
            let mut xm = x.clone();
            xm.data_mut()[i] -= EPS;
            let num = (loss(&xp, &k, &b) - loss(&xm, &k, &b)) / (2.0 * EPS);
            assert!(rel_err(dx.data()[i], num) < 1e-6);
        }
        for i in 0..k.len() {
            let mut kp = k.clone();
            kp.data_mut()[i] += EPS;
            let mut km = k.clone();
            km.data_mut()[i] -= EPS;
            let num = (loss(&x, &kp, &b) - loss(&x, &km, &b)) / (2.0 * EPS);
            assert!(rel_err(dk.data()[i], num) < 1e-6);
        }
        for i in 0..b.len() {
            let mut bp = b.clone();
            bp[i] += EPS;
            let mut bm = b.clone();
            bm[i] -= EPS;
            let num = (loss(&x, &k, &bp) - loss(&x, &k, &bm)) / (2.0 * EPS);
            assert!(rel_err(db[i], num) < 1e-6);
        }
    }

    #[test]
    fn bilstm_gradients_match_finite_differences() {
        let mut rng = component_rng(23, "gc-lstm");
        let (t_len, feat, hidden) = (5, 3, 4);
        let seq = Tensor::from_vec(&[t_len, feat], rand_vec(t_len * feat, &mut rng)).unwrap();
        let mut layer = BiLstmLayer {
            fwd: LstmDirParams::zeros(feat, hidden),
            bwd: LstmDirParams::zeros(feat, hidden),
        };
        for dir in [&mut layer.fwd, &mut layer.bwd] {
            for v in dir.w_x.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
            for v in dir.w_h.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
            for v in dir.b.iter_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let r = Tensor::from_vec(&[t_len, 2 * hidden], rand_vec(t_len * 2 * hidden, &mut rng)).unwrap();
        let loss = |seq: &Tensor, layer: &BiLstmLayer| -> f64 {
            let (out, _) = bilstm_forward(seq, layer).unwrap();
            out.iter().zip(r.iter()).map(|(y, ri)| y * ri).sum()
        };
        let mut grads = BiLstmLayer {
            fwd: LstmDirParams::zeros(feat, hidden),
            bwd: LstmDirParams::zeros(feat, hidden),
        };
        let (_, cache) = bilstm_forward(&seq, &layer).unwrap();
        let d_seq = bilstm_backward(&seq, &layer, &cache, &r, &mut grads);

        let mut max_rel: f64 = 0.0;
        for i in 0..seq.len() {
            let mut sp = seq.clone();
            sp.data_mut()[i] += EPS;
            let mut sm = seq.clone();
            sm.data_mut()[i] -= EPS;
            let num = (loss(&sp, &layer) - loss(&sm, &layer)) / (2.0 * EPS);
            max_rel = max_rel.max(rel_err(d_seq.data()[i], num));
        }
        // Parameter gradients, forward direction w_x as representative plus
        // biases of both directions.
        for i in 0..layer.fwd.w_x.len() {
            let mut lp = layer.clone();
            lp.fwd.w_x.data_mut()[i] += EPS;
            let mut lm = layer.clone();
            lm.fwd.w_x.data_mut()[i] -= EPS;
            let num = (loss(&seq, &lp) - loss(&seq, &lm)) / (2.0 * EPS);
            max_rel = max_rel.max(rel_err(grads.fwd.w_x.data()[i], num));
        }
        for i in 0..layer.bwd.b.len() {
            let mut lp = layer.clone();
            lp.bwd.b[i] += EPS;
            let mut lm = layer.clone();
            lm.bwd.b[i] -= EPS;
            let num = (loss(&seq, &lp) - loss(&seq, &lm)) / (2.0 * EPS);
            max_rel = max_rel.max(rel_err(grads.bwd.b[i], num));
        }
        assert!(max_rel < 1e-5, "max rel err {max_rel}");
    }

    #[test]
    fn softmax_ce_gradient_tight() {
        let mut rng = component_rng(24, "gc-smce");
        let logits = rand_vec(10, &mut rng);
        let (_, d) = softmax_cross_entropy(&logits, 4).unwrap();
        for i in 0..10 {
            let mut lp = logits.clone();
            lp[i] += EPS;
            let mut lm = logits.clone();
            lm[i] -= EPS;
            let fp = softmax_cross_entropy(&lp, 4).unwrap().0;
            let fm = softmax_cross_entropy(&lm, 4).unwrap().0;
            let num = (fp - fm) / (2.0 * EPS);
            let rel = (d[i] - num).abs() / d[i].abs().max(num.abs()).max(1e-2);
            assert!(rel < 1e-8, "dlogits[{i}] rel {rel}");
        }
    }

    fn small_vocal_kind() -> ModelKind {
        ModelKind::Vocal(VocalNetConfig {
            lstm_layers: 2,
            hidden_per_direction: 6,
            dense_sizes: vec![12, 8],
            classes: 10,
            dropout_rate: 0.2,
            input_frames: 12,
            input_features: 7,
        })
    }

    fn small_accomp_kind() -> ModelKind {
        ModelKind::Accomp(AccompNetConfig {
            conv_channels: vec![4, 4],
            dense_hidden: 8,
            classes: 10,
            dropout_rate: 0.2,
            input_height: 12,
            input_width: 16,
        })
    }

    #[test]
    fn branch_outputs_are_valid_and_deterministic() {
        let mut rng = component_rng(31, "fw");
        for (kind, shape) in [(small_vocal_kind(), [7, 12]), (small_accomp_kind(), [12, 16])] {
            let net = Net::init(&kind, 8).unwrap();
            let mfcc = MfccMatrix {
                values: Tensor::from_vec(&shape, rand_vec(shape[0] * shape[1], &mut rng)).unwrap(),
                segment_id: "t".into(),
            };
            let p1 = match &net {
                Net::Vocal(_) => forward_vocal(&mfcc, &net).unwrap(),
                _ => forward_accomp(&mfcc, &net).unwrap(),
            };
            let sum: f64 = p1.0.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(p1.0.iter().all(|&p| (0.0..=1.0).contains(&p)));
            let p2 = net.infer(&mfcc.values).unwrap();
            assert_eq!(&p1.0[..], &p2[..]);
        }
    }

    #[test]
    fn permuting_output_units_permutes_probabilities() {
        let mut rng = component_rng(32, "perm");
        let kind = small_accomp_kind();
        let mut net = Net::init(&kind, 9).unwrap();
        let mfcc = Tensor::from_vec(&[12, 16], rand_vec(12 * 16, &mut rng)).unwrap();
        let before = net.infer(&mfcc).unwrap();
        // Rotate the output units by 3.
        let perm: Vec<usize> = (0..10).map(|i| (i + 3) % 10).collect();
        if let Net::Accomp(n) = &mut net {
            let w = n.out.w.clone();
            let b = n.out.b.clone();
            let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
            for i in 0..n_in {
                for j in 0..n_out {
                    n.out.w.set2(i, perm[j], w.at2(i, j));
                }
            }
            for j in 0..n_out {
                n.out.b[perm[j]] = b[j];
            }
        }
        let after = net.infer(&mfcc).unwrap();
        for j in 0..10 {
            assert!((after[perm[j]] - before[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_branch_rejected() {
        let net = Net::init(&small_vocal_kind(), 1).unwrap();
        let mfcc = MfccMatrix { values: Tensor::zeros(&[7, 12]), segment_id: "x".into() };
        assert!(forward_vocal(&mfcc, &net).is_ok());
        assert!(matches!(forward_accomp(&mfcc, &net), Err(Error::ShapeError(_))));
    }

    #[test]
    fn probvector_invariants() {
        let mut p = [0.1; 10];
        assert!(ProbVector::try_new(p).is_ok());
        p[0] = 0.2;
        assert!(ProbVector::try_new(p).is_err());
        let q = [-0.1, 1.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(ProbVector::try_new(q).is_err());
    }

    #[test]
    fn training_nets_overfit_tiny_mfcc_set() {
        // Capacity sanity for both architectures on a 2-class toy problem.
        let mut rng = component_rng(33, "tiny-set");
        for (kind, shape) in [(small_vocal_kind(), [7usize, 12usize]), (small_accomp_kind(), [12, 16])] {
            let data: Vec<(Tensor, usize)> = (0..20)
                .map(|i| {
                    let label = i % 2;
                    let bias = if label == 0 { -0.8 } else { 0.8 };
                    let v: Vec<f64> = (0..shape[0] * shape[1])
                        .map(|_| bias + rng.random_range(-0.2..0.2))
                        .collect();
                    (Tensor::from_vec(&shape, v).unwrap(), label)
                })
                .collect();
            let cfg = TrainConfig {
                learning_rate: 0.01,
                epochs: 60,
                batch_size: 5,
                early_stop_patience: usize::MAX,
                validation_fraction: 0.0,
                l2: 0.0,
                seed: 12,
                ..TrainConfig::default()
            };
            let (net, _) = train(&kind, &data, &cfg).unwrap();
            let correct = data
                .iter()
                .filter(|(x, l)| {
                    let probs = net.infer(x).unwrap();
                    probs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 == *l
                })
                .count();
            assert_eq!(correct, data.len(), "kind {kind:?} underfit");
        }
    }
}

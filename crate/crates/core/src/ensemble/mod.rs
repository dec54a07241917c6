//! Fusion of the two base-model probability vectors: per-genre weighted soft
//! voting with argmax decision, and stacking meta-models trained on a
//! disjoint split of the training data.

pub mod gbdt;
pub mod logreg;
pub mod meta_io;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::GENRE_NAMES;
use crate::error::{Error, Result};
use crate::nn::{self, DenseNetConfig, ModelKind, Net, ProbVector, TrainConfig, NUM_GENRES};
use crate::rng::component_rng;
use crate::tensor::Tensor;

pub use gbdt::{GbdtConfig, GbdtModel};
pub use logreg::{LogRegConfig, LogRegModel};

/// Per-genre voting weights for the two branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub w_a: [f64; NUM_GENRES],
    pub w_v: [f64; NUM_GENRES],
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self { w_a: [0.5; NUM_GENRES], w_v: [0.5; NUM_GENRES] }
    }
}

/// One genre's weight pair in the JSON table form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreWeights {
    pub accompaniment: f64,
    pub vocal: f64,
}

impl FusionWeights {
    pub fn validate(&self) -> Result<()> {
        for i in 0..NUM_GENRES {
            if self.w_a[i] < 0.0 || self.w_v[i] < 0.0 {
                return Err(Error::ConfigError(format!("negative fusion weight for genre {i}")));
            }
            if self.w_a[i] + self.w_v[i] <= 0.0 {
                return Err(Error::ConfigError(format!(
                    "genre {i} has zero total weight; one branch must count"
                )));
            }
        }
        Ok(())
    }

    /// Ignore one branch entirely.
    pub fn ignore_vocal() -> Self {
        Self { w_a: [1.0; NUM_GENRES], w_v: [0.0; NUM_GENRES] }
    }

    pub fn ignore_accomp() -> Self {
        Self { w_a: [0.0; NUM_GENRES], w_v: [1.0; NUM_GENRES] }
    }

    /// Build from a JSON table keyed by genre name; missing genres default to
    /// 0.5/0.5, unknown names are rejected.
    pub fn from_table(table: &BTreeMap<String, GenreWeights>) -> Result<Self> {
        let mut w = FusionWeights::default();
        for (name, gw) in table {
            let idx = GENRE_NAMES
                .iter()
                .position(|g| g == name)
                .ok_or_else(|| Error::ConfigError(format!("unknown genre '{name}' in weight table")))?;
            w.w_a[idx] = gw.accompaniment;
            w.w_v[idx] = gw.vocal;
        }
        w.validate()?;
        Ok(w)
    }
}

/// Weighted per-genre sum of the two probability vectors. The result is not
/// renormalized; the decision is by argmax.
pub fn soft_vote(x_a: &ProbVector, x_v: &ProbVector, w: &FusionWeights) -> Result<[f64; NUM_GENRES]> {
    w.validate()?;
    let mut y = [0.0; NUM_GENRES];
    for i in 0..NUM_GENRES {
        y[i] = x_a.0[i] * w.w_a[i] + x_v.0[i] * w.w_v[i];
    }
    Ok(y)
}

/// Plain average of the two vectors (soft voting at weights 0.5/0.5).
pub fn mean_average(x_a: &ProbVector, x_v: &ProbVector) -> [f64; NUM_GENRES] {
    let mut y = [0.0; NUM_GENRES];
    for i in 0..NUM_GENRES {
        y[i] = 0.5 * x_a.0[i] + 0.5 * x_v.0[i];
    }
    y
}

/// Argmax with ties broken by the lowest index.
pub fn decide(y: &[f64; NUM_GENRES]) -> usize {
    let mut best = 0;
    for (i, &v) in y.iter().enumerate() {
        if v > y[best] {
            best = i;
        }
    }
    best
}

/// Meta-model input: accompaniment probabilities first, vocal second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackInput(pub [f64; 2 * NUM_GENRES]);

impl StackInput {
    pub fn validate(&self) -> Result<()> {
        for v in &self.0 {
            if !v.is_finite() {
                return Err(Error::DataError("non-finite stack input".into()));
            }
        }
        for (name, half) in [("accompaniment", &self.0[..NUM_GENRES]), ("vocal", &self.0[NUM_GENRES..])] {
            let sum: f64 = half.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::DataError(format!("{name} half sums to {sum}, not 1")));
            }
        }
        Ok(())
    }

    pub fn split(&self) -> (ProbVector, ProbVector) {
        let mut a = [0.0; NUM_GENRES];
        let mut v = [0.0; NUM_GENRES];
        a.copy_from_slice(&self.0[..NUM_GENRES]);
        v.copy_from_slice(&self.0[NUM_GENRES..]);
        (ProbVector(a), ProbVector(v))
    }
}

/// Concatenate the two base predictions in the fixed order.
pub fn stack_features(x_a: &ProbVector, x_v: &ProbVector) -> StackInput {
    let mut out = [0.0; 2 * NUM_GENRES];
    out[..NUM_GENRES].copy_from_slice(&x_a.0);
    out[NUM_GENRES..].copy_from_slice(&x_v.0);
    StackInput(out)
}

/// Which meta-model a stacking ensemble trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaKind {
    LogReg,
    DenseNet,
    Gbdt,
}

/// A trained meta-model of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "meta_kind", rename_all = "snake_case")]
pub enum MetaModel {
    LogReg(LogRegModel),
    DenseNet(DenseMetaModel),
    Gbdt(GbdtModel),
}

/// Dense meta-network wrapper so the nn module's architecture can be stored
/// alongside the other meta kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMetaModel {
    pub config: DenseNetConfig,
    /// Flat parameters in declaration order.
    pub params: Vec<f64>,
}

impl DenseMetaModel {
    pub fn from_net(net: &Net) -> Result<Self> {
        let config = match net.kind() {
            ModelKind::DenseMeta(c) => c,
            _ => return Err(Error::ShapeError("dense meta-model needs a dense net".into())),
        };
        let params = net.params().iter().flat_map(|p| p.data.iter().copied()).collect();
        Ok(Self { config, params })
    }

    pub fn to_net(&self) -> Result<Net> {
        let mut net = Net::zeros(&ModelKind::DenseMeta(self.config.clone()))?;
        let mut offset = 0usize;
        for slice in net.params_mut() {
            if offset + slice.len() > self.params.len() {
                return Err(Error::DataError("dense meta-model parameter blob too short".into()));
            }
            slice.copy_from_slice(&self.params[offset..offset + slice.len()]);
            offset += slice.len();
        }
        if offset != self.params.len() {
            return Err(Error::DataError("dense meta-model parameter blob too long".into()));
        }
        Ok(net)
    }
}

impl MetaModel {
    pub fn predict(&self, input: &StackInput) -> Result<ProbVector> {
        input.validate()?;
        match self {
            MetaModel::LogReg(m) => m.predict(&input.0),
            MetaModel::DenseNet(m) => {
                let net = m.to_net()?;
                let probs = net.infer(&Tensor::from_vec(&[input.0.len()], input.0.to_vec())?)?;
                ProbVector::from_slice(&probs)
            }
            MetaModel::Gbdt(m) => m.predict(&input.0),
        }
    }
}

/// Hyperparameters for the three meta-model kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MetaTrainConfig {
    pub logreg: LogRegConfig,
    pub gbdt: GbdtConfig,
    pub dense: DenseNetConfig,
    pub dense_train: TrainConfig,
}

/// Train a meta-model of the requested kind on (stack input, label) pairs.
pub fn train_meta(
    kind: MetaKind,
    inputs: &[StackInput],
    labels: &[usize],
    cfg: &MetaTrainConfig,
    seed: u64,
) -> Result<MetaModel> {
    if inputs.len() != labels.len() || inputs.is_empty() {
        return Err(Error::DataError("meta training needs matching, non-empty inputs".into()));
    }
    for input in inputs {
        input.validate()?;
    }
    match kind {
        MetaKind::LogReg => {
            let rows: Vec<&[f64]> = inputs.iter().map(|s| &s.0[..]).collect();
            Ok(MetaModel::LogReg(logreg::train(&rows, labels, &cfg.logreg)?))
        }
        MetaKind::Gbdt => {
            let rows: Vec<&[f64]> = inputs.iter().map(|s| &s.0[..]).collect();
            Ok(MetaModel::Gbdt(gbdt::train(&rows, labels, &cfg.gbdt)?))
        }
        MetaKind::DenseNet => {
            let data: Vec<(Tensor, usize)> = inputs
                .iter()
                .zip(labels)
                .map(|(s, &l)| Ok((Tensor::from_vec(&[s.0.len()], s.0.to_vec())?, l)))
                .collect::<Result<_>>()?;
            let dense_cfg = DenseNetConfig { input: 2 * NUM_GENRES, ..cfg.dense.clone() };
            let train_cfg = TrainConfig { seed, ..cfg.dense_train.clone() };
            let (net, _) = nn::train(&ModelKind::DenseMeta(dense_cfg), &data, &train_cfg)?;
            Ok(MetaModel::DenseNet(DenseMetaModel::from_net(&net)?))
        }
    }
}

/// Base predictors feeding the stacker: anything that maps a sample to the
/// two branch probability vectors.
pub trait BasePredictor<S> {
    fn predict_pair(&self, sample: &S) -> Result<(ProbVector, ProbVector)>;
}

impl<S, F> BasePredictor<S> for F
where
    F: Fn(&S) -> Result<(ProbVector, ProbVector)>,
{
    fn predict_pair(&self, sample: &S) -> Result<(ProbVector, ProbVector)> {
        self(sample)
    }
}

/// Everything the stacking fit produces.
pub struct StackingFit<B> {
    pub base: B,
    pub meta: MetaModel,
    /// Sample indices of the two disjoint halves (A trains the bases, B the
    /// meta-model).
    pub split_a: Vec<usize>,
    pub split_b: Vec<usize>,
}

/// Stratified two-way split of sample indices by label; `ratio` is the A
/// share. Errors if any present class ends up absent from either side.
pub fn stratified_two_way(labels: &[usize], ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::ConfigError(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = component_rng(seed, "stack-split");
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (class, mut idxs) in by_class {
        idxs.shuffle(&mut rng);
        let n_a = ((idxs.len() as f64) * ratio).round() as usize;
        if n_a == 0 || n_a == idxs.len() {
            return Err(Error::StratificationError(format!(
                "class {class} has {} samples; both splits need at least one",
                idxs.len()
            )));
        }
        a.extend_from_slice(&idxs[..n_a]);
        b.extend_from_slice(&idxs[n_a..]);
    }
    a.sort_unstable();
    b.sort_unstable();
    Ok((a, b))
}

/// The stacking protocol: split the training samples into disjoint A and B,
/// train the base models on A, predict B with them frozen, and train the
/// meta-model on those predictions.
pub fn fit_stacking<S, B, F>(
    samples: &[(S, usize)],
    train_bases: F,
    meta_kind: MetaKind,
    meta_cfg: &MetaTrainConfig,
    split_ratio: f64,
    seed: u64,
) -> Result<StackingFit<B>>
where
    B: BasePredictor<S>,
    F: FnOnce(&[&(S, usize)]) -> Result<B>,
{
    if samples.is_empty() {
        return Err(Error::DataError("stacking needs a non-empty training set".into()));
    }
    let labels: Vec<usize> = samples.iter().map(|(_, l)| *l).collect();
    let (split_a, split_b) = stratified_two_way(&labels, split_ratio, seed)?;
    debug_assert!(split_a.iter().all(|i| !split_b.contains(i)), "A/B leak");

    let part_a: Vec<&(S, usize)> = split_a.iter().map(|&i| &samples[i]).collect();
    let base = train_bases(&part_a)?;

    let mut inputs = Vec::with_capacity(split_b.len());
    let mut meta_labels = Vec::with_capacity(split_b.len());
    for &i in &split_b {
        let (sample, label) = &samples[i];
        let (x_a, x_v) = base.predict_pair(sample)?;
        inputs.push(stack_features(&x_a, &x_v));
        meta_labels.push(*label);
    }
    let meta = train_meta(meta_kind, &inputs, &meta_labels, meta_cfg, seed)?;
    Ok(StackingFit { base, meta, split_a, split_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn onehot(i: usize) -> ProbVector {
        let mut p = [0.0; NUM_GENRES];
        p[i] = 1.0;
        ProbVector(p)
    }

    #[test]
    fn mean_case_matches_soft_vote_at_half_weights() {
        let y = soft_vote(&onehot(0), &onehot(1), &FusionWeights::default()).unwrap();
        assert_eq!(y[0], 0.5);
        assert_eq!(y[1], 0.5);
        assert!(y[2..].iter().all(|&v| v == 0.0));
        assert_eq!(y, mean_average(&onehot(0), &onehot(1)));
    }

    #[test]
    fn zero_vocal_weight_reduces_to_accompaniment() {
        let x_a = ProbVector([0.05, 0.6, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.0, 0.05]);
        let x_v = onehot(7);
        let y = soft_vote(&x_a, &x_v, &FusionWeights::ignore_vocal()).unwrap();
        assert_eq!(decide(&y), x_a.argmax());
    }

    #[test]
    fn per_genre_zero_weight_mutes_one_coordinate() {
        // Vocal weight zeroed for genre 1 only: a vocal vote peaked there no
        // longer counts, so the accompaniment's choice wins.
        let mut w = FusionWeights::default();
        w.w_v[1] = 0.0;
        let x_v = onehot(1);
        let x_a = ProbVector([0.1, 0.0, 0.0, 0.0, 0.0, 0.4, 0.1, 0.1, 0.1, 0.2]);
        let y = soft_vote(&x_a, &x_v, &w).unwrap();
        assert_eq!(decide(&y), 5);
        assert_eq!(y[1], 0.0);
    }

    #[test]
    fn decide_tie_rules() {
        let mut y = [0.0; NUM_GENRES];
        y[1] = 0.9;
        y[0] = 0.05;
        assert_eq!(decide(&y), 1);
        let mut tie = [0.0; NUM_GENRES];
        tie[2] = 0.5;
        tie[7] = 0.5;
        assert_eq!(decide(&tie), 2);
        assert_eq!(decide(&[0.1; NUM_GENRES]), 0);
    }

    #[test]
    fn stack_features_roundtrip() {
        let x_a = onehot(0);
        let x_v = onehot(9);
        let s = stack_features(&x_a, &x_v);
        assert_eq!(s.0.len(), 20);
        assert_eq!(s.0[0], 1.0);
        assert_eq!(s.0[19], 1.0);
        s.validate().unwrap();
        let (a, v) = s.split();
        assert_eq!(a, x_a);
        assert_eq!(v, x_v);
    }

    #[test]
    fn weight_invariant_enforced() {
        let w = FusionWeights { w_a: [0.0; NUM_GENRES], w_v: [0.0; NUM_GENRES] };
        assert!(matches!(soft_vote(&onehot(0), &onehot(1), &w), Err(Error::ConfigError(_))));
    }

    #[test]
    fn weight_table_parsing() {
        let mut table = BTreeMap::new();
        table.insert("classical".to_string(), GenreWeights { accompaniment: 1.0, vocal: 0.0 });
        let w = FusionWeights::from_table(&table).unwrap();
        assert_eq!(w.w_v[1], 0.0); // classical is genre 1
        assert_eq!(w.w_a[1], 1.0);
        assert_eq!(w.w_a[0], 0.5);

        let mut bad = BTreeMap::new();
        bad.insert("polka".to_string(), GenreWeights { accompaniment: 1.0, vocal: 0.0 });
        assert!(FusionWeights::from_table(&bad).is_err());
    }

    #[test]
    fn stratified_split_errors() {
        assert!(matches!(
            stratified_two_way(&[0, 0, 1, 1], 1.5, 0),
            Err(Error::ConfigError(_))
        ));
        // A single-sample class cannot appear on both sides.
        assert!(matches!(
            stratified_two_way(&[0, 0, 1], 0.5, 0),
            Err(Error::StratificationError(_))
        ));
    }

    #[test]
    fn stratified_split_deterministic_and_disjoint() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let (a1, b1) = stratified_two_way(&labels, 0.8, 9).unwrap();
        let (a2, b2) = stratified_two_way(&labels, 0.8, 9).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert!(a1.iter().all(|i| !b1.contains(i)));
        assert_eq!(a1.len() + b1.len(), 40);
        assert_eq!(a1.len(), 32);
    }

    proptest! {
        #[test]
        fn scaling_both_weight_vectors_preserves_decision(
            seed in 0u64..500,
            alpha in 0.01f64..100.0,
        ) {
            let mut rng = component_rng(seed, "prop-scale");
            use rand::Rng;
            let mut rand_prob = || {
                let mut p = [0.0f64; NUM_GENRES];
                let mut sum = 0.0;
                for v in p.iter_mut() {
                    *v = rng.random_range(0.0..1.0);
                    sum += *v;
                }
                for v in p.iter_mut() {
                    *v /= sum;
                }
                ProbVector(p)
            };
            let x_a = rand_prob();
            let x_v = rand_prob();
            let mut w = FusionWeights::default();
            for i in 0..NUM_GENRES {
                w.w_a[i] = rng.random_range(0.0..1.0) + 1e-3;
                w.w_v[i] = rng.random_range(0.0..1.0) + 1e-3;
            }
            let mut scaled = w.clone();
            for i in 0..NUM_GENRES {
                scaled.w_a[i] *= alpha;
                scaled.w_v[i] *= alpha;
            }
            let d1 = decide(&soft_vote(&x_a, &x_v, &w).unwrap());
            let d2 = decide(&soft_vote(&x_a, &x_v, &scaled).unwrap());
            prop_assert_eq!(d1, d2);
        }
    }
}

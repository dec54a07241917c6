//! The two base classifiers (BiLSTM over vocal MFCCs, CNN over accompaniment
//! MFCCs) and the small dense net reused by the stacking meta-model, plus
//! parameter enumeration for the optimizer and serializer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout_backward,
    dropout_forward, maxpool2d_backward, maxpool2d_forward, relu, relu_backward, softmax,
};
use crate::nn::lstm::{bilstm_backward, bilstm_forward, BiLstmCache, BiLstmLayer, LstmDirParams};
use crate::rng::component_rng;
use crate::tensor::Tensor;

/// Vocal-branch network: stacked bidirectional LSTM layers, a ReLU dense
/// stack, and a softmax output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocalNetConfig {
    pub lstm_layers: usize,
    pub hidden_per_direction: usize,
    pub dense_sizes: Vec<usize>,
    pub classes: usize,
    pub dropout_rate: f64,
    pub input_frames: usize,
    pub input_features: usize,
}

impl Default for VocalNetConfig {
    fn default() -> Self {
        Self {
            lstm_layers: 2,
            hidden_per_direction: 256,
            dense_sizes: vec![256, 128, 32],
            classes: 10,
            dropout_rate: 0.3,
            input_frames: 132,
            input_features: 40,
        }
    }
}

/// Accompaniment-branch network: conv 3x3 / ReLU / 2x2 max-pool stages, one
/// hidden dense layer, softmax output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccompNetConfig {
    pub conv_channels: Vec<usize>,
    pub dense_hidden: usize,
    pub classes: usize,
    pub dropout_rate: f64,
    pub input_height: usize,
    pub input_width: usize,
}

impl Default for AccompNetConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![64, 32, 32, 16],
            dense_hidden: 64,
            classes: 10,
            dropout_rate: 0.3,
            input_height: 40,
            input_width: 132,
        }
    }
}

/// Plain dense classifier (used as the stacking meta-network).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenseNetConfig {
    pub input: usize,
    pub hidden_sizes: Vec<usize>,
    pub classes: usize,
    pub dropout_rate: f64,
}

impl Default for DenseNetConfig {
    fn default() -> Self {
        Self { input: 20, hidden_sizes: vec![32], classes: 10, dropout_rate: 0.0 }
    }
}

/// Which architecture to build/train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Vocal(VocalNetConfig),
    Accomp(AccompNetConfig),
    DenseMeta(DenseNetConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Tensor,
    pub b: Vec<f64>,
}

impl DenseLayer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { w: Tensor::zeros(&[n_in, n_out]), b: vec![0.0; n_out] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// Kernels shaped `[out_channels, in_channels, 3, 3]`.
    pub k: Tensor,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocalNet {
    pub cfg: VocalNetConfig,
    pub lstm: Vec<BiLstmLayer>,
    pub dense: Vec<DenseLayer>,
    pub out: DenseLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccompNet {
    pub cfg: AccompNetConfig,
    pub convs: Vec<ConvLayer>,
    pub hidden: DenseLayer,
    pub out: DenseLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub cfg: DenseNetConfig,
    pub hidden: Vec<DenseLayer>,
    pub out: DenseLayer,
}

/// A trainable network of any supported architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum Net {
    Vocal(VocalNet),
    Accomp(AccompNet),
    Dense(DenseNet),
}

/// Borrowed view of one parameter tensor, in declaration order.
pub struct ParamView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
    /// Weight matrices get L1/L2 regularization; biases do not.
    pub is_weight: bool,
}

fn glorot(rng: &mut ChaCha8Rng, data: &mut [f64], fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in data.iter_mut() {
        *v = rng.random_range(-limit..limit);
    }
}

impl VocalNet {
    fn zeros(cfg: &VocalNetConfig) -> Result<Self> {
        if cfg.lstm_layers == 0 || cfg.hidden_per_direction == 0 || cfg.classes == 0 {
            return Err(Error::InvalidConfig("vocal net sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&cfg.dropout_rate) {
            return Err(Error::InvalidConfig("dropout_rate must be in [0, 1)".into()));
        }
        let h = cfg.hidden_per_direction;
        let mut lstm = Vec::new();
        let mut width = cfg.input_features;
        for _ in 0..cfg.lstm_layers {
            lstm.push(BiLstmLayer {
                fwd: LstmDirParams::zeros(width, h),
                bwd: LstmDirParams::zeros(width, h),
            });
            width = 2 * h;
        }
        let mut dense = Vec::new();
        for &size in &cfg.dense_sizes {
            dense.push(DenseLayer::zeros(width, size));
            width = size;
        }
        Ok(Self { cfg: cfg.clone(), lstm, dense, out: DenseLayer::zeros(width, cfg.classes) })
    }
}

impl AccompNet {
    fn zeros(cfg: &AccompNetConfig) -> Result<Self> {
        if cfg.conv_channels.is_empty() || cfg.classes == 0 || cfg.dense_hidden == 0 {
            return Err(Error::InvalidConfig("accomp net sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&cfg.dropout_rate) {
            return Err(Error::InvalidConfig("dropout_rate must be in [0, 1)".into()));
        }
        let mut convs = Vec::new();
        let mut c_in = 1usize;
        let (mut h, mut w) = (cfg.input_height, cfg.input_width);
        for &oc in &cfg.conv_channels {
            convs.push(ConvLayer { k: Tensor::zeros(&[oc, c_in, 3, 3]), b: vec![0.0; oc] });
            c_in = oc;
            h /= 2;
            w /= 2;
            if h == 0 || w == 0 {
                return Err(Error::InvalidConfig(format!(
                    "input {}x{} too small for {} conv/pool stages",
                    cfg.input_height,
                    cfg.input_width,
                    cfg.conv_channels.len()
                )));
            }
        }
        let flat = c_in * h * w;
        Ok(Self {
            cfg: cfg.clone(),
            convs,
            hidden: DenseLayer::zeros(flat, cfg.dense_hidden),
            out: DenseLayer::zeros(cfg.dense_hidden, cfg.classes),
        })
    }
}

impl DenseNet {
    fn zeros(cfg: &DenseNetConfig) -> Result<Self> {
        if cfg.input == 0 || cfg.classes == 0 {
            return Err(Error::InvalidConfig("dense net sizes must be positive".into()));
        }
        let mut hidden = Vec::new();
        let mut width = cfg.input;
        for &size in &cfg.hidden_sizes {
            hidden.push(DenseLayer::zeros(width, size));
            width = size;
        }
        Ok(Self { cfg: cfg.clone(), hidden, out: DenseLayer::zeros(width, cfg.classes) })
    }
}

impl Net {
    /// Zero-parameter network of the requested architecture (gradient and
    /// optimizer-state buffers reuse this).
    pub fn zeros(kind: &ModelKind) -> Result<Net> {
        Ok(match kind {
            ModelKind::Vocal(c) => Net::Vocal(VocalNet::zeros(c)?),
            ModelKind::Accomp(c) => Net::Accomp(AccompNet::zeros(c)?),
            ModelKind::DenseMeta(c) => Net::Dense(DenseNet::zeros(c)?),
        })
    }

    /// Glorot-uniform initialization, deterministic in the seed.
    pub fn init(kind: &ModelKind, seed: u64) -> Result<Net> {
        let mut net = Net::zeros(kind)?;
        let mut rng = component_rng(seed, "weight-init");
        match &mut net {
            Net::Vocal(n) => {
                let h = n.cfg.hidden_per_direction;
                for layer in &mut n.lstm {
                    for dir in [&mut layer.fwd, &mut layer.bwd] {
                        let fan_in = dir.w_x.shape()[0];
                        glorot(&mut rng, dir.w_x.data_mut(), fan_in, 4 * h);
                        glorot(&mut rng, dir.w_h.data_mut(), h, 4 * h);
                        // Forget-gate bias starts at 1 so early training does
                        // not wash out the cell state.
                        for v in dir.b[h..2 * h].iter_mut() {
                            *v = 1.0;
                        }
                    }
                }
                for d in n.dense.iter_mut().chain(std::iter::once(&mut n.out)) {
                    let (fi, fo) = (d.w.shape()[0], d.w.shape()[1]);
                    glorot(&mut rng, d.w.data_mut(), fi, fo);
                }
            }
            Net::Accomp(n) => {
                for conv in &mut n.convs {
                    let (oc, ic) = (conv.k.shape()[0], conv.k.shape()[1]);
                    glorot(&mut rng, conv.k.data_mut(), ic * 9, oc * 9);
                }
                for d in [&mut n.hidden, &mut n.out] {
                    let (fi, fo) = (d.w.shape()[0], d.w.shape()[1]);
                    glorot(&mut rng, d.w.data_mut(), fi, fo);
                }
            }
            Net::Dense(n) => {
                for d in n.hidden.iter_mut().chain(std::iter::once(&mut n.out)) {
                    let (fi, fo) = (d.w.shape()[0], d.w.shape()[1]);
                    glorot(&mut rng, d.w.data_mut(), fi, fo);
                }
            }
        }
        Ok(net)
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Net::Vocal(n) => ModelKind::Vocal(n.cfg.clone()),
            Net::Accomp(n) => ModelKind::Accomp(n.cfg.clone()),
            Net::Dense(n) => ModelKind::DenseMeta(n.cfg.clone()),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Net::Vocal(n) => n.cfg.classes,
            Net::Accomp(n) => n.cfg.classes,
            Net::Dense(n) => n.cfg.classes,
        }
    }

    fn dropout_rate(&self) -> f64 {
        match self {
            Net::Vocal(n) => n.cfg.dropout_rate,
            Net::Accomp(n) => n.cfg.dropout_rate,
            Net::Dense(n) => n.cfg.dropout_rate,
        }
    }

    /// All parameter tensors in declaration order.
    pub fn params(&self) -> Vec<ParamView<'_>> {
        fn dense_views<'a>(out: &mut Vec<ParamView<'a>>, name: &str, d: &'a DenseLayer) {
            out.push(ParamView {
                name: format!("{name}.w"),
                shape: d.w.shape().to_vec(),
                data: d.w.data(),
                is_weight: true,
            });
            out.push(ParamView {
                name: format!("{name}.b"),
                shape: vec![d.b.len()],
                data: &d.b,
                is_weight: false,
            });
        }
        let mut out = Vec::new();
        match self {
            Net::Vocal(n) => {
                for (i, layer) in n.lstm.iter().enumerate() {
                    for (d, dir) in [(&layer.fwd, "fwd"), (&layer.bwd, "bwd")] {
                        out.push(ParamView {
                            name: format!("lstm{i}.{dir}.w_x"),
                            shape: d.w_x.shape().to_vec(),
                            data: d.w_x.data(),
                            is_weight: true,
                        });
                        out.push(ParamView {
                            name: format!("lstm{i}.{dir}.w_h"),
                            shape: d.w_h.shape().to_vec(),
                            data: d.w_h.data(),
                            is_weight: true,
                        });
                        out.push(ParamView {
                            name: format!("lstm{i}.{dir}.b"),
                            shape: vec![d.b.len()],
                            data: &d.b,
                            is_weight: false,
                        });
                    }
                }
                for (i, d) in n.dense.iter().enumerate() {
                    dense_views(&mut out, &format!("dense{i}"), d);
                }
                dense_views(&mut out, "out", &n.out);
            }
            Net::Accomp(n) => {
                for (i, c) in n.convs.iter().enumerate() {
                    out.push(ParamView {
                        name: format!("conv{i}.k"),
                        shape: c.k.shape().to_vec(),
                        data: c.k.data(),
                        is_weight: true,
                    });
                    out.push(ParamView {
                        name: format!("conv{i}.b"),
                        shape: vec![c.b.len()],
                        data: &c.b,
                        is_weight: false,
                    });
                }
                dense_views(&mut out, "hidden", &n.hidden);
                dense_views(&mut out, "out", &n.out);
            }
            Net::Dense(n) => {
                for (i, d) in n.hidden.iter().enumerate() {
                    dense_views(&mut out, &format!("hidden{i}"), d);
                }
                dense_views(&mut out, "out", &n.out);
            }
        }
        out
    }

    /// Mutable parameter slices in the same order as `params`.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        match self {
            Net::Vocal(n) => {
                for layer in &mut n.lstm {
                    for dir in [&mut layer.fwd, &mut layer.bwd] {
                        out.push(dir.w_x.data_mut());
                        out.push(dir.w_h.data_mut());
                        out.push(&mut dir.b);
                    }
                }
                for d in &mut n.dense {
                    out.push(d.w.data_mut());
                    out.push(&mut d.b);
                }
                out.push(n.out.w.data_mut());
                out.push(&mut n.out.b);
            }
            Net::Accomp(n) => {
                for c in &mut n.convs {
                    out.push(c.k.data_mut());
                    out.push(&mut c.b);
                }
                out.push(n.hidden.w.data_mut());
                out.push(&mut n.hidden.b);
                out.push(n.out.w.data_mut());
                out.push(&mut n.out.b);
            }
            Net::Dense(n) => {
                for d in &mut n.hidden {
                    out.push(d.w.data_mut());
                    out.push(&mut d.b);
                }
                out.push(n.out.w.data_mut());
                out.push(&mut n.out.b);
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    /// Training-mode forward: logits plus the cache needed for backward.
    /// Dropout is applied when `rng` is given.
    pub fn forward_train(&self, x: &Tensor, rng: Option<&mut ChaCha8Rng>) -> Result<(Vec<f64>, NetCache)> {
        let rate = self.dropout_rate();
        match self {
            Net::Vocal(n) => n.forward(x, rate, rng).map(|(l, c)| (l, NetCache::Vocal(c))),
            Net::Accomp(n) => n.forward(x, rate, rng).map(|(l, c)| (l, NetCache::Accomp(c))),
            Net::Dense(n) => n.forward(x, rate, rng).map(|(l, c)| (l, NetCache::Dense(c))),
        }
    }

    /// Inference: dropout-free probabilities.
    pub fn infer(&self, x: &Tensor) -> Result<Vec<f64>> {
        let (logits, _) = self.forward_train(x, None)?;
        Ok(softmax(&logits))
    }

    /// Accumulate gradients for one sample into `grads` (a zeroed clone of
    /// the same architecture).
    pub fn backward(&self, cache: &NetCache, dlogits: &[f64], grads: &mut Net) -> Result<()> {
        match (self, cache, grads) {
            (Net::Vocal(n), NetCache::Vocal(c), Net::Vocal(g)) => n.backward(c, dlogits, g),
            (Net::Accomp(n), NetCache::Accomp(c), Net::Accomp(g)) => n.backward(c, dlogits, g),
            (Net::Dense(n), NetCache::Dense(c), Net::Dense(g)) => n.backward(c, dlogits, g),
            _ => Err(Error::ShapeError("mismatched cache/gradient architecture".into())),
        }
    }
}

pub enum NetCache {
    Vocal(VocalCache),
    Accomp(AccompCache),
    Dense(DenseCache),
}

pub struct VocalCache {
    seq_inputs: Vec<Tensor>,
    lstm_caches: Vec<BiLstmCache>,
    lstm_masks: Vec<Vec<f64>>,
    dense_inputs: Vec<Vec<f64>>,
    dense_relu: Vec<Vec<f64>>,
    dense_masks: Vec<Vec<f64>>,
}

impl VocalNet {
    fn forward(
        &self,
        mfcc: &Tensor,
        rate: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<f64>, VocalCache)> {
        if mfcc.shape() != [self.cfg.input_features, self.cfg.input_frames] {
            return Err(Error::ShapeError(format!(
                "vocal net expects [{}, {}] MFCCs, got {:?}",
                self.cfg.input_features,
                self.cfg.input_frames,
                mfcc.shape()
            )));
        }
        let h = self.cfg.hidden_per_direction;
        let t_len = self.cfg.input_frames;
        // Frames become the sequence axis.
        let mut seq = mfcc.transpose2();
        let mut seq_inputs = Vec::new();
        let mut lstm_caches = Vec::new();
        let mut lstm_masks = Vec::new();
        for layer in &self.lstm {
            seq_inputs.push(seq.clone());
            let (mut out, cache) = bilstm_forward(&seq, layer)?;
            let mask = match rng.as_deref_mut() {
                Some(r) => dropout_forward(out.data_mut(), rate, r),
                None => vec![1.0; out.len()],
            };
            lstm_caches.push(cache);
            lstm_masks.push(mask);
            seq = out;
        }
        // Final states of both directions: forward half of the last frame,
        // backward half of the first.
        let mut feature = vec![0.0; 2 * h];
        feature[..h].copy_from_slice(&seq.row(t_len - 1)[..h]);
        feature[h..].copy_from_slice(&seq.row(0)[h..]);

        let mut x = feature;
        let mut dense_inputs = Vec::new();
        let mut dense_relu = Vec::new();
        let mut dense_masks = Vec::new();
        for d in &self.dense {
            dense_inputs.push(x.clone());
            let mut y = dense_forward(&x, &d.w, &d.b)?;
            relu(&mut y);
            dense_relu.push(y.clone());
            let mask = match rng.as_deref_mut() {
                Some(r) => dropout_forward(&mut y, rate, r),
                None => vec![1.0; y.len()],
            };
            dense_masks.push(mask);
            x = y;
        }
        let logits = dense_forward(&x, &self.out.w, &self.out.b)?;
        dense_inputs.push(x);
        Ok((logits, VocalCache {
            seq_inputs,
            lstm_caches,
            lstm_masks,
            dense_inputs,
            dense_relu,
            dense_masks,
        }))
    }

    fn backward(&self, cache: &VocalCache, dlogits: &[f64], grads: &mut VocalNet) -> Result<()> {
        let h = self.cfg.hidden_per_direction;
        let t_len = self.cfg.input_frames;
        let mut dy = dense_backward(
            cache.dense_inputs.last().unwrap(),
            &self.out.w,
            dlogits,
            &mut grads.out.w,
            &mut grads.out.b,
        );
        for i in (0..self.dense.len()).rev() {
            dropout_backward(&cache.dense_masks[i], &mut dy);
            relu_backward(&cache.dense_relu[i], &mut dy);
            let g = &mut grads.dense[i];
            dy = dense_backward(&cache.dense_inputs[i], &self.dense[i].w, &dy, &mut g.w, &mut g.b);
        }
        // Scatter the pooled-feature gradient back to the two frames it came
        // from.
        let mut d_seq = Tensor::zeros(&[t_len, 2 * h]);
        for j in 0..h {
            d_seq.set2(t_len - 1, j, dy[j]);
            d_seq.set2(0, h + j, dy[h + j]);
        }
        for i in (0..self.lstm.len()).rev() {
            dropout_backward(&cache.lstm_masks[i], d_seq.data_mut());
            d_seq = bilstm_backward(
                &cache.seq_inputs[i],
                &self.lstm[i],
                &cache.lstm_caches[i],
                &d_seq,
                &mut grads.lstm[i],
            );
        }
        Ok(())
    }
}

pub struct AccompCache {
    conv_inputs: Vec<Tensor>,
    relu_outputs: Vec<Tensor>,
    pool_args: Vec<Vec<usize>>,
    flat: Vec<f64>,
    hidden_relu: Vec<f64>,
    hidden_mask: Vec<f64>,
    hidden_out: Vec<f64>,
}

impl AccompNet {
    fn forward(
        &self,
        mfcc: &Tensor,
        rate: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<f64>, AccompCache)> {
        if mfcc.shape() != [self.cfg.input_height, self.cfg.input_width] {
            return Err(Error::ShapeError(format!(
                "accomp net expects [{}, {}] MFCCs, got {:?}",
                self.cfg.input_height,
                self.cfg.input_width,
                mfcc.shape()
            )));
        }
        let mut x = Tensor::from_vec(
            &[1, self.cfg.input_height, self.cfg.input_width],
            mfcc.data().to_vec(),
        )?;
        let mut conv_inputs = Vec::new();
        let mut relu_outputs = Vec::new();
        let mut pool_args = Vec::new();
        for conv in &self.convs {
            conv_inputs.push(x.clone());
            let mut y = conv2d_forward(&x, &conv.k, &conv.b)?;
            relu(y.data_mut());
            let (pooled, arg) = maxpool2d_forward(&y);
            relu_outputs.push(y);
            pool_args.push(arg);
            x = pooled;
        }
        let flat = x.data().to_vec();
        let mut hidden = dense_forward(&flat, &self.hidden.w, &self.hidden.b)?;
        relu(&mut hidden);
        let hidden_relu = hidden.clone();
        let mask = match rng.as_deref_mut() {
            Some(r) => dropout_forward(&mut hidden, rate, r),
            None => vec![1.0; hidden.len()],
        };
        let logits = dense_forward(&hidden, &self.out.w, &self.out.b)?;
        Ok((logits, AccompCache {
            conv_inputs,
            relu_outputs,
            pool_args,
            flat,
            hidden_relu,
            hidden_mask: mask,
            hidden_out: hidden,
        }))
    }

    fn backward(&self, cache: &AccompCache, dlogits: &[f64], grads: &mut AccompNet) -> Result<()> {
        let mut dy = dense_backward(
            &cache.hidden_out,
            &self.out.w,
            dlogits,
            &mut grads.out.w,
            &mut grads.out.b,
        );
        dropout_backward(&cache.hidden_mask, &mut dy);
        relu_backward(&cache.hidden_relu, &mut dy);
        let dflat = dense_backward(
            &cache.flat,
            &self.hidden.w,
            &dy,
            &mut grads.hidden.w,
            &mut grads.hidden.b,
        );
        let last_relu = cache.relu_outputs.last().unwrap();
        let pooled_shape = [
            last_relu.shape()[0],
            last_relu.shape()[1] / 2,
            last_relu.shape()[2] / 2,
        ];
        let mut d_pooled = Tensor::from_vec(&pooled_shape, dflat)?;
        for i in (0..self.convs.len()).rev() {
            let relu_out = &cache.relu_outputs[i];
            let mut d_conv = maxpool2d_backward(relu_out.shape(), &cache.pool_args[i], &d_pooled);
            for (d, &y) in d_conv.data_mut().iter_mut().zip(relu_out.data()) {
                if y <= 0.0 {
                    *d = 0.0;
                }
            }
            let g = &mut grads.convs[i];
            d_pooled = conv2d_backward(&cache.conv_inputs[i], &self.convs[i].k, &d_conv, &mut g.k, &mut g.b);
        }
        Ok(())
    }
}

pub struct DenseCache {
    inputs: Vec<Vec<f64>>,
    relu: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
}

impl DenseNet {
    fn forward(
        &self,
        input: &Tensor,
        rate: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<f64>, DenseCache)> {
        if input.len() != self.cfg.input {
            return Err(Error::ShapeError(format!(
                "dense net expects {} inputs, got {}",
                self.cfg.input,
                input.len()
            )));
        }
        let mut x = input.data().to_vec();
        let mut inputs = Vec::new();
        let mut relu_outs = Vec::new();
        let mut masks = Vec::new();
        for d in &self.hidden {
            inputs.push(x.clone());
            let mut y = dense_forward(&x, &d.w, &d.b)?;
            relu(&mut y);
            relu_outs.push(y.clone());
            let mask = match rng.as_deref_mut() {
                Some(r) => dropout_forward(&mut y, rate, r),
                None => vec![1.0; y.len()],
            };
            masks.push(mask);
            x = y;
        }
        let logits = dense_forward(&x, &self.out.w, &self.out.b)?;
        inputs.push(x);
        Ok((logits, DenseCache { inputs, relu: relu_outs, masks }))
    }

    fn backward(&self, cache: &DenseCache, dlogits: &[f64], grads: &mut DenseNet) -> Result<()> {
        let mut dy = dense_backward(
            cache.inputs.last().unwrap(),
            &self.out.w,
            dlogits,
            &mut grads.out.w,
            &mut grads.out.b,
        );
        for i in (0..self.hidden.len()).rev() {
            dropout_backward(&cache.masks[i], &mut dy);
            relu_backward(&cache.relu[i], &mut dy);
            let g = &mut grads.hidden[i];
            dy = dense_backward(&cache.inputs[i], &self.hidden[i].w, &dy, &mut g.w, &mut g.b);
        }
        Ok(())
    }
}
